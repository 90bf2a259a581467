"""Bit-string value type and substring/occurrence primitives.

All public indices are 1-based and ranges are inclusive on both ends.  A bit
string serializes as an ASCII string of '0'/'1' characters.
"""

from typing import NamedTuple, Optional

import numpy as np

from .errors import ParamError


class Bits:
    """Immutable 0/1 sequence backed by a read-only uint8 array.

    Supports lengths well past 2**24; equality, slicing and scans are O(n).
    """

    __slots__ = ("_a",)

    def __init__(self, data=()):
        if isinstance(data, Bits):
            self._a = data._a
            return
        if isinstance(data, str):
            if data:
                a = np.frombuffer(data.encode("ascii"), dtype=np.uint8) - ord("0")
            else:
                a = np.zeros(0, dtype=np.uint8)
        else:
            a = np.asarray(data, dtype=np.uint8)
            if a.ndim != 1:
                raise ParamError("bit data must be one-dimensional")
            a = a.copy()
        if a.size and (a > 1).any():
            raise ParamError("bit values must be 0 or 1")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def _wrap(cls, arr):
        """Wrap a uint8 array without copying. Caller must not mutate it."""
        out = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        arr.setflags(write=False)
        out._a = arr
        return out

    @property
    def arr(self):
        """Read-only uint8 view of the bits (0-based)."""
        return self._a

    def __len__(self):
        return int(self._a.size)

    def __eq__(self, other):
        if isinstance(other, Bits):
            return np.array_equal(self._a, other._a)
        return NotImplemented

    def __hash__(self):
        return hash((self._a.size, self._a.tobytes()))

    def __str__(self):
        return self._a.tobytes().translate(_TO_ASCII).decode("ascii")

    def __repr__(self):
        s = str(self)
        if len(s) > 64:
            s = s[:61] + "..."
        return f"Bits({s!r})"

    def __add__(self, other):
        if not isinstance(other, Bits):
            return NotImplemented
        return Bits._wrap(np.concatenate([self._a, other._a]))

    def bit(self, i):
        """Value at 1-based position i."""
        if not 1 <= i <= self._a.size:
            raise ParamError(f"index {i} out of range 1..{self._a.size}")
        return int(self._a[i - 1])

    def substring(self, a, b):
        """Bits at positions a..b inclusive (1-based)."""
        if not (1 <= a <= b <= self._a.size):
            raise ParamError(f"substring bounds {a}..{b} invalid for length {self._a.size}")
        return Bits._wrap(self._a[a - 1:b])

    def suffix(self, a):
        """Bits from position a to the end; a == len+1 gives the empty string."""
        if not 1 <= a <= self._a.size + 1:
            raise ParamError(f"suffix start {a} invalid for length {self._a.size}")
        return Bits._wrap(self._a[a - 1:])

    def reverse(self):
        return Bits._wrap(self._a[::-1])

    def max_run(self):
        """Length of the longest block of consecutive identical bits."""
        n = self._a.size
        if n == 0:
            raise ParamError("max_run of an empty string is undefined")
        if n == 1:
            return 1
        breaks = np.flatnonzero(np.diff(self._a) != 0)
        edges = np.concatenate([[-1], breaks, [n - 1]])
        return int(np.diff(edges).max())

    def count_ones(self):
        return int(self._a.sum())


_TO_ASCII = bytes((i + ord("0")) if i <= 1 else ord("?") for i in range(256))


def random_bits(n, rng):
    """Uniformly random bit string of length n."""
    if n < 0:
        raise ParamError("length must be nonnegative")
    return Bits._wrap(rng.integers(0, 2, size=int(n), dtype=np.uint8))


class Span(NamedTuple):
    """Inclusive 1-based index range."""
    lo: int
    hi: int


def find_occurrence(w: Bits, y: Bits, lo: int = 1, hi: Optional[int] = None) -> Optional[Span]:
    """First occurrence of w inside the window y[lo..hi], as positions in y.

    Returns the Span covering the occurrence, or None if w does not occur.
    The occurrence must fit entirely inside the window.  hi is clamped to
    len(y); lo must be a valid position.
    """
    m = len(w)
    if m == 0:
        raise ParamError("empty needle")
    n = len(y)
    if hi is None:
        hi = n
    hi = min(hi, n)
    if not 1 <= lo <= hi or n == 0:
        if lo < 1:
            raise ParamError(f"window start {lo} out of range")
        return None
    last_start = hi - m + 1
    if last_start < lo:
        return None
    hay = y.arr[lo - 1:hi]
    j = _first_match(hay, w.arr)
    if j < 0:
        return None
    start = lo + j
    return Span(start, start + m - 1)


def _first_match(hay, needle):
    """0-based index of the first occurrence of needle in hay, or -1."""
    m = needle.size
    if m > hay.size:
        return -1
    if m == 1:
        idx = np.flatnonzero(hay == needle[0])
        return int(idx[0]) if idx.size else -1
    # Scan candidates that match the first element, verify in bulk.
    starts = np.flatnonzero(hay[:hay.size - m + 1] == needle[0])
    if starts.size == 0:
        return -1
    windows = hay[starts[:, None] + np.arange(m)[None, :]]
    ok = np.flatnonzero((windows == needle).all(axis=1))
    return int(starts[ok[0]]) if ok.size else -1
