"""Deletion-channel sampling, exact trace-bit statistics, and a brute-force oracle.

Convention: position j in a trace is 1-based.  The probability that the j-th
trace bit of input x equals 1 is

    sum over ell >= j of  x_ell * C(ell-1, j-1) * p**j * q**(ell-j)

i.e. the j-th retained index lands on ell exactly when position ell is kept
and j-1 of the first ell-1 positions are kept.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .bitstring import Bits
from .errors import ContractError, ParamError

#: Smallest |pw+q| accepted when evaluating the generating function.
MIN_PIVOT = 1e-6


@dataclass(frozen=True)
class Channel:
    """Retention probability p; each bit survives independently with probability p.

    p = 1 is allowed as the degenerate no-deletion limit.
    """

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ParamError(f"retention probability must be in (0, 1], got {self.p}")

    @property
    def q(self):
        return 1.0 - self.p

    def require_tracking_regime(self):
        """Raise unless p > 1/2 (needed by alignment-based routines)."""
        if self.p <= 0.5:
            raise ParamError(f"this routine requires p > 1/2, got p={self.p}")
        return self


@dataclass
class Trace:
    """A channel output together with the retained 1-based input indices."""

    kept: np.ndarray  # strictly increasing int64 positions into the input
    bits: Bits

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=np.int64)
        if self.kept.size != len(self.bits):
            raise ParamError("index sequence and trace bits disagree in length")
        if self.kept.size and (np.diff(self.kept) <= 0).any():
            raise ParamError("retained indices must be strictly increasing")
        if self.kept.size and self.kept[0] < 1:
            raise ParamError("retained indices are 1-based")

    @classmethod
    def from_mask(cls, x: Bits, mask):
        kept = np.flatnonzero(mask).astype(np.int64) + 1
        return cls(kept=kept, bits=Bits._wrap(x.arr[kept - 1]))


def sample_trace(x: Bits, ch: Channel, rng) -> Trace:
    """Draw one (indices, bits) channel sample of x."""
    mask = rng.random(len(x)) < ch.p
    return Trace.from_mask(x, mask)


def sample_mask_matrix(n, ch: Channel, rng, count):
    """count independent retention masks for inputs of length n."""
    return rng.random((int(count), int(n))) < ch.p


def sample_traces(x: Bits, ch: Channel, rng, count):
    """count independent channel outputs of x (bits only)."""
    masks = sample_mask_matrix(len(x), ch, rng, count)
    return [Bits._wrap(x.arr[m]) for m in masks]


def retained_index_logpmf(j, n, ch: Channel):
    """log P(j-th retained index = ell) for ell = j..n, as a vector."""
    p, q = ch.p, ch.q
    ell = np.arange(j, n + 1, dtype=np.float64)
    return (gammaln(ell) - gammaln(j) - gammaln(ell - j + 1)
            + j * np.log(p) + (ell - j) * np.log(q))


def exact_bit_marginal(x: Bits, ch: Channel, j) -> float:
    """P(the j-th trace bit of x equals 1); 0 when j exceeds any possible support."""
    j = int(j)
    if j < 1:
        raise ParamError("trace position j must be >= 1")
    n = len(x)
    if j > n:
        return 0.0
    if ch.q == 0.0:
        return float(x.arr[j - 1])
    w = np.exp(retained_index_logpmf(j, n, ch))
    return float(w @ x.arr[j - 1:])


def retained_index_pmf_table(j_max, s_max, ch: Channel):
    """Matrix F with F[j, s] = P(j-th retained index = s), 1 <= j <= j_max, 1 <= s <= s_max.

    Computed by the Pascal-style recurrence F[j, s] = p*F[j-1, s-1] + q*F[j, s-1],
    which is stable for any p including the q = 0 limit.  Row/column 0 are the
    boundary (index 0 retained at position 0 with probability 1).
    """
    j_max, s_max = int(j_max), int(s_max)
    f = np.zeros((j_max + 1, s_max + 1))
    f[0, 0] = 1.0
    p, q = ch.p, ch.q
    for s in range(1, s_max + 1):
        f[1:, s] = p * f[:-1, s - 1] + q * f[1:, s - 1]
        f[0, s] = 0.0
    return f


def exact_shifted_bit_marginal(x: Bits, ch: Channel, sd, j) -> float:
    """P(j-th trace bit = 1) when the input is x with a random prefix of S bits removed.

    sd carries the shift law (probabilities beta_s over s = 0..k-1); the result
    is the beta-weighted mixture of exact_bit_marginal over the suffixes.
    """
    betas = np.asarray(sd.betas, dtype=np.float64)
    if betas.size > len(x):
        raise ParamError("shift support exceeds input length")
    total = 0.0
    for s, b in enumerate(betas):
        if b == 0.0:
            continue
        total += b * exact_bit_marginal(x.suffix(s + 1), ch, j)
    return total


def _signed_shifted_means(a, ch: Channel, sd, j_count):
    """E[trace value at positions 1..j_count] for a real-valued sequence a (0-indexed).

    Channel linearity: the expectation of the j-th output value is the weighted
    sum of a over positions, mixed over the shift law.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    betas = np.asarray(sd.betas, dtype=np.float64)
    f = retained_index_pmf_table(j_count, n, ch)[1:, 1:]  # [j, s] over 1..j_count, 1..n
    out = np.zeros(j_count)
    for s, b in enumerate(betas):
        if b == 0.0:
            continue
        tail = a[s:]
        if tail.size == 0:
            continue
        out += b * (f[:, :tail.size] @ tail)
    return out


def generating_function_eval(a, ch: Channel, sd, w, side="closed"):
    """Evaluate E[sum_j trace_j * w**j] for a real sequence a with a random prefix shift.

    side="closed" returns the product form
        p * (sum_s beta_s (pw+q)**-s) * (sum_j a_j (pw+q)**j),
    side="series" sums the exact shifted marginals term by term; the two agree
    when the hypothesis holds (the first k entries of a are zero, where k is
    the shift-support bound).
    """
    a = np.asarray(a, dtype=np.float64)
    betas = np.asarray(sd.betas, dtype=np.float64)
    k = betas.size
    if a.size and a[:min(k, a.size)].any():
        raise ContractError(
            "the first k sequence entries must be zero where k bounds the shift support")
    w = complex(w)
    z = ch.p * w + ch.q
    if abs(z) < MIN_PIVOT:
        raise ParamError(f"|p*w + q| = {abs(z):.2e} too close to zero")
    if side == "closed":
        shift_factor = np.sum(betas * z ** (-np.arange(k)))
        poly = np.sum(a * z ** np.arange(a.size)) if a.size else 0.0
        return complex(ch.p * shift_factor * poly)
    if side == "series":
        if a.size == 0:
            return 0.0 + 0.0j
        means = _signed_shifted_means(a, ch, sd, a.size)
        return complex(np.sum(means * w ** np.arange(a.size)))
    raise ParamError(f"unknown side {side!r}")


#: Inputs longer than this are refused by the exhaustive oracle.
BRUTE_FORCE_LIMIT = 20


def brute_force_trace_distribution(x: Bits, ch: Channel) -> dict:
    """Exact output distribution of the channel on x, by enumerating all 2**n masks.

    Keys are ASCII trace strings, values their probabilities.  Refuses inputs
    longer than BRUTE_FORCE_LIMIT.
    """
    n = len(x)
    if n > BRUTE_FORCE_LIMIT:
        raise ParamError(f"brute-force enumeration refused for length {n} > {BRUTE_FORCE_LIMIT}")
    p, q = ch.p, ch.q
    xs = str(x)
    dist = {}
    for mask in range(1 << n):
        kept_chars = [xs[i] for i in range(n) if (mask >> i) & 1]
        k = len(kept_chars)
        prob = (p ** k) * (q ** (n - k))
        key = "".join(kept_chars)
        dist[key] = dist.get(key, 0.0) + prob
    return dist


def marginal_from_distribution(dist, j):
    """P(trace bit j = 1) read off an explicit output distribution."""
    return sum(prob for trace, prob in dist.items() if len(trace) >= j and trace[j - 1] == "1")
