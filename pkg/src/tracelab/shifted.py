"""Shifted single-bit trace statistics and separation-index search.

Given two candidate strings that agree on a prefix, their expected trace-bit
vectors (after a random prefix shift through the channel) differ somewhere;
the separating index and its gap certify that the two are distinguishable
from enough traces.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binom

from .bitstring import Bits
from .channel import Channel, generating_function_eval, retained_index_pmf_table
from .errors import ContractError, ParamError


class ShiftDistribution:
    """Probability vector beta_s over shifts s = 0..k-1."""

    __slots__ = ("betas",)

    def __init__(self, betas):
        b = np.asarray(betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ParamError("shift distribution needs a nonempty 1-d probability vector")
        if (b < 0).any():
            raise ParamError("shift probabilities must be nonnegative")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ParamError(f"shift probabilities sum to {b.sum()!r}, not 1")
        self.betas = b

    @classmethod
    def point(cls, s=0):
        b = np.zeros(int(s) + 1)
        b[int(s)] = 1.0
        return cls(b)

    @classmethod
    def uniform(cls, k):
        if k < 1:
            raise ParamError("uniform shift needs k >= 1")
        return cls(np.full(int(k), 1.0 / int(k)))

    @property
    def support_bound(self):
        """k such that the support is contained in 0..k-1."""
        return int(self.betas.size)

    @property
    def support_max(self):
        nz = np.flatnonzero(self.betas)
        return int(nz[-1]) if nz.size else 0

    def mean(self):
        return float(np.arange(self.betas.size) @ self.betas)

    def mean_abs_dev(self):
        mu = self.mean()
        return float(np.abs(np.arange(self.betas.size) - mu) @ self.betas)

    def __repr__(self):
        return f"ShiftDistribution(k={self.betas.size}, mean={self.mean():.3f})"


def shift_mixed_weights(ch: Channel, sd: ShiftDistribution, j_max, s_max):
    """Weight matrix w[j, s] = P(trace bit j sources from suffix position s).

    s is 1-based within the (unshifted) string; rows j = 1..j_max are stored at
    w[j-1].  Mixing over the shift law: w[j, s] = sum_d beta_d * F[j, s-d].
    """
    j_max, s_max = int(j_max), int(s_max)
    f = retained_index_pmf_table(j_max, s_max, ch)[1:, :]  # [j_max, s_max+1]
    betas = sd.betas
    out = np.zeros((j_max, s_max + 1))
    for d, b in enumerate(betas):
        if b == 0.0:
            continue
        if d == 0:
            out += b * f
        else:
            out[:, d:] += b * f[:, :s_max + 1 - d]
    return out[:, 1:]  # drop the s = 0 column


def shifted_mean_trace_vector(x: Bits, ch: Channel, sd: ShiftDistribution, j_max):
    """Vector (b_1..b_j_max) of shifted trace-bit expectations for x."""
    w = shift_mixed_weights(ch, sd, j_max, len(x))
    return w @ x.arr.astype(np.float64)


def mean_trace_vector(x: Bits, ch: Channel, j_max):
    """Vector of exact unshifted trace-bit expectations, positions 1..j_max."""
    if j_max < 1:
        raise ParamError("j_max must be >= 1")
    return shifted_mean_trace_vector(x, ch, ShiftDistribution.point(0), j_max)


@dataclass
class SeparationCertificate:
    """Index j and gap |b_j(x) - b_j(x2)| witnessing distinguishable statistics."""

    j: int
    gap: float
    j_max: int
    tail_bound: float      # upper bound on any gap at indices beyond j_max
    floor: Optional[float] = None  # reference floor recorded by the caller, if any
    gaps: np.ndarray = field(default=None, repr=False)


def default_j_max(n, ch: Channel):
    return int(np.ceil(3 * n * ch.p)) + 64


def find_separating_index(x: Bits, x2: Bits, sd: ShiftDistribution, ch: Channel,
                          j_max=None, tail_from=None, tail_sigma=3.0,
                          floor=None) -> SeparationCertificate:
    """Search j = 1..j_max for the largest gap between the shifted statistics of x and x2.

    The strings must have equal length, differ somewhere, and agree on their
    first k digits where k is the shift-support bound.  Ties break toward the
    smallest j.  When tail_from is given, positions >= tail_from are treated as
    untrusted and the selection penalizes indices that draw on them (the gap
    reported is still the raw one at the chosen index).
    """
    if len(x) != len(x2):
        raise ParamError("strings must have equal length")
    if x == x2:
        raise ParamError("strings are identical; no separating index exists")
    k = sd.support_bound
    if len(x) < k or not np.array_equal(x.arr[:k], x2.arr[:k]):
        raise ContractError(
            f"strings must agree on their first {k} digits (shift-support bound)")
    n = len(x)
    if j_max is None:
        j_max = default_j_max(n, ch)
    j_max = int(j_max)

    diff = x.arr.astype(np.float64) - x2.arr.astype(np.float64)
    w = shift_mixed_weights(ch, sd, j_max, n)
    gaps = np.abs(w @ diff)

    score = gaps
    if tail_from is not None:
        cut = max(0, int(tail_from) - 1)
        tail_rms = 0.5 * np.sqrt((w[:, cut:] ** 2).sum(axis=1))
        score = gaps - 2.0 * tail_sigma * tail_rms
    j_star = int(np.argmax(score)) + 1  # argmax returns the first maximizer: smallest j

    tail_bound = float(binom.sf(j_max, n, ch.p))
    return SeparationCertificate(j=j_star, gap=float(gaps[j_star - 1]), j_max=j_max,
                                 tail_bound=tail_bound, floor=floor, gaps=gaps)


@dataclass
class IdentityReport:
    max_deviation: float
    deviations: list


def verify_polynomial_identity(a, sd: ShiftDistribution, ch: Channel, w_samples) -> IdentityReport:
    """Max |closed form - term-by-term series| of the shifted generating function."""
    devs = []
    for w in w_samples:
        closed = generating_function_eval(a, ch, sd, w, side="closed")
        series = generating_function_eval(a, ch, sd, w, side="series")
        devs.append(abs(closed - series))
    return IdentityReport(max_deviation=max(devs) if devs else 0.0, deviations=devs)
