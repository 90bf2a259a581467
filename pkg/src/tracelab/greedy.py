"""Greedy subsequence alignment of traces into a reference string.

The greedy fit walks the reference left to right, sending each trace bit to
the earliest matching position after the previous one.  For a trace of x the
fit position never exceeds the true retained index, and the lag between the
two has an exponential tail when p > 1/2 and the reference is random; the
estimators here measure that behavior.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .bitstring import Bits
from .channel import Channel, Trace
from .errors import ContractError, ParamError

#: Sentinel for "no position available" in a greedy fit.
NO_FIT = np.iinfo(np.int64).max


def next_position_table(arr):
    """tab[b, i] = smallest 1-based position >= i with arr == b, else n+1.

    Valid for queries i = 1..n+1; row index b in {0, 1}.  Column 0 is unused.
    """
    n = arr.size
    tab = np.full((2, n + 2), n + 1, dtype=np.int64)
    queries = np.arange(1, n + 2)
    for b in (0, 1):
        pos = np.flatnonzero(arr == b) + 1
        padded = np.append(pos, n + 1)
        tab[b, 1:] = padded[np.searchsorted(pos, queries)]
    return tab


@dataclass
class GreedyFit:
    """Greedy positions for each trace bit; NO_FIT marks exhaustion."""

    positions: np.ndarray

    @property
    def finite_count(self):
        return int(np.searchsorted(self.positions, NO_FIT))

    def __len__(self):
        return int(self.positions.size)

    def as_list(self):
        """Positions with NO_FIT rendered as math.inf."""
        import math
        return [math.inf if v == NO_FIT else int(v) for v in self.positions]


def greedy_fit(y: Bits, x: Bits) -> GreedyFit:
    """Earliest strictly-increasing embedding of y into x, position by position."""
    n = len(x)
    out = np.full(len(y), NO_FIT, dtype=np.int64)
    if len(y) == 0:
        return GreedyFit(out)
    tab = next_position_table(x.arr)
    g = 0
    for i, v in enumerate(y.arr):
        if g >= n:
            break
        g = tab[v, g + 1]
        if g == n + 1:
            break
        out[i] = g
    return GreedyFit(out)


@dataclass
class LagStats:
    """Per-position lags t_k - g_k of a trace's greedy fit, and their maximum."""

    lags: np.ndarray
    max_lag: int


def lag_sequence(tw: Trace, x: Bits) -> LagStats:
    """Lags between retained indices and greedy-fit positions; 0 for an empty trace."""
    n = len(x)
    if tw.kept.size and tw.kept[-1] > n:
        raise ContractError("trace indices exceed the reference length")
    if tw.kept.size and not np.array_equal(x.arr[tw.kept - 1], tw.bits.arr):
        raise ContractError("trace bits do not match the reference at the retained indices")
    fit = greedy_fit(tw.bits, x)
    if tw.kept.size == 0:
        return LagStats(lags=np.zeros(0, dtype=np.int64), max_lag=0)
    lags = tw.kept - fit.positions
    return LagStats(lags=lags, max_lag=int(lags.max(initial=0)))


def retained_positions(masks):
    """Padded matrix of 1-based retained positions per row, plus row lengths.

    Rows are retention masks; output positions beyond a row's length are 0.
    """
    masks = np.asarray(masks, dtype=bool)
    lengths = masks.sum(axis=1).astype(np.int64)
    lmax = int(lengths.max(initial=0))
    tpos = np.zeros((masks.shape[0], lmax), dtype=np.int64)
    rows, cols = np.nonzero(masks)
    if rows.size:
        offsets = np.zeros(masks.shape[0] + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        within = np.arange(rows.size, dtype=np.int64) - offsets[rows]
        tpos[rows, within] = cols + 1
    return tpos, lengths


def batched_max_lags(x: Bits, masks):
    """Maximum greedy lag per retention-mask row, all against the same reference x."""
    xa = x.arr
    tab = next_position_table(xa)
    tpos, lengths = retained_positions(masks)
    t_count = tpos.shape[1]
    g = np.zeros(masks.shape[0], dtype=np.int64)
    maxlag = np.zeros(masks.shape[0], dtype=np.int64)
    for j in range(t_count):
        act = np.flatnonzero(lengths > j)
        if act.size == 0:
            break
        tj = tpos[act, j]
        v = xa[tj - 1]
        g[act] = tab[v, g[act] + 1]
        maxlag[act] = np.maximum(maxlag[act], tj - g[act])
    return maxlag


@dataclass
class TrackabilityEstimate:
    """Empirical tail of the maximum greedy lag with a fitted exponential envelope."""

    lam: np.ndarray        # lag thresholds
    r: np.ndarray          # tail probabilities P(max lag >= lam)
    alpha: float
    beta: float
    bound_holds: bool      # r_lam <= exp(-(lam - alpha)/beta) across the fitted grid
    trials: int
    max_lag_seen: int


#: A lag threshold enters the tail fit only with at least this many positive trials.
FIT_MIN_COUNT = 50


def estimate_trackability(x: Bits, ch: Channel, trials, rng,
                          chunk=20000) -> TrackabilityEstimate:
    """Monte Carlo tail curve of the maximum greedy lag for traces of x."""
    trials = int(trials)
    if trials < 1:
        raise ParamError("trials must be positive")
    counts = np.zeros(len(x) + 2, dtype=np.int64)
    max_seen = 0
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        masks = rng.random((t, len(x))) < ch.p
        ml = batched_max_lags(x, masks)
        counts[:ml.max(initial=0) + 1] += np.bincount(ml, minlength=ml.max(initial=0) + 1)
        max_seen = max(max_seen, int(ml.max(initial=0)))
        done += t
    # tail counts: number of trials with max lag >= lam
    tail = counts[::-1].cumsum()[::-1]
    lam = np.arange(1, max_seen + 1)
    r = tail[1:max_seen + 1] / trials if max_seen >= 1 else np.zeros(0)

    fit_mask = tail[1:max_seen + 1] >= FIT_MIN_COUNT if max_seen >= 1 else np.zeros(0, bool)
    if fit_mask.sum() >= 2:
        lam_fit = lam[fit_mask].astype(float)
        log_r = np.log(r[fit_mask])
        slope, intercept = np.polyfit(lam_fit, log_r, 1)
        if slope < 0:
            beta = -1.0 / slope
            # lift the offset minimally so the pair genuinely dominates the
            # observed tail (any valid pair certifies the property)
            positive = r > 0
            alpha = float((lam[positive] + beta * np.log(r[positive])).max())
        else:
            beta, alpha = float("inf"), 0.0
    elif max_seen == 0:
        alpha, beta = 0.0, float("nan")
    else:
        alpha, beta = float(max_seen), float("nan")

    if np.isfinite(beta) and beta > 0 and lam.size:
        bound = np.exp(-(lam - alpha) / beta)
        bound_holds = bool((r <= bound + 1e-12).all())
    else:
        bound_holds = max_seen == 0 or not np.isfinite(beta)
    return TrackabilityEstimate(lam=lam, r=r, alpha=float(alpha), beta=float(beta),
                                bound_holds=bound_holds, trials=trials,
                                max_lag_seen=max_seen)


def _per_row_next_tables(xbits, n_cols):
    """Next-occurrence columns per row: out[b][t, i-1] = next pos >= i with bit b, else n+1."""
    t_rows = xbits.shape[0]
    sentinel = n_cols + 1
    tables = []
    col_pos = np.arange(1, n_cols + 1, dtype=np.int64)[None, :]
    for b in (0, 1):
        m = np.where(xbits == b, col_pos, sentinel)
        nb = np.minimum.accumulate(m[:, ::-1], axis=1)[:, ::-1]
        nb = np.concatenate([nb, np.full((t_rows, 1), sentinel, dtype=np.int64)], axis=1)
        tables.append(nb)
    return tables


def increment_law_distance(ch: Channel, k, trials, rng, chunk=20000):
    """Total-variation distance between observed greedy-lag increments at step k
    and the reference law max(G_p - G_{1/2}, -d_k), on i.i.d. uniform input.

    Uses the same empirical d_k samples on both sides; support bins with fewer
    than 5 combined counts are dropped from the comparison.
    """
    ch.require_tracking_regime()
    k = int(k)
    if k < 1:
        raise ParamError("k must be >= 1")
    trials = int(trials)
    counts_a = {}
    counts_b = {}
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        gaps = rng.geometric(ch.p, size=(t, k + 1))
        tpos = gaps.cumsum(axis=1)
        n_cols = int(tpos[:, -1].max())
        xbits = rng.integers(0, 2, size=(t, n_cols), dtype=np.uint8)
        nb0, nb1 = _per_row_next_tables(xbits, n_cols)
        rows = np.arange(t)
        g = np.zeros(t, dtype=np.int64)
        d_k = None
        for j in range(k + 1):
            tj = tpos[:, j]
            v = xbits[rows, tj - 1]
            nxt = np.where(v == 1, nb1[rows, g], nb0[rows, g])
            g = nxt
            if j == k - 1:
                d_k = tj - g
        d_k1 = tpos[:, k] - g
        inc_a = d_k1 - d_k
        inc_b = np.maximum(rng.geometric(ch.p, size=t) - rng.geometric(0.5, size=t), -d_k)
        for arr, counts in ((inc_a, counts_a), (inc_b, counts_b)):
            vals, cnt = np.unique(arr, return_counts=True)
            for v, c in zip(vals, cnt):
                counts[int(v)] = counts.get(int(v), 0) + int(c)
        done += t
    support = sorted(set(counts_a) | set(counts_b))
    tv = 0.0
    for v in support:
        ca, cb = counts_a.get(v, 0), counts_b.get(v, 0)
        if ca + cb < 5:
            continue
        tv += abs(ca - cb) / trials
    return 0.5 * tv


def conditional_uniformity_deviation(n, ch: Channel):
    """Exact check that, given the first k fit positions and retained indices,
    the reference bits after the k-th fit position are uniform.

    Enumerates every input of length n and every deletion pattern with exact
    weights and returns the worst absolute deviation of any conditional suffix
    probability from the uniform value.  Exponential in n; intended for n <= 8.
    """
    n = int(n)
    if n > 10:
        raise ParamError("exact enumeration limited to n <= 10")
    p, q = ch.p, ch.q
    pattern_weight = [p ** bin(m).count("1") * q ** (n - bin(m).count("1"))
                      for m in range(1 << n)]
    positions = [tuple(i + 1 for i in range(n) if (m >> i) & 1) for m in range(1 << n)]
    acc = {}
    for xv in range(1 << n):
        bits = [(xv >> i) & 1 for i in range(n)]
        nxt = [[n + 1] * (n + 2), [n + 1] * (n + 2)]
        for i in range(n, 0, -1):
            nxt[0][i] = i if bits[i - 1] == 0 else nxt[0][i + 1]
            nxt[1][i] = i if bits[i - 1] == 1 else nxt[1][i + 1]
        for m in range(1 << n):
            pos = positions[m]
            w = pattern_weight[m]
            g = 0
            gs = []
            for t_j in pos:
                g = nxt[bits[t_j - 1]][g + 1]
                gs.append(g)
            for k in range(1, len(pos) + 1):
                gk = gs[k - 1]
                suffix = xv >> gk
                key = (k, pos[:k], tuple(gs[:k]))
                slot = acc.setdefault(key, [gk, {}])
                slot[1][suffix] = slot[1].get(suffix, 0.0) + w
    worst = 0.0
    for (k, pos_k, gs_k), (gk, suffixes) in acc.items():
        width = n - gk
        total = sum(suffixes.values())
        uniform = 1.0 / (1 << width)
        if len(suffixes) < (1 << width):
            worst = max(worst, uniform)
            continue
        for wgt in suffixes.values():
            worst = max(worst, abs(wgt / total - uniform))
    return worst


def enumerate_monotone_fits(y: Bits, x: Bits):
    """All strictly increasing position tuples h with x[h_k] == y_k (oracle helper)."""
    n, m = len(x), len(y)
    occ = [np.flatnonzero(x.arr == b) + 1 for b in (0, 1)]

    def rec(i, last):
        if i == m:
            yield ()
            return
        for posn in occ[y.arr[i]]:
            if posn > last:
                for rest in rec(i + 1, posn):
                    yield (int(posn),) + rest
    return list(rec(0, 0))
