"""Anchored bit-by-bit reconstruction from deletion-channel traces.

The driver recovers an initial segment from plain position-wise trace
statistics, then repeatedly: picks an anchor window inside the known prefix,
locates it in each trace (greedy fit to get near it, then an exact window
match), estimates the law of the aligned source position, and decides the
next bit by a dominance tournament between candidate extensions whose shifted
trace statistics are computed exactly.  A reverse pass recovers the second
half the same way on reversed traces, and the two halves are stitched.

Alignment decisions depend only on the trace prefix read so far, which makes
the trace suffix after the aligned point a clean channel sample of the input
suffix; that is what lets the shift law be estimated from the known prefix
alone.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import cho_factor, cho_solve

from .bitstring import Bits, Span, find_occurrence
from .channel import Channel
from .errors import (InsufficientData, ParamError, ReconstructionError,
                     StitchMismatch, Undecidable)
from .greedy import next_position_table, retained_positions
from .params import AlgoParams
from .rng import stream
from .shifted import ShiftDistribution, shift_mixed_weights

# stream key domains
_DOM_TRACE = 1
_DOM_SHIFT = 2
_DOM_ANCHOR = 3


# ---------------------------------------------------------------------------
# anchor choice


@dataclass
class AnchorChoice:
    m: int            # aligned target position inside the prefix
    w: Bits           # anchor window, 2*anchor_half bits centered at m
    repeats: int      # nearby occurrences of w other than the central one
    warning: bool     # set when no candidate was repeat-free


def choose_anchor(x0: Bits, k, params: AlgoParams, ch: Channel, rng=None) -> AnchorChoice:
    """Pick m in [k-head_len+align_tol, k-align_tol] whose anchor window repeats least.

    Scores every admissible m by the number of occurrences of its window within
    +-align_tol (plus slack) in the prefix; least-repeating wins, ties prefer
    larger m (deeper anchors sharpen the downstream statistics).  Optionally
    confirms a repeating winner with a Monte Carlo ambiguity check.
    """
    params.validate()
    k = int(k)
    k0, k1, k2 = params.anchor_half, params.align_tol, params.head_len
    if k < k2:
        raise ParamError(f"prefix length {k} below head_len {k2}")
    if k > len(x0):
        raise ParamError("k exceeds the prefix length")
    xa = x0.arr[:k]
    lo, hi = k - k2 + k1, k - k1
    best = None
    for m in range(hi, lo - 1, -1):
        w = xa[m - k0:m + k0]
        nb_lo = max(0, m - k1 - 4 * k0)
        nb_hi = min(k, m + k1 + 4 * k0)
        nbh = xa[nb_lo:nb_hi]
        if nbh.size >= 2 * k0:
            wins = sliding_window_view(nbh, 2 * k0)
            starts = np.flatnonzero((wins == w).all(axis=1)) + nb_lo  # 0-based
            repeats = int((starts != m - k0).sum())
        else:
            repeats = 0
        if best is None or repeats < best[0]:
            best = (repeats, m)
            if repeats == 0:
                break
    repeats, m = best
    w = Bits._wrap(xa[m - k0:m + k0])

    warning = repeats > 0
    if params.anchor_check_trials > 0 and warning and rng is not None:
        from .anchors import estimate_distinguishability
        from .params import gamma_default
        block = Bits._wrap(xa[m - k1:m + k1])
        rep = estimate_distinguishability(block, k0, ch, gamma_default(ch.p),
                                          params.anchor_check_trials, rng)
        warning = not rep.verdict
    return AnchorChoice(m=m, w=w, repeats=repeats, warning=warning)


# ---------------------------------------------------------------------------
# alignment rule


@dataclass
class AlignmentOutcome:
    pos: Optional[int]       # trace position aligned to the anchor end; None = give up
    l0: Optional[int]        # trace position where the greedy fit first reached m - 8M
    span: Optional[Span]     # anchor occurrence inside the trace


def align_trace(x0: Bits, m, w: Bits, trace: Bits, params: AlgoParams) -> AlignmentOutcome:
    """Locate the anchor w (centered at m in x0) inside one trace.

    Greedy-fit the trace into x0 until the fit first reaches m - 8*run_cap,
    then look for w within the next 16*run_cap trace positions; on success the
    outcome is the trace position of the occurrence's last bit.  The decision
    reads the trace left to right and never depends on bits past the returned
    position.
    """
    k = len(x0)
    m = int(m)
    if not params.anchor_half <= m <= k - params.anchor_half:
        raise ParamError("anchor position out of range")
    threshold = max(1, m - 8 * params.run_cap)
    tab = next_position_table(x0.arr)
    g = 0
    l0 = None
    for i, v in enumerate(trace.arr):
        gn = tab[v, g + 1]
        if gn == k + 1:
            break
        g = gn
        if g >= threshold:
            l0 = i + 1
            break
    if l0 is None:
        return AlignmentOutcome(pos=None, l0=None, span=None)
    span = find_occurrence(w, trace, lo=l0, hi=l0 + 16 * params.run_cap)
    if span is None:
        return AlignmentOutcome(pos=None, l0=l0, span=None)
    return AlignmentOutcome(pos=span.hi, l0=l0, span=span)


# ---------------------------------------------------------------------------
# batched trace machinery


class TraceStore:
    """Zero-padded matrix of traces plus per-trace greedy-fit state.

    Rows are zero-padded past their length (the zero padding doubles as the
    zero-extension used by positional statistics); matchers must mask by the
    row lengths.  The final column is always zero so gathers can clip to it.
    """

    def __init__(self, mat, lengths):
        self.mat = mat                    # [N, Lmax+1] uint8, zero-padded
        self.lengths = lengths            # [N] int64
        self.g = np.zeros(mat.shape[0], dtype=np.int64)   # last finite fit position
        self.consumed = np.zeros(mat.shape[0], dtype=np.int64)  # trace bits consumed

    @property
    def count(self):
        return self.mat.shape[0]

    @classmethod
    def from_rows(cls, rows, lengths):
        """Build from a 2-d value array (entries past each length ignored)."""
        n, lmax = rows.shape
        mat = np.zeros((n, lmax + 1), dtype=np.uint8)
        valid = np.arange(lmax)[None, :] < lengths[:, None]
        mat[:, :lmax] = np.where(valid, rows, 0)
        return cls(mat, np.asarray(lengths, dtype=np.int64))

    @classmethod
    def from_bits(cls, traces: List[Bits]):
        if not traces:
            raise ParamError("no traces given")
        lmax = max(1, max(len(t) for t in traces))
        mat = np.zeros((len(traces), lmax + 1), dtype=np.uint8)
        lengths = np.zeros(len(traces), dtype=np.int64)
        for i, t in enumerate(traces):
            mat[i, :len(t)] = t.arr
            lengths[i] = len(t)
        return cls(mat, lengths)

    def extend(self, other):
        lmax = max(self.mat.shape[1], other.mat.shape[1])

        def grow(m):
            if m.shape[1] == lmax:
                return m
            out = np.zeros((m.shape[0], lmax), dtype=np.uint8)
            out[:, :m.shape[1]] = m
            return out

        merged = TraceStore(np.vstack([grow(self.mat), grow(other.mat)]),
                            np.concatenate([self.lengths, other.lengths]))
        merged.g = np.concatenate([self.g, other.g])
        merged.consumed = np.concatenate([self.consumed, other.consumed])
        return merged

    def reversed_store(self):
        out_mat = np.zeros_like(self.mat)
        for i in range(self.mat.shape[0]):
            li = self.lengths[i]
            out_mat[i, :li] = self.mat[i, :li][::-1]
        return TraceStore(out_mat, self.lengths.copy())


class ChannelSimulator:
    """Deterministic growing pool of channel samples of a fixed input."""

    BLOCK = 4096

    def __init__(self, x: Bits, ch: Channel, seed):
        self.x = x
        self.ch = ch
        self.seed = int(seed)
        self._blocks_drawn = 0

    def draw_store(self, count) -> TraceStore:
        """Next `count` traces as a TraceStore (block-seeded, order-stable)."""
        n = len(self.x)
        xa = self.x.arr
        mats, lens = [], []
        remaining = int(count)
        while remaining > 0:
            take = min(self.BLOCK, remaining)
            rng = stream(self.seed, _DOM_TRACE, self._blocks_drawn)
            masks = rng.random((take, n)) < self.ch.p
            tpos, lengths = retained_positions(masks)
            vals = np.where(tpos > 0, xa[np.maximum(tpos - 1, 0)], 0).astype(np.uint8)
            mats.append(vals)
            lens.append(lengths)
            self._blocks_drawn += 1
            remaining -= take
        lmax = max(1, max(m.shape[1] for m in mats))
        full = np.zeros((sum(m.shape[0] for m in mats), lmax + 1), dtype=np.uint8)
        row = 0
        for m in mats:
            full[row:row + m.shape[0], :m.shape[1]] = m
            row += m.shape[0]
        return TraceStore(full, np.concatenate(lens))


def _advance_fit_state(tab, k, store: TraceStore, threshold):
    """Advance each trace's greedy fit until it first reaches `threshold`.

    State persists across calls; with a longer prefix a previously stuck trace
    retries its pending bit.  Returns the bool mask of traces whose fit reached
    the threshold (their l0 is store.consumed).
    """
    sentinel = k + 1
    g, consumed = store.g, store.consumed
    active = (g < threshold) & (consumed < store.lengths)
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        v = store.mat[idx, consumed[idx]]
        gn = tab[v, g[idx] + 1]
        ok = gn < sentinel
        adv = idx[ok]
        g[adv] = gn[ok]
        consumed[adv] += 1
        active[idx[~ok]] = False
        active[adv] = (g[adv] < threshold) & (consumed[adv] < store.lengths[adv])
    return g >= threshold


def _anchor_band_search(store: TraceStore, rows, l0, w_arr, window):
    """First occurrence of w within trace positions [l0, l0+window] per row.

    Returns aligned positions (trace index of the occurrence end) or 0.
    The occurrence must fit within both the window and the trace length.
    """
    m = w_arr.size
    band_w = window + 1
    if band_w < m or rows.size == 0:
        return np.zeros(rows.size, dtype=np.int64)
    lmax = store.mat.shape[1]
    # gather each row's band, grouping rows by their start so the common case
    # is a contiguous slice copy
    vals = np.zeros((rows.size, band_w), dtype=np.uint8)
    order = np.argsort(l0, kind="stable")
    l0s = l0[order]
    bnd = np.flatnonzero(np.diff(l0s)) + 1
    for s, e in zip(np.concatenate([[0], bnd]), np.concatenate([bnd, [l0s.size]])):
        off = int(l0s[s]) - 1
        grp = rows[order[s:e]]
        hi = min(off + band_w, lmax)
        if hi > off:
            vals[order[s:e], :hi - off] = store.mat[grp, off:hi]
    n_starts = band_w - m + 1
    # stage 1: cheap candidate screen on the first two anchor values
    hits = vals[:, :n_starts] == w_arr[0]
    if m > 1:
        hits &= vals[:, 1:n_starts + 1] == w_arr[1]
    # starts whose occurrence would overrun the trace are invalid
    max_start = (store.lengths[rows] - (l0 - 1) - m)[:, None]   # 0-based bound
    hits &= np.arange(n_starts)[None, :] <= max_start
    cand_r, cand_s = np.nonzero(hits)
    if cand_r.size:
        # stage 2: verify remaining anchor values at the candidates
        full = np.ones(cand_r.size, dtype=bool)
        for i in range(2, m):
            full &= vals[cand_r, cand_s + i] == w_arr[i]
        hits[cand_r, cand_s] = full
    has = hits.any(axis=1)
    first = np.argmax(hits, axis=1)
    return np.where(has, l0 + first + m - 1, 0)


def _gather_stat_means(store: TraceStore, rows, ell, j_count):
    """Mean of trace values at offsets 1..j_count past ell per row, zero-padded.

    Rows are grouped by their aligned offset so each group reduces to a
    contiguous column-slice sum.
    """
    lmax = store.mat.shape[1]
    acc = np.zeros(j_count, dtype=np.int64)
    order = np.argsort(ell, kind="stable")
    ell_sorted = ell[order]
    bounds = np.flatnonzero(np.diff(ell_sorted)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [ell_sorted.size]])
    for s, e in zip(starts, ends):
        off = int(ell_sorted[s])
        grp = rows[order[s:e]]
        hi = min(off + j_count, lmax)
        if hi <= off:
            continue
        block = store.mat[grp, off:hi]
        acc[:hi - off] += block.sum(axis=0, dtype=np.int64)
    return acc / rows.size


# ---------------------------------------------------------------------------
# alignment-shift (aligned source position) estimation


@dataclass
class AlignmentShift:
    shift: ShiftDistribution   # law of (aligned source - (m - align_tol)), within tolerance
    accepted: int              # trials passing both alignment and the tolerance window
    trials: int
    usable_rate: float         # P(alignment succeeds)
    within_tolerance_rate: float  # P(tolerance holds | usable)


def estimate_alignment_shift(x0: Bits, m, w: Bits, ch: Channel, params: AlgoParams,
                             rng, chunk=8192) -> AlignmentShift:
    """Monte Carlo law of the aligned source position for traces of the known prefix.

    Simulates channel samples of x0, aligns each with the same rule used on
    real traces, keeps those whose aligned source position t_ell lies within
    align_tol of m, and histograms t_ell - (m - align_tol).
    """
    k = len(x0)
    m = int(m)
    k1 = params.align_tol
    h_base = m - k1
    threshold = max(1, m - 8 * params.run_cap)
    window = 16 * params.run_cap
    tab = next_position_table(x0.arr)
    counts = np.zeros(2 * k1 + 1, dtype=np.int64)
    usable_total = 0
    trials = int(params.shift_trials)
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        masks = rng.random((t, k)) < ch.p
        tpos, lengths = retained_positions(masks)
        vals = np.where(tpos > 0, x0.arr[np.maximum(tpos - 1, 0)], 0).astype(np.uint8)
        sub = TraceStore.from_rows(vals, lengths)
        reached = _advance_fit_state(tab, k, sub, threshold)
        rows = np.flatnonzero(reached)
        if rows.size:
            ell = _anchor_band_search(sub, rows, sub.consumed[rows], w.arr, window)
            ok = ell > 0
            usable_total += int(ok.sum())
            urows = rows[ok]
            t_ell = tpos[urows, ell[ok] - 1]
            delta = t_ell - h_base
            inside = (delta >= 0) & (delta <= 2 * k1)
            counts += np.bincount(delta[inside], minlength=2 * k1 + 1)
        done += t
    accepted = int(counts.sum())
    if accepted < 10:
        raise InsufficientData(
            f"alignment-shift estimate accepted only {accepted} of {trials} trials")
    betas = counts / accepted
    return AlignmentShift(shift=ShiftDistribution(betas), accepted=accepted,
                          trials=trials, usable_rate=usable_total / trials,
                          within_tolerance_rate=accepted / usable_total if usable_total else 0.0)


# ---------------------------------------------------------------------------
# candidate sets and dominance selection

from typing import NamedTuple


class _PatternTables(NamedTuple):
    ext: np.ndarray      # [2^W, W] extension bits, lexicographic
    pair_w: np.ndarray   # ordered cross pairs (first bits differ)
    pair_o: np.ndarray
    pair_d: np.ndarray   # pair -> difference-pattern row
    dpat: np.ndarray     # [n_pat, W] distinct difference vectors
    ext_f: np.ndarray
    dpat_f: np.ndarray


_pattern_cache = {}


def _pattern_tables(w_bits):
    """Extension enumeration and cross-pair difference patterns for a window size.

    Returns (ext, pair_w, pair_o, pair_d, dpat): ext is every w_bits-wide 0/1
    row in lexicographic order; (pair_w, pair_o) index all ordered pairs whose
    first bits differ; dpat holds the distinct difference vectors ext[w]-ext[o]
    and pair_d maps each pair to its dpat row.
    """
    if w_bits in _pattern_cache:
        return _pattern_cache[w_bits]
    n = 1 << w_bits
    ext = ((np.arange(n)[:, None] >> np.arange(w_bits - 1, -1, -1)[None, :]) & 1).astype(np.int8)
    first = ext[:, 0]
    wi, oi = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sel = first[wi] != first[oi]
    pair_w = wi[sel].ravel()
    pair_o = oi[sel].ravel()
    diffs = ext[pair_w].astype(np.int8) - ext[pair_o].astype(np.int8)
    code = ((diffs + 1).astype(np.int64)
            * (3 ** np.arange(w_bits, dtype=np.int64))[None, :]).sum(axis=1)
    uniq, inverse = np.unique(code, return_inverse=True)
    dpat = np.zeros((uniq.size, w_bits), dtype=np.int8)
    dpat[inverse] = diffs
    out = _PatternTables(ext=ext, pair_w=pair_w, pair_o=pair_o, pair_d=inverse,
                         dpat=dpat, ext_f=ext.astype(np.float64),
                         dpat_f=dpat.astype(np.float64))
    _pattern_cache[w_bits] = out
    return out


def _pad_bits(policy, length):
    if policy == "zeros":
        return np.zeros(length, dtype=np.uint8)
    if policy == "ones":
        return np.ones(length, dtype=np.uint8)
    if policy == "alternating":
        return (np.arange(length) % 2).astype(np.uint8)
    raise ParamError(f"unknown pad policy {policy!r}")


@dataclass
class CandidateSet:
    """Shared prefix, enumerated extensions, padding, and cached statistics.

    stats[i, j] is the expected trace value at offset j_offset+j+1 for
    candidate i under the shift law; tail[j] is the model-uncertainty scale
    (one sigma) from source positions beyond the enumerated window; noise_sd
    is the per-offset sampling scale of the estimates the set will be judged
    against.
    """

    ext: np.ndarray           # [n_cand, W] extension bits, lexicographic order
    stats: np.ndarray         # [n_cand, J]
    tail: np.ndarray          # [J] one-sigma diagonal summary of model risk
    j_offset: int             # stats column j is trace offset j_offset + j + 1
    ext_window: int
    noise_sd: float = 0.0
    tail_cols: Optional[np.ndarray] = None   # [J, T] per-unknown-position influence
    tail_extra: Optional[np.ndarray] = None  # [J] diagonal risk not in tail_cols
    prefix: Optional[Bits] = None
    pad_policy: str = "alternating"
    pad_len: int = 0

    @property
    def count(self):
        return self.ext.shape[0]

    def candidate_bits(self, i) -> Bits:
        head = self.prefix.arr if self.prefix is not None else np.zeros(0, np.uint8)
        return Bits(np.concatenate([head, self.ext[i].astype(np.uint8),
                                    _pad_bits(self.pad_policy, self.pad_len)]))


def build_candidate_set(prefix: Bits, ch: Channel, sd: ShiftDistribution,
                        params: AlgoParams, j_max=None, noise_sd=0.0) -> CandidateSet:
    """Enumerate prefix + {0,1}^ext_window + padding and compute their statistics."""
    c = len(prefix) + 1                       # zone position being decided
    w_bits = params.ext_window
    pad = _pad_bits(params.pad_policy, params.pad_len)
    zone_len = len(prefix) + w_bits + params.pad_len
    s_max = zone_len + int(4 * math.sqrt(zone_len + 1)) + 16
    if j_max is None:
        j_max = min(params.effective_j_max,
                    int(math.ceil(ch.p * s_max + 8 * math.sqrt(s_max) + 30)))
    omega = shift_mixed_weights(ch, sd, j_max, s_max)
    base = omega[:, :len(prefix)] @ prefix.arr.astype(np.float64)
    padvec = omega[:, c - 1 + w_bits:c - 1 + w_bits + params.pad_len] @ pad.astype(np.float64)
    deficit = np.maximum(0.0, 1.0 - omega.sum(axis=1))
    # positions past the explicit pad are mean-filled at 1/2 so the model is
    # unbiased for a random continuation; their scatter goes into `tail`
    halfvec = 0.5 * (omega[:, c - 1 + w_bits + params.pad_len:].sum(axis=1) + deficit)
    tabs = _pattern_tables(w_bits)
    stats = (base + padvec + halfvec)[None, :] + \
        tabs.ext_f @ omega[:, c - 1:c - 1 + w_bits].T
    # everything past the enumerated window is untrusted, padding included: the
    # pad keeps the model's absolute level honest but its bits are still guesses
    cut = c - 1 + w_bits
    tail = 0.5 * np.sqrt((omega[:, cut:] ** 2).sum(axis=1)) + 0.5 * deficit
    return CandidateSet(ext=tabs.ext, stats=stats, tail=tail, j_offset=0,
                        ext_window=w_bits, noise_sd=noise_sd,
                        tail_cols=omega[:, cut:], tail_extra=0.5 * deficit,
                        prefix=prefix,
                        pad_policy=params.pad_policy, pad_len=params.pad_len)


@dataclass
class DominanceSelection:
    dominant: np.ndarray       # candidate indices that beat all certified opponents
    bit: int                   # shared first extension bit of the dominant set
    low_confidence: bool       # an exact tie was broken lexicographically
    certified_pairs: int
    total_pairs: int
    gap: float                 # certificate gap of the pure first-bit pattern
    j_star: int                # trace offset of that certificate (1-based)
    margin: float              # distance of the estimate from that pair's midpoint


def dominance_select(candidates: CandidateSet, estimates, epsilon,
                     tail_sigma=3.0, elim_margin=0.0) -> DominanceSelection:
    """Tournament among candidates: w beats w' when the observed estimates,
    projected onto the pair's whitened difference direction, land closer to
    w's statistics than to w's opponent's.

    The whitening covariance combines sampling noise with the influence of
    source positions beyond the enumerated window (scaled by tail_sigma), so
    directions that lean on unmodeled bits are discounted rather than trusted;
    with a single informative offset this reduces to comparing the estimate
    against the midpoint at the pair's separating index.  Pairs whose
    effective separation is below epsilon are uncontested.  elim_margin > 0
    additionally requires a loss to be decisive by that many standard
    deviations before a candidate is eliminated.  All dominant candidates must
    agree on the first extension bit; otherwise undecidable.  Exact ties break
    toward the lexicographically smaller candidate and flag the selection as
    low confidence.
    """
    est = np.asarray(estimates, dtype=np.float64)
    stats = candidates.stats
    n_cand, j_count = stats.shape
    if est.size != j_count:
        raise ParamError("estimate vector does not match the statistics horizon")
    w_bits = candidates.ext_window
    tabs = _pattern_tables(w_bits)
    ext, pair_w, pair_o, pair_d = tabs.ext, tabs.pair_w, tabs.pair_o, tabs.pair_d
    sigma = max(candidates.noise_sd, 1e-9)

    # whitening covariance: sampling noise plus the low-rank influence of
    # unknown source positions (mean-filled in the stats, scattered here)
    if candidates.tail_cols is not None and candidates.tail_cols.size:
        a = tail_sigma * 0.5 * candidates.tail_cols       # [J, T]
        cov = (sigma ** 2) * np.eye(j_count) + a @ a.T
        if candidates.tail_extra is not None:
            np.fill_diagonal(cov, np.diag(cov) + (tail_sigma * candidates.tail_extra) ** 2)
    else:
        cov = np.diag(sigma ** 2 + (tail_sigma * candidates.tail) ** 2)
    factor = cho_factor(cov, lower=True, check_finite=False)

    # stats are affine in the extension bits: stats[w] = stats[0] + ext_w @ bas,
    # so every pairwise whitened comparison reduces to W-dimensional algebra
    # through gram = bas Cov^-1 bas' and lift = bas Cov^-1 (est - stats[0])
    bas = stats[(1 << np.arange(w_bits - 1, -1, -1))] - stats[0]     # [W, J]
    r0 = est - stats[0]
    solved = cho_solve(factor, np.vstack([bas, r0[None, :]]).T, check_finite=False)
    gram = bas @ solved[:, :w_bits]                        # [W, W]
    lift = bas @ solved[:, w_bits]                         # [W]

    dpf = tabs.dpat_f
    d_gram = dpf @ gram                                    # [n_pat, W]
    snr2 = np.maximum((d_gram * dpf).sum(axis=1), 0.0)
    snr = np.sqrt(snr2)
    gap_eff = sigma * snr
    certified_pat = gap_eff > epsilon
    d_lift = dpf @ lift                                    # [n_pat]

    # t = u'(est - midpoint) for u = Cov^-1 (B_w - B_o); mean +-snr^2/2, sd snr
    t_stat = d_lift[pair_d] - (d_gram[pair_d] * ext[pair_w]).sum(axis=1) \
        + 0.5 * snr2[pair_d]
    cert = certified_pat[pair_d]
    pair_snr = snr[pair_d]
    # w survives this pair unless the estimate decisively favors the opponent;
    # an exact tie (to roundoff, relative to the pair separation) breaks toward
    # the lexicographically smaller candidate
    ties = (np.abs(t_stat) <= 1e-9 * np.maximum(snr2[pair_d], 1e-30)) & cert
    survive = ~cert | ties & (pair_w < pair_o) | \
        ~ties & (t_stat + elim_margin * pair_snr > 0.0)

    dom = np.ones(n_cand, dtype=bool)
    np.logical_and.at(dom, pair_w, survive)
    dominant = np.flatnonzero(dom)
    if dominant.size == 0:
        raise Undecidable("no dominant candidate")
    first_bits = ext[dominant, 0]
    if not (first_bits == first_bits[0]).all():
        raise Undecidable("dominant candidates disagree on the decided bit")

    pure = np.zeros(w_bits, dtype=np.int8)
    pure[0] = 1
    pure_idx = int(np.flatnonzero((tabs.dpat == pure).all(axis=1))[0])
    u_pure = solved[:, 0]
    j_pure = int(np.argmax(np.abs(u_pure)))
    mid = stats[0, j_pure] + (ext[dominant[0]] @ bas[:, j_pure]) - 0.5 * bas[0, j_pure]
    low_conf = bool(ties[np.isin(pair_w, dominant)].any())
    return DominanceSelection(dominant=dominant, bit=int(first_bits[0]),
                              low_confidence=low_conf,
                              certified_pairs=int(cert.sum()), total_pairs=int(cert.size),
                              gap=float(gap_eff[pure_idx]),
                              j_star=candidates.j_offset + j_pure + 1,
                              margin=float(abs(est[j_pure] - mid)))


# ---------------------------------------------------------------------------
# the decision engine


@dataclass
class DecisionRecord:
    position: int          # 1-based index of the decided bit, in pass coordinates
    bit: int
    reverse_pass: bool
    usable: int
    gap: float
    j_star: int
    margin: float
    dominant_count: int
    low_confidence: bool
    anchor_m: Optional[int]
    retried: bool


class _Epoch:
    """Cached alignment state valid while the anchor stays admissible."""

    def __init__(self, h_base, anchor_m, shift, usable_idx, bhat, omega, j_count,
                 eps_floor, expiry_k):
        self.h_base = h_base
        self.anchor_m = anchor_m
        self.shift = shift
        self.usable_idx = usable_idx
        self.bhat = bhat                  # [j_count]
        self.omega = omega                # [j_count, s_max]
        self.sq_suffix = None             # reverse-cumulative omega^2 along s
        self.sum_suffix = None            # reverse-cumulative omega along s
        self.deficit = None
        self.j_count = j_count
        self.eps_floor = eps_floor
        self.expiry_k = expiry_k
        self.base = np.zeros(j_count)     # decided-prefix zone contribution

    def finish_tables(self):
        sq = np.zeros((self.omega.shape[0], self.omega.shape[1] + 1))
        np.cumsum((self.omega ** 2)[:, ::-1], axis=1, out=sq[:, 1:])
        self.sq_suffix = sq[:, ::-1]      # sq_suffix[:, s] = sum of omega^2 over cols >= s
        sm = np.zeros_like(sq)
        np.cumsum(self.omega[:, ::-1], axis=1, out=sm[:, 1:])
        self.sum_suffix = sm[:, ::-1]     # sum_suffix[:, s] = sum of omega over cols >= s
        self.deficit = np.maximum(0.0, 1.0 - self.omega.sum(axis=1))
        # effective shift-support quantiles (1e-4 each side) bound the window of
        # informative trace offsets far more tightly than the full support
        cdf = np.cumsum(self.shift.betas)
        self.shift_lo = int(np.searchsorted(cdf, 1e-4))
        self.shift_hi = int(np.searchsorted(cdf, 1.0 - 1e-4))


class _Pass:
    """One reconstruction direction over a trace store."""

    def __init__(self, store: TraceStore, n_total, params: AlgoParams, ch: Channel,
                 seed, reverse_pass, simulator: Optional[ChannelSimulator] = None):
        self.store = store
        self.n = int(n_total)
        self.params = params
        self.ch = ch
        self.seed = int(seed)
        self.reverse_pass = reverse_pass
        self.simulator = simulator
        self.prefix = np.zeros(0, dtype=np.uint8)
        self.epoch: Optional[_Epoch] = None
        self.records: List[DecisionRecord] = []
        self.grown = False

    # -- epoch construction ------------------------------------------------

    def _eps_floor(self, usable):
        p = self.params
        jm = p.effective_j_max
        floor = p.floor_scale * math.sqrt(math.log(2.0 * jm * max(self.n, 2)) / (2.0 * usable))
        return max(p.min_gap, floor)

    def _j_count_for(self, s_max):
        cap = int(math.ceil(self.ch.p * s_max + 8 * math.sqrt(s_max) + 30))
        return max(8, min(self.params.effective_j_max, cap))

    def _initial_epoch(self):
        p = self.params
        s_max = p.head_len + p.ext_window + p.pad_len
        s_max += int(4 * math.sqrt(s_max)) + 16
        j_count = self._j_count_for(s_max)
        shift = ShiftDistribution.point(0)
        omega = shift_mixed_weights(self.ch, shift, j_count, s_max)
        rows = np.arange(self.store.count)
        bhat = _gather_stat_means(self.store, rows, np.zeros(rows.size, dtype=np.int64),
                                  j_count)
        ep = _Epoch(h_base=0, anchor_m=None, shift=shift, usable_idx=rows, bhat=bhat,
                    omega=omega, j_count=j_count, eps_floor=self._eps_floor(rows.size),
                    expiry_k=p.head_len - 1)
        ep.finish_tables()
        if self.prefix.size:
            ep.base = omega[:, :self.prefix.size] @ self.prefix.astype(np.float64)
        self.epoch = ep

    def _anchored_epoch(self, retried=False):
        p = self.params
        k = self.prefix.size
        x0 = Bits._wrap(self.prefix)
        anchor = choose_anchor(x0, k, p, self.ch,
                               stream(self.seed, _DOM_ANCHOR, int(self.reverse_pass), k))
        m = anchor.m
        tab = next_position_table(self.prefix)
        threshold = max(1, m - 8 * p.run_cap)
        reached = _advance_fit_state(tab, k, self.store, threshold)
        rows = np.flatnonzero(reached)
        ell = _anchor_band_search(self.store, rows, self.store.consumed[rows],
                                  anchor.w.arr, 16 * p.run_cap)
        usable = rows[ell > 0]
        ell = ell[ell > 0]
        if usable.size < p.min_aligned:
            raise InsufficientData(
                f"only {usable.size} usable traces (< {p.min_aligned}) at prefix {k}",
                position=k + 1)
        shift_est = estimate_alignment_shift(
            x0, m, anchor.w, self.ch, p,
            stream(self.seed, _DOM_SHIFT, int(self.reverse_pass), k, int(retried)))
        # keeping an anchor alive past its admissible range deepens the decision
        # zone by one per bit but saves a full realignment; bounded by anchor_life
        life = max(p.head_len - 2 * p.align_tol, p.anchor_life)
        expiry_k = m + p.align_tol + life
        h_base = m - p.align_tol
        s_max = (expiry_k + 1 - h_base) + p.ext_window + p.pad_len
        s_max += int(4 * math.sqrt(s_max)) + 16
        j_count = self._j_count_for(s_max)
        omega = shift_mixed_weights(self.ch, shift_est.shift, j_count, s_max)
        bhat = _gather_stat_means(self.store, usable, ell, j_count)
        ep = _Epoch(h_base=h_base, anchor_m=m, shift=shift_est.shift, usable_idx=usable,
                    bhat=bhat, omega=omega, j_count=j_count,
                    eps_floor=self._eps_floor(usable.size), expiry_k=expiry_k)
        ep.finish_tables()
        zone_bits = self.prefix[h_base:k].astype(np.float64)
        ep.base = omega[:, :zone_bits.size] @ zone_bits
        self.epoch = ep

    # -- decisions ----------------------------------------------------------

    def _decide(self, retried=False):
        p = self.params
        ep = self.epoch
        k = self.prefix.size
        c = k + 1 - ep.h_base              # zone position being decided
        w_bits = p.ext_window
        pad = _pad_bits(p.pad_policy, p.pad_len).astype(np.float64)

        # statistics window around the informative trace offsets
        sigma = math.sqrt(max(c, 1) * self.ch.q / self.ch.p) + 1.0
        jlo = max(1, int(self.ch.p * (c - ep.shift_hi) - 6 * sigma - 10))
        jhi = min(ep.j_count, int(self.ch.p * (c - ep.shift_lo) + 6 * sigma + 10) + 1)
        jsl = slice(jlo - 1, jhi)

        s_cols = ep.omega.shape[1]
        base_win = ep.base[jsl]
        padvec = ep.omega[jsl, c - 1 + w_bits:c - 1 + w_bits + p.pad_len] @ pad
        # positions past the explicit pad are mean-filled at 1/2 so the model is
        # unbiased for a random continuation; their scatter goes into `tail`
        cut2 = min(c - 1 + w_bits + p.pad_len, s_cols)
        halfvec = 0.5 * (ep.sum_suffix[jsl, cut2] + ep.deficit[jsl])
        tabs = _pattern_tables(w_bits)
        stats = (base_win + padvec + halfvec)[None, :] + \
            tabs.ext_f @ ep.omega[jsl, c - 1:c - 1 + w_bits].T
        cut = min(c - 1 + w_bits, s_cols)   # pad positions count as untrusted
        tail = 0.5 * np.sqrt(ep.sq_suffix[jsl, cut]) + 0.5 * ep.deficit[jsl]
        # unknown-position columns beyond the window's source reach act through
        # their summed mass on the diagonal instead of explicit columns
        s_hi = min(s_cols, int((jhi + 1) / self.ch.p + 8 * sigma + 10))
        s_hi = max(s_hi, cut)
        tail_extra = 0.5 * (ep.deficit[jsl] + ep.sum_suffix[jsl, s_hi])
        cand = CandidateSet(ext=tabs.ext, stats=stats, tail=tail, j_offset=jlo - 1,
                            ext_window=w_bits,
                            noise_sd=0.5 / math.sqrt(ep.usable_idx.size),
                            tail_cols=ep.omega[jsl, cut:s_hi],
                            tail_extra=tail_extra,
                            prefix=None, pad_policy=p.pad_policy, pad_len=p.pad_len)
        sel = dominance_select(cand, ep.bhat[jsl], ep.eps_floor,
                               tail_sigma=p.tail_sigma, elim_margin=p.elim_margin)
        self.records.append(DecisionRecord(
            position=k + 1, bit=sel.bit, reverse_pass=self.reverse_pass,
            usable=int(ep.usable_idx.size), gap=sel.gap, j_star=sel.j_star,
            margin=sel.margin, dominant_count=int(sel.dominant.size),
            low_confidence=sel.low_confidence, anchor_m=ep.anchor_m, retried=retried))
        return sel.bit

    def _append_bit(self, bit):
        ep = self.epoch
        c = self.prefix.size + 1 - ep.h_base
        if bit:
            ep.base += ep.omega[:, c - 1]
        self.prefix = np.append(self.prefix, np.uint8(bit))

    def _grow_pool(self):
        """One-shot pool doubling backed by the simulator (retry path)."""
        if self.simulator is None or self.grown:
            return False
        extra = self.simulator.draw_store(self.store.count)
        if self.reverse_pass:
            extra = extra.reversed_store()
        self.store = self.store.extend(extra)
        self.grown = True
        return True

    def _decide_with_retry(self, anchored):
        try:
            return self._decide()
        except (Undecidable, InsufficientData) as exc:
            grew = self._grow_pool()
            if not grew and self.simulator is None:
                raise ReconstructionError(
                    f"undecidable at position {self.prefix.size + 1}: {exc}",
                    position=self.prefix.size + 1,
                    partial=Bits._wrap(self.prefix.copy())) from exc
            # rebuild the epoch (fresh shift-law draw, realigned pool) and retry once
            if anchored:
                self._anchored_epoch(retried=True)
            else:
                self._initial_epoch()
            try:
                return self._decide(retried=True)
            except (Undecidable, InsufficientData) as exc2:
                raise ReconstructionError(
                    f"undecidable at position {self.prefix.size + 1} after retry: {exc2}",
                    position=self.prefix.size + 1,
                    partial=Bits._wrap(self.prefix.copy())) from exc2

    # -- main loop ----------------------------------------------------------

    def run(self, target_len) -> Bits:
        p = self.params
        if target_len < p.head_len:
            raise ParamError(
                f"target length {target_len} shorter than head_len {p.head_len}")
        self._initial_epoch()
        while self.prefix.size < p.head_len:
            bit = self._decide_with_retry(anchored=False)
            self._append_bit(bit)
        while self.prefix.size < target_len:
            k = self.prefix.size
            if self.epoch is None or self.epoch.anchor_m is None or k > self.epoch.expiry_k:
                try:
                    self._anchored_epoch()
                except InsufficientData as exc:
                    if not self._grow_pool():
                        raise ReconstructionError(
                            str(exc), position=k + 1,
                            partial=Bits._wrap(self.prefix.copy())) from exc
                    self._anchored_epoch(retried=True)
            bit = self._decide_with_retry(anchored=True)
            self._append_bit(bit)
        return Bits._wrap(self.prefix.copy())


# ---------------------------------------------------------------------------
# public operations


def reconstruct_initial_segment(traces, n, params: AlgoParams, ch: Channel) -> Bits:
    """Recover the first head_len bits from plain position-wise trace averages."""
    params.validate()
    store = traces if isinstance(traces, TraceStore) else TraceStore.from_bits(traces)
    if store.count < params.min_aligned:
        raise InsufficientData(f"{store.count} traces < min_aligned {params.min_aligned}")
    runner = _Pass(store, n, params, ch, seed=0, reverse_pass=False)
    runner._initial_epoch()
    try:
        while runner.prefix.size < params.head_len:
            runner._append_bit(runner._decide())
    except Undecidable as exc:
        raise Undecidable(str(exc), prefix=Bits._wrap(runner.prefix.copy()),
                          position=runner.prefix.size + 1) from exc
    return Bits._wrap(runner.prefix.copy())


def advance_bit(xhat_prefix: Bits, traces, params: AlgoParams, ch: Channel, rng=None) -> int:
    """Decide the bit after the given prefix from the traces (one-shot alignment)."""
    params.validate()
    k = len(xhat_prefix)
    if k < params.head_len:
        raise ParamError(f"prefix length {k} below head_len {params.head_len}")
    store = traces if isinstance(traces, TraceStore) else TraceStore.from_bits(traces)
    runner = _Pass(store, max(2 * k, k + 1), params, ch, seed=0, reverse_pass=False)
    runner.prefix = xhat_prefix.arr.copy()
    runner._anchored_epoch()
    return runner._decide()


@dataclass
class ReconstructionResult:
    bits: Bits
    records: List[DecisionRecord]
    traces_used: int
    stitch_checked: int        # overlap width compared between the two passes
    forward_len: int


def reconstruct(n, params: AlgoParams, ch: Channel,
                trace_source: Union[List[Bits], TraceStore, ChannelSimulator],
                seed=0) -> ReconstructionResult:
    """Recover a length-n string from channel traces: forward half, reverse half, stitch.

    trace_source may be a list of traces, a TraceStore, or a ChannelSimulator
    (which enables the pool-doubling retry on undecidable positions).
    """
    params.validate()
    n = int(n)
    half = (n + 1) // 2
    ov = min(params.stitch_overlap, n - half, half - params.head_len if half > params.head_len else 0)
    ov = max(ov, 0)
    fwd_target = half + ov
    rev_target = (n - half) + ov

    simulator = trace_source if isinstance(trace_source, ChannelSimulator) else None
    if simulator is not None:
        if ch.q == 0.0:
            one = simulator.draw_store(1)
            bits = Bits._wrap(one.mat[0, :one.lengths[0]].copy())
            return ReconstructionResult(bits=bits, records=[], traces_used=1,
                                        stitch_checked=0, forward_len=n)
        store = simulator.draw_store(params.trace_budget)
    elif isinstance(trace_source, TraceStore):
        store = trace_source
    else:
        store = TraceStore.from_bits(list(trace_source))
    if ch.q == 0.0:
        bits = Bits._wrap(store.mat[0, :store.lengths[0]].copy())
        return ReconstructionResult(bits=bits, records=[], traces_used=store.count,
                                    stitch_checked=0, forward_len=n)

    if rev_target < params.head_len:
        raise ParamError(
            f"n={n} leaves the reverse pass ({rev_target}) below head_len {params.head_len}")

    fwd = _Pass(store, n, params, ch, seed, reverse_pass=False, simulator=simulator)
    fwd_bits = fwd.run(fwd_target)
    rev_store = store.reversed_store()
    rev = _Pass(rev_store, n, params, ch, seed, reverse_pass=True, simulator=simulator)
    rev_bits = rev.run(rev_target)

    back = rev_bits.reverse()              # last rev_target bits of x, in order
    out = np.concatenate([fwd_bits.arr[:half], back.arr[back.arr.size - (n - half):]])

    # overlap consistency: positions where both passes produced bits
    olap_lo = n - rev_target + 1
    olap_hi = fwd_target
    checked = max(0, olap_hi - olap_lo + 1)
    if checked:
        f_seg = fwd_bits.arr[olap_lo - 1:olap_hi]
        b_seg = back.arr[olap_lo - (n - rev_target) - 1:olap_hi - (n - rev_target)]
        if not np.array_equal(f_seg, b_seg):
            bad = int(np.flatnonzero(f_seg != b_seg)[0]) + olap_lo
            raise StitchMismatch(
                f"forward and reverse passes disagree at position {bad}", position=bad)

    records = fwd.records + rev.records
    return ReconstructionResult(bits=Bits._wrap(out), records=records,
                                traces_used=store.count, stitch_checked=checked,
                                forward_len=len(fwd_bits))
