"""Anchor ambiguity estimators and the goodness check.

A centered window of a string is a useful anchor when, upon seeing it in a
trace, the occurrence almost surely came from the center of the input rather
than assembling by chance elsewhere.  These Monte Carlo estimators quantify
that, and `check_goodness` combines them with run-length and lag-tail checks.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bitstring import Bits
from .channel import Channel
from .errors import ParamError
from .greedy import estimate_trackability, retained_positions
from .params import AlgoParams, gamma_default

_PAD = 2  # padding value that never matches a bit


def _occurrence_events(x: Bits, a, ch: Channel, trials, rng, inner_lo, inner_hi,
                       outer_lo=None, outer_hi=None, chunk=8192):
    """Monte Carlo counts for first-occurrence placement of the center window.

    Returns (occurrences, missed_inner, escaped_outer): how many trials saw the
    center window w occur in the trace at all; among those, how many first
    occurrences had no source index inside [inner_lo, inner_hi]; and how many
    had some source index outside [outer_lo, outer_hi] (0 if not requested).
    """
    half = len(x) // 2
    w = x.substring(half - a + 1, half + a).arr
    m = 2 * a
    xa = x.arr
    occurred = missed = escaped = 0
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        masks = rng.random((t, len(x))) < ch.p
        tpos, lengths = retained_positions(masks)
        lmax = tpos.shape[1]
        if lmax < m:
            done += t
            continue
        vals = np.where(tpos > 0, xa[np.maximum(tpos - 1, 0)], _PAD).astype(np.uint8)
        windows = sliding_window_view(vals, m, axis=1)
        hits = (windows == w).all(axis=2)
        starts_ok = (np.arange(lmax - m + 1)[None, :] + m) <= lengths[:, None]
        hits &= starts_ok
        has = hits.any(axis=1)
        rows = np.flatnonzero(has)
        if rows.size:
            first = np.argmax(hits[rows], axis=1)
            src = tpos[rows[:, None], first[:, None] + np.arange(m)[None, :]]
            inside = ((src >= inner_lo) & (src <= inner_hi)).any(axis=1)
            occurred += rows.size
            missed += int((~inside).sum())
            if outer_lo is not None:
                out = ((src < outer_lo) | (src > outer_hi)).any(axis=1)
                escaped += int(out.sum())
        done += t
    return occurred, missed, escaped


@dataclass
class DistinguishabilityReport:
    a: int
    gamma: float
    estimate: float       # P(w occurs with all source indices off-center)
    stderr: float
    threshold: float      # gamma^a * p^(2a)
    verdict: bool         # estimate + 2*stderr <= threshold
    trials: int
    occurrence_rate: float


def estimate_distinguishability(x: Bits, a, ch: Channel, gamma, trials, rng,
                                chunk=8192) -> DistinguishabilityReport:
    """Estimate how often the center window occurs in a trace sourced entirely
    off-center, and compare against the gamma^a * p^(2a) threshold."""
    n2 = len(x)
    if n2 % 2 != 0 or n2 == 0:
        raise ParamError("input must have even positive length")
    n = n2 // 2
    a = int(a)
    if not 1 <= a <= n:
        raise ParamError(f"window half-length {a} out of range 1..{n}")
    if not 0 < gamma < 1:
        raise ParamError("gamma must be in (0, 1)")
    ch.require_tracking_regime()
    trials = int(trials)
    occurred, missed, _ = _occurrence_events(
        x, a, ch, trials, rng, inner_lo=n - a, inner_hi=n + a, chunk=chunk)
    est = missed / trials
    stderr = float(np.sqrt(est * (1 - est) / trials))
    threshold = gamma ** a * ch.p ** (2 * a)
    return DistinguishabilityReport(a=a, gamma=float(gamma), estimate=est, stderr=stderr,
                                    threshold=threshold, verdict=est + 2 * stderr <= threshold,
                                    trials=trials, occurrence_rate=occurred / trials)


@dataclass
class EscapeReport:
    a: int
    estimate: float      # P(w occurs and some source index leaves [n-10a, n+10a])
    stderr: float
    trials: int
    occurrence_rate: float


def estimate_escape_probability(x: Bits, a, ch: Channel, trials, rng,
                                chunk=8192) -> EscapeReport:
    """Estimate how often a seen center window stretches outside [n-10a, n+10a]."""
    n2 = len(x)
    if n2 % 2 != 0 or n2 == 0:
        raise ParamError("input must have even positive length")
    n = n2 // 2
    a = int(a)
    if not 1 <= a <= n:
        raise ParamError(f"window half-length {a} out of range 1..{n}")
    if 10 * a > n:
        raise ParamError("need 10*a <= n for the escape interval")
    ch.require_tracking_regime()
    trials = int(trials)
    occurred, _, escaped = _occurrence_events(
        x, a, ch, trials, rng, inner_lo=n - a, inner_hi=n + a,
        outer_lo=n - 10 * a, outer_hi=n + 10 * a, chunk=chunk)
    est = escaped / trials
    stderr = float(np.sqrt(est * (1 - est) / trials))
    return EscapeReport(a=a, estimate=est, stderr=stderr, trials=trials,
                        occurrence_rate=occurred / trials)


@dataclass
class WindowVerdict:
    start: int                     # 1-based start of the checked span
    ok: bool
    block_offset: Optional[int]    # start of the first passing block, if any


@dataclass
class GoodnessReport:
    trackable_ok: bool
    alpha: float
    beta: float
    max_run_ok: bool
    max_run: int
    windows: List[WindowVerdict]
    overall: bool
    trials: int


def check_goodness(x: Bits, params: AlgoParams, ch: Channel, trials, rng,
                   window_stride=None, block_stride=None, gamma=None) -> GoodnessReport:
    """Evaluate the three goodness conditions for x.

    Run-length is exact; the lag-tail condition is a Monte Carlo estimate
    compared against (run_cap, track_beta); anchor availability scans strided
    spans of head_len bits for a 2*align_tol block whose center window passes
    the distinguishability test.  Monte Carlo verdicts carry the sampling
    budget used; they are advisory, not certificates.
    """
    params.validate()
    n = len(x)
    if n < params.head_len:
        raise ParamError("input shorter than head_len")
    ch.require_tracking_regime()
    if gamma is None:
        gamma = gamma_default(ch.p)
    k0, k1, k2 = params.anchor_half, params.align_tol, params.head_len
    window_stride = window_stride or max(1, k2 // 4)
    block_stride = block_stride or max(1, k0)

    max_run = x.max_run()
    max_run_ok = max_run < params.run_cap

    track = estimate_trackability(x, ch, trials, rng)
    trackable_ok = (track.alpha <= params.run_cap
                    and (not np.isfinite(track.beta) or track.beta <= params.track_beta))

    windows = []
    overall_windows = True
    for start in range(1, n - k2 + 2, window_stride):
        found = None
        for boff in range(start, start + k2 - 2 * k1 + 1, block_stride):
            block = x.substring(boff, boff + 2 * k1 - 1)
            rep = estimate_distinguishability(block, k0, ch, gamma, trials, rng)
            if rep.verdict:
                found = boff
                break
        windows.append(WindowVerdict(start=start, ok=found is not None, block_offset=found))
        overall_windows &= found is not None

    overall = max_run_ok and trackable_ok and overall_windows
    return GoodnessReport(trackable_ok=trackable_ok, alpha=track.alpha, beta=track.beta,
                          max_run_ok=max_run_ok, max_run=max_run, windows=windows,
                          overall=overall, trials=int(trials))
