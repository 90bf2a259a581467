import numpy as np
import pytest

from tracelab import Bits, Channel, ParamError, random_bits, stream
from tracelab.anchors import (check_goodness, estimate_distinguishability,
                              estimate_escape_probability)
from tracelab.params import AlgoParams, gamma_default


def small_params():
    # block length 2*align_tol = 40 leaves room for fully off-center sightings
    # of the 2*anchor_half = 10 bit window, so the check has teeth
    return AlgoParams(run_cap=12, anchor_half=5, align_tol=20, head_len=88,
                      probe_depth=96, trace_budget=100, min_aligned=10)


def test_gamma_default():
    assert gamma_default(0.7) == pytest.approx((1.4) ** -0.5)
    assert gamma_default(0.7) < 1


def test_all_zero_string_fails_distinguishability():
    # the center window of 0^(2n) occurs everywhere, so off-center sightings dominate
    x = Bits("0" * 64)
    rep = estimate_distinguishability(x, 4, Channel(0.7), 0.9, 4000, stream(70, 0))
    assert not rep.verdict
    assert rep.estimate > rep.threshold


def test_whole_string_window_never_off_center():
    # a = n makes the window the whole string: sources always intersect the center
    x = random_bits(32, stream(71, 0))
    rep = estimate_distinguishability(x, 16, Channel(0.8), 0.9, 3000, stream(71, 1))
    assert rep.estimate == 0.0
    assert rep.verdict


def test_distinguishability_random_strings_mostly_pass():
    # desk-scale version of the prevalence claim; full scale runs in acceptance
    ch = Channel(0.7)
    gamma = gamma_default(ch.p)
    n = 64
    a = int(np.ceil(np.sqrt(n)))  # window half-length from the string length
    passes = 0
    total = 30
    for i in range(total):
        x = random_bits(n, stream(72, 10 + i))
        rep = estimate_distinguishability(x, a, ch, gamma, 20000, stream(72, 1000 + i))
        passes += rep.verdict
    assert passes >= int(0.9 * total)


def test_distinguishability_validation():
    with pytest.raises(ParamError):
        estimate_distinguishability(Bits("010"), 1, Channel(0.7), 0.9, 10, stream(0, 0))
    with pytest.raises(ParamError):
        estimate_distinguishability(Bits("0101"), 3, Channel(0.7), 0.9, 10, stream(0, 0))
    with pytest.raises(ParamError):
        estimate_distinguishability(Bits("0101"), 1, Channel(0.4), 0.9, 10, stream(0, 0))


def test_escape_probability_p_one():
    x = random_bits(80, stream(73, 0))
    rep = estimate_escape_probability(x, 4, Channel(1.0 - 1e-12), 500, stream(73, 1))
    assert rep.estimate == 0.0


def test_escape_probability_below_retention_mass():
    # per-string estimates scatter around the retention mass p^(2a) at this
    # window size; the median over strings stays at or below it
    ch = Channel(0.75)
    a = 5
    ests = []
    for i in range(11):
        x = random_bits(200, stream(74, i))
        rep = estimate_escape_probability(x, a, ch, 20000, stream(741, i))
        assert rep.stderr < 0.01
        assert rep.estimate < rep.occurrence_rate
        ests.append(rep.estimate)
    assert np.median(ests) <= ch.p ** (2 * a)


def test_escape_probability_degenerate_anchor():
    # all-zero string: every sighting escapes easily; estimate near occurrence rate
    x = Bits("0" * 200)
    rep = estimate_escape_probability(x, 4, Channel(0.75), 4000, stream(75, 0))
    assert rep.occurrence_rate > 0.9
    assert rep.estimate > 0.5 * rep.occurrence_rate


def test_escape_validation():
    with pytest.raises(ParamError):
        estimate_escape_probability(Bits("01" * 10), 3, Channel(0.7), 10, stream(0, 0))


def test_goodness_long_run_fails():
    rng = stream(76, 0)
    params = small_params()
    x_arr = random_bits(96, rng).arr.copy()
    x_arr[10:10 + params.run_cap] = 1
    rep = check_goodness(Bits(x_arr), params, Channel(0.75), 2000, stream(76, 1))
    assert not rep.max_run_ok
    assert not rep.overall


def test_goodness_alternating_fails_distinguishability():
    x = Bits("01" * 48)
    rep = check_goodness(x, small_params(), Channel(0.75), 3000, stream(77, 0))
    assert rep.max_run_ok
    assert not all(wv.ok for wv in rep.windows)
    assert not rep.overall


def test_goodness_random_string_usually_good():
    hits = 0
    for i in range(5):
        x = random_bits(96, stream(78, i))
        rep = check_goodness(x, small_params(), Channel(0.8), 4000, stream(79, i))
        hits += rep.overall
    assert hits >= 4


def test_goodness_overall_consistency():
    x = random_bits(96, stream(80, 0))
    rep = check_goodness(x, small_params(), Channel(0.8), 1500, stream(80, 1))
    assert rep.overall == (rep.max_run_ok and rep.trackable_ok
                           and all(wv.ok for wv in rep.windows))


def test_bad_event_monotone_in_a():
    # larger windows are harder to fake: estimates decrease (2 stderr slack)
    x = random_bits(128, stream(81, 0))
    ch = Channel(0.7)
    prev = None
    for a in (2, 4, 8):
        rep = estimate_distinguishability(x, a, ch, 0.9, 30000, stream(81, a))
        if prev is not None:
            assert rep.estimate <= prev.estimate + 2 * (rep.stderr + prev.stderr)
        prev = rep
