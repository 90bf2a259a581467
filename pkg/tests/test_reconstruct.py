import numpy as np
import pytest

from tracelab import (Bits, Channel, InsufficientData, ParamError, Undecidable,
                      random_bits, stream)
from tracelab.params import AlgoParams
from tracelab.reconstruct import (AlignmentOutcome, ChannelSimulator,
                                  TraceStore, advance_bit, align_trace,
                                  build_candidate_set, choose_anchor,
                                  dominance_select, estimate_alignment_shift,
                                  reconstruct, reconstruct_initial_segment)
from tracelab.shifted import ShiftDistribution


def tiny_params(**kw):
    base = dict(run_cap=3, anchor_half=4, align_tol=20, head_len=48,
                probe_depth=80, trace_budget=2000, ext_window=6, pad_len=16,
                shift_trials=6000, min_aligned=50, floor_scale=0.85,
                tail_sigma=2.5, elim_margin=1.0)
    base.update(kw)
    return AlgoParams(**base)


def test_params_validation():
    with pytest.raises(ParamError):
        tiny_params(align_tol=30)          # 2*align_tol >= head_len
    with pytest.raises(ParamError):
        tiny_params(anchor_half=25)        # anchor_half > align_tol
    with pytest.raises(ParamError):
        tiny_params(probe_depth=40)        # probe_depth <= head_len
    with pytest.raises(ParamError):
        tiny_params(pad_policy="mirror")
    with pytest.raises(ParamError):
        tiny_params(trace_budget=10)       # below min_aligned


def test_paper_shape_profile():
    p = AlgoParams.paper_shape(4096, 0.2)
    assert p.align_tol == 40 * p.run_cap
    assert p.anchor_half == int(np.ceil(np.sqrt(p.align_tol)))
    assert 2 * p.align_tol < p.head_len < p.probe_depth


def test_choose_anchor_range():
    params = tiny_params()
    rng = stream(301, 0)
    for i in range(10):
        x0 = random_bits(80, stream(301, i))
        k = int(stream(302, i).integers(params.head_len, 81))
        a = choose_anchor(x0, k, params, Channel(0.8), rng)
        assert k - params.head_len + params.align_tol <= a.m <= k - params.align_tol
        assert len(a.w) == 2 * params.anchor_half
        assert a.w == x0.substring(a.m - params.anchor_half + 1, a.m + params.anchor_half)


def test_choose_anchor_alternating_warns():
    params = tiny_params()
    x0 = Bits("01" * 40)
    a = choose_anchor(x0, 64, params, Channel(0.8), stream(303, 0))
    assert a.warning
    assert a.repeats > 0


def test_choose_anchor_rejects_short_prefix():
    params = tiny_params()
    with pytest.raises(ParamError):
        choose_anchor(random_bits(80, stream(304, 0)), params.head_len - 1,
                      params, Channel(0.8), stream(304, 1))


def test_align_trace_identity_channel():
    # with no deletions the trace equals the reference; the aligned position is
    # exactly the anchor's last bit
    params = tiny_params()
    x0 = random_bits(80, stream(305, 0))
    k = 70
    a = choose_anchor(x0, k, params, Channel(0.99), stream(305, 1))
    out = align_trace(x0, a.m, a.w, x0, params)
    assert out.pos is not None
    # the first occurrence of w at/after l0 may precede the anchor only if the
    # window repeats; for a warning-free anchor it is the anchor itself
    if not a.warning:
        assert out.pos == a.m + params.anchor_half


def test_align_trace_short_trace_gives_up():
    params = tiny_params()
    x0 = random_bits(80, stream(306, 0))
    a = choose_anchor(x0, 70, params, Channel(0.8), stream(306, 1))
    out = align_trace(x0, a.m, a.w, Bits("10"), params)
    assert out.pos is None


def test_align_trace_adapted_to_prefix():
    # appending arbitrary bits to a trace with a finite outcome never changes it
    params = tiny_params()
    ch = Channel(0.8)
    x0 = random_bits(90, stream(307, 0))
    a = choose_anchor(x0, 80, params, ch, stream(307, 1))
    rng = stream(307, 2)
    checked = 0
    for i in range(60):
        mask = rng.random(90) < ch.p
        tr = Bits(x0.arr[mask])
        out = align_trace(x0, a.m, a.w, tr, params)
        if out.pos is None:
            continue
        suffix = random_bits(25, rng)
        out2 = align_trace(x0, a.m, a.w, tr + suffix, params)
        assert out2.pos == out.pos
        # changing bits after the outcome position leaves it unchanged as well
        mutated = Bits(np.concatenate([tr.arr[:out.pos], 1 - tr.arr[out.pos:]]))
        out3 = align_trace(x0, a.m, a.w, mutated, params)
        assert out3.pos == out.pos
        checked += 1
    assert checked >= 10


def test_alignment_shift_identity_channel():
    params = tiny_params(shift_trials=500)
    ch = Channel(1.0 - 1e-12)
    x0 = random_bits(80, stream(308, 0))
    a = choose_anchor(x0, 72, params, ch, stream(308, 1))
    est = estimate_alignment_shift(x0, a.m, a.w, ch, params, stream(308, 2))
    # no channel noise: a single deterministic shift value
    nz = np.flatnonzero(est.shift.betas)
    assert nz.size == 1
    assert est.accepted == est.trials


def test_alignment_shift_support_and_determinism():
    params = tiny_params()
    ch = Channel(0.8)
    x0 = random_bits(80, stream(309, 0))
    a = choose_anchor(x0, 72, params, ch, stream(309, 1))
    e1 = estimate_alignment_shift(x0, a.m, a.w, ch, params, stream(309, 2))
    e2 = estimate_alignment_shift(x0, a.m, a.w, ch, params, stream(309, 2))
    assert np.array_equal(e1.shift.betas, e2.shift.betas)
    assert e1.shift.betas.size == 2 * params.align_tol + 1
    assert e1.accepted >= 10


def test_alignment_shift_insufficient_statistics():
    params = tiny_params(shift_trials=30)
    ch = Channel(0.55)
    x0 = random_bits(80, stream(310, 0))
    with pytest.raises(InsufficientData):
        estimate_alignment_shift(x0, 40, x0.substring(37, 44), ch, params,
                                 stream(310, 1))


def test_dominance_exact_estimates_pick_their_candidate():
    params = tiny_params()
    ch = Channel(0.8)
    prefix = random_bits(20, stream(311, 0))
    cs = build_candidate_set(prefix, ch, ShiftDistribution.point(0), params,
                             noise_sd=0.01)
    target = 37
    sel = dominance_select(cs, cs.stats[target], epsilon=1e-6,
                           tail_sigma=params.tail_sigma)
    assert target in sel.dominant
    assert sel.bit == int(cs.ext[target, 0])


def test_dominance_tie_breaks_lexicographically():
    params = tiny_params(ext_window=1, pad_len=0)
    ch = Channel(0.9)
    prefix = random_bits(10, stream(312, 0))
    cs = build_candidate_set(prefix, ch, ShiftDistribution.point(0), params,
                             noise_sd=0.01)
    midpoint = 0.5 * (cs.stats[0] + cs.stats[1])
    sel = dominance_select(cs, midpoint, epsilon=1e-9, tail_sigma=0.0)
    assert sel.low_confidence
    assert sel.bit == 0          # candidate 0 is lexicographically smaller


def test_dominance_undecidable_when_nothing_certified():
    params = tiny_params()
    ch = Channel(0.8)
    prefix = random_bits(20, stream(313, 0))
    cs = build_candidate_set(prefix, ch, ShiftDistribution.point(0), params,
                             noise_sd=0.01)
    with pytest.raises(Undecidable):
        dominance_select(cs, cs.stats[0], epsilon=1e9)


def test_initial_segment_near_noiseless():
    params = tiny_params(min_aligned=5)
    ch = Channel(1.0 - 1e-9)
    x = random_bits(128, stream(314, 0))
    traces = [x] * 20
    seg = reconstruct_initial_segment(traces, 128, params, ch)
    assert seg == x.substring(1, params.head_len)


def test_initial_segment_all_zero_input():
    params = tiny_params(min_aligned=5)
    ch = Channel(0.8)
    rng = stream(315, 0)
    traces = [Bits("0" * int(rng.integers(80, 128))) for _ in range(200)]
    seg = reconstruct_initial_segment(traces, 128, params, ch)
    assert seg == Bits("0" * params.head_len)


def test_advance_bit_near_noiseless():
    params = tiny_params(min_aligned=5)
    ch = Channel(1.0 - 1e-9)
    x = random_bits(140, stream(316, 0))
    traces = [x] * 30
    k = 60
    bit = advance_bit(x.substring(1, k), traces, params, ch)
    assert bit == x.bit(k + 1)


def test_advance_bit_truncated_traces_error():
    params = tiny_params()
    ch = Channel(0.8)
    x = random_bits(140, stream(317, 0))
    traces = [random_bits(10, stream(317, i)) for i in range(1, 80)]
    with pytest.raises(InsufficientData):
        advance_bit(x.substring(1, 60), traces, params, ch)


def test_reconstruct_zero_deletion_returns_first_trace():
    params = tiny_params()
    ch = Channel(1.0)
    x = random_bits(128, stream(318, 0))
    res = reconstruct(128, params, ch, ChannelSimulator(x, ch, seed=5), seed=5)
    assert res.bits == x


def test_reconstruct_deterministic():
    params = tiny_params(trace_budget=4000, min_aligned=100)
    ch = Channel(0.9)
    x = random_bits(96, stream(319, 0))
    r1 = reconstruct(96, params, ch, ChannelSimulator(x, ch, seed=77), seed=77)
    r2 = reconstruct(96, params, ch, ChannelSimulator(x, ch, seed=77), seed=77)
    assert r1.bits == r2.bits
    assert [d.bit for d in r1.records] == [d.bit for d in r2.records]


def test_reconstruct_small_end_to_end():
    # n = 2*head_len: both passes are pure initial segments
    params = tiny_params(trace_budget=6000, min_aligned=100)
    ch = Channel(0.9)
    ok = 0
    for i in range(3):
        x = random_bits(96, stream(320, i))
        res = reconstruct(96, params, ch, ChannelSimulator(x, ch, seed=400 + i),
                          seed=400 + i)
        ok += res.bits == x
    assert ok == 3


def test_reconstruct_with_anchored_phase_and_overlap():
    params = tiny_params(trace_budget=9000, min_aligned=100, stitch_overlap=6)
    ch = Channel(0.9)
    x = random_bits(128, stream(321, 0))
    res = reconstruct(128, params, ch, ChannelSimulator(x, ch, seed=500), seed=500)
    assert res.bits == x
    assert res.stitch_checked >= 6
    anchored = [d for d in res.records if d.anchor_m is not None]
    assert anchored, "the anchored phase must have run"


def test_reconstruct_from_trace_list():
    params = tiny_params(trace_budget=6000, min_aligned=100)
    ch = Channel(0.9)
    x = random_bits(96, stream(322, 0))
    sim = ChannelSimulator(x, ch, seed=600)
    store = sim.draw_store(6000)
    traces = [Bits(store.mat[i, :store.lengths[i]]) for i in range(600)]
    # a plain list is accepted; insufficient pool should raise cleanly instead
    # of growing (no simulator available)
    try:
        res = reconstruct(96, params, ch, traces, seed=0)
        assert len(res.bits) == 96
    except Exception as exc:
        assert isinstance(exc, (InsufficientData, Undecidable)) or hasattr(exc, "position")


def test_trace_store_roundtrip_and_reverse():
    traces = [Bits("1010"), Bits("11"), Bits("")]
    store = TraceStore.from_bits(traces)
    assert store.count == 3
    assert list(store.lengths) == [4, 2, 0]
    rev = store.reversed_store()
    assert Bits(rev.mat[0, :4]) == Bits("0101")
    assert Bits(rev.mat[1, :2]) == Bits("11")