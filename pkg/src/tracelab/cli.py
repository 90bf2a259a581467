"""Command-line interface.

Subcommands: channel, stats, align, anchors, goodness, reconstruct, sweep,
calibrate, verify, config.  The master seed comes from --seed, falling back
to the TRACELAB_SEED environment variable, then 0.  All data outputs are
byte-reproducible for a fixed seed and configuration.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import harness, plots
from .anchors import check_goodness, estimate_distinguishability
from .bitstring import Bits, random_bits
from .calibrated import desk_params
from .channel import Channel, exact_bit_marginal, sample_trace
from .errors import TracelabError
from .greedy import estimate_trackability, greedy_fit
from .params import AlgoParams, gamma_default
from .reconstruct import ChannelSimulator, TraceStore, reconstruct
from .rng import resolve_seed, stream
from .shifted import ShiftDistribution, find_separating_index, verify_polynomial_identity


def _read_bits(arg) -> Bits:
    """Parse a bits argument: a literal 0/1 string, or @path / existing path."""
    text = arg
    if arg.startswith("@") or os.path.exists(arg):
        path = arg[1:] if arg.startswith("@") else arg
        with open(path) as fh:
            text = fh.read().strip()
    return Bits(text)


def _read_shift(path) -> ShiftDistribution:
    """Shift-law file: a JSON array of probabilities over shifts 0..k-1."""
    with open(path) as fh:
        return ShiftDistribution(json.load(fh))


def _load_params(path, n, q, budget=None) -> AlgoParams:
    if path is None:
        return desk_params(n, q, trace_budget=budget)
    import tomli
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    fields = raw.get("params", raw)
    base = desk_params(n, q, trace_budget=budget).as_dict()
    base.update(fields)
    if budget is not None:
        base["trace_budget"] = int(budget)
    return AlgoParams.from_dict(base)


def _seed(args):
    return resolve_seed(getattr(args, "seed", None), os.environ.get("TRACELAB_SEED"))


def _emit(args, text):
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, args.out_name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)


# -- channel ----------------------------------------------------------------

def cmd_channel_sample(args):
    x = _read_bits(args.input)
    ch = Channel(args.p)
    seed = _seed(args)
    for trial in range(args.trials):
        tr = sample_trace(x, ch, stream(seed, 1, trial))
        if args.with_indices:
            idx = ",".join(str(int(t)) for t in tr.kept)
            print(f"{tr.bits}\t{idx}")
        else:
            print(tr.bits)


def cmd_channel_stats(args):
    x = _read_bits(args.input)
    ch = Channel(args.p)
    lines = ["j,marginal"]
    for j in range(1, args.jmax + 1):
        lines.append(f"{j},{exact_bit_marginal(x, ch, j):.10g}")
    args.out_name = "channel_stats.csv"
    _emit(args, "\n".join(lines) + "\n")


# -- align ------------------------------------------------------------------

def cmd_align_greedy(args):
    x = _read_bits(args.x)
    y = _read_bits(args.y)
    fit = greedy_fit(y, x)
    print(",".join("inf" if v == float("inf") else str(v) for v in fit.as_list()))


def cmd_align_trackability(args):
    seed = _seed(args)
    x = random_bits(args.n, stream(seed, 2, 0))
    est = estimate_trackability(x, Channel(args.p), args.trials, stream(seed, 2, 1))
    lines = ["lambda,r_lambda"]
    for lam, r in zip(est.lam, est.r):
        lines.append(f"{lam},{r:.10g}")
    lines.append("alpha,beta")
    lines.append(f"{est.alpha:.10g},{est.beta:.10g}")
    args.out_name = "trackability.csv"
    _emit(args, "\n".join(lines) + "\n")
    if args.out:
        plots.save_lag_tail_curve(est, os.path.join(args.out, "trackability.svg"))


# -- anchors / goodness -------------------------------------------------------

def cmd_anchors_check(args):
    x = _read_bits(args.x)
    ch = Channel(args.p)
    gamma = args.gamma if args.gamma is not None else gamma_default(ch.p)
    seed = _seed(args)
    rep = estimate_distinguishability(x, args.a, ch, gamma, args.trials,
                                      stream(seed, 3, 0))
    out = {"a": rep.a, "gamma": rep.gamma, "estimate": rep.estimate,
           "stderr": rep.stderr, "threshold": rep.threshold,
           "verdict": bool(rep.verdict), "trials": rep.trials,
           "occurrence_rate": rep.occurrence_rate}
    args.out_name = "anchors_check.json"
    _emit(args, json.dumps(out, indent=2, sort_keys=True) + "\n")


def cmd_goodness(args):
    x = _read_bits(args.x)
    ch = Channel(args.p)
    params = _load_params(args.params, len(x), 1 - args.p)
    seed = _seed(args)
    rep = check_goodness(x, params, ch, args.trials, stream(seed, 4, 0))
    out = {"overall": bool(rep.overall),
           "max_run_ok": bool(rep.max_run_ok), "max_run": rep.max_run,
           "trackable_ok": bool(rep.trackable_ok),
           "alpha": rep.alpha, "beta": rep.beta,
           "windows": [{"start": w.start, "ok": bool(w.ok),
                        "block_offset": w.block_offset} for w in rep.windows],
           "trials": rep.trials}
    args.out_name = "goodness.json"
    _emit(args, json.dumps(out, indent=2, sort_keys=True) + "\n")


# -- stats --------------------------------------------------------------------

def cmd_stats_separate(args):
    x = _read_bits(args.x)
    y = _read_bits(args.y)
    sd = _read_shift(args.shift) if args.shift else ShiftDistribution.point(0)
    cert = find_separating_index(x, y, sd, Channel(args.p), j_max=args.jmax)
    out = {"j": cert.j, "gap": cert.gap, "j_max": cert.j_max,
           "tail_bound": cert.tail_bound}
    args.out_name = "separate.json"
    _emit(args, json.dumps(out, indent=2, sort_keys=True) + "\n")


def cmd_stats_identity(args):
    seed = _seed(args)
    rng = stream(seed, 5, 0)
    ch = Channel(args.p)
    worst = 0.0
    for _ in range(args.samples):
        k = int(rng.integers(1, 8))
        n = int(rng.integers(k + 1, args.len + 1))
        a = np.zeros(n)
        a[k:] = rng.integers(-1, 2, size=n - k)
        betas = rng.random(k)
        sd = ShiftDistribution(betas / betas.sum())
        w = rng.random() * np.exp(2j * np.pi * rng.random())
        if abs(ch.p * w + ch.q) < 1e-6:
            continue
        rep = verify_polynomial_identity(a, sd, ch, [w])
        worst = max(worst, rep.max_deviation)
    print(f"{worst:.6e}")


# -- reconstruct ----------------------------------------------------------------

def _print_reconstruction(args, res, truth=None):
    print(res.bits)
    if truth is not None:
        print(f"success={res.bits == truth}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "decisions.csv")
        with open(path, "w", newline="") as fh:
            fh.write("position,bit,reverse_pass,usable,gap,j_star,margin,"
                     "dominants,low_confidence,anchor_m,retried\n")
            for r in res.records:
                fh.write(f"{r.position},{r.bit},{int(r.reverse_pass)},{r.usable},"
                         f"{r.gap:.10g},{r.j_star},{r.margin:.10g},"
                         f"{r.dominant_count},{int(r.low_confidence)},"
                         f"{r.anchor_m if r.anchor_m is not None else ''},"
                         f"{int(r.retried)}\n")
        print(path)


def cmd_reconstruct_run(args):
    seed = _seed(args)
    ch = Channel(1.0 - args.q)
    params = _load_params(args.params, args.n, args.q, budget=args.traces)
    x = random_bits(args.n, stream(seed, 6, 0))
    sim_seed = int(stream(seed, 6, 1).integers(1 << 62))
    try:
        res = reconstruct(args.n, params, ch, ChannelSimulator(x, ch, sim_seed),
                          seed=sim_seed)
    except TracelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _print_reconstruction(args, res, truth=x)
    return 0


def cmd_reconstruct_from_file(args):
    with open(args.traces) as fh:
        traces = [Bits(line.strip()) for line in fh if line.strip()]
    ch = Channel(1.0 - args.q)
    params = _load_params(args.params, args.n, args.q, budget=len(traces))
    try:
        res = reconstruct(args.n, params, ch, traces, seed=_seed(args))
    except TracelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _print_reconstruction(args, res)
    return 0


# -- sweep / calibrate / verify / config --------------------------------------

def _config_from_args(args):
    overrides = dict(
        n_list=[int(v) for v in args.n] if args.n else None,
        q_list=[float(v) for v in args.q] if args.q else None,
        budgets=[None if int(v) == 0 else int(v) for v in args.budgets]
        if args.budgets else None,
        trials=args.trials,
        seed=resolve_seed(args.seed, os.environ.get("TRACELAB_SEED")),
        out_dir=args.out,
        workers=args.workers,
        cell_timeout_s=args.timeout_s,
    )
    return harness.load_config(args.config, **overrides)


def cmd_sweep(args):
    cfg = _config_from_args(args)
    result = (harness.run_baseline(args.baseline, cfg) if args.baseline
              else harness.run_success_sweep(cfg))
    text = "\n".join(harness.sweep_csv_lines(result)) + "\n"
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        name = "baseline.csv" if args.baseline else "sweep.csv"
        path = os.path.join(cfg.out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
        for p in plots.save_success_curves(result, cfg.out_dir):
            print(p)
    else:
        sys.stdout.write(text)
    return 0


def cmd_calibrate(args):
    """Probe increasing trace budgets until a cell reaches the target rate."""
    cfg = _config_from_args(args)
    lines = ["n,q,budget,successes,trials,success_rate"]
    for n in cfg.n_list:
        for q in cfg.q_list:
            budget = args.start_budget or desk_params(n, q).trace_budget // 4
            chosen = None
            while budget <= args.max_budget:
                probe = harness.ExperimentConfig(
                    n_list=[n], q_list=[q], budgets=[budget], trials=cfg.trials,
                    seed=cfg.seed, workers=cfg.workers,
                    params_overrides=cfg.params_overrides,
                    cell_timeout_s=cfg.cell_timeout_s)
                row = harness.run_success_sweep(probe).rows[0]
                lines.append(f"{n},{q:.10g},{budget},{row.successes},"
                             f"{row.trials},{row.success_rate:.10g}")
                print(lines[-1], file=sys.stderr)
                if row.success_rate >= args.target:
                    chosen = budget
                    break
                budget *= 2
            lines.append(f"# chosen n={n} q={q:g}: "
                         f"{chosen if chosen else 'not reached'}")
    text = "\n".join(lines) + "\n"
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        path = os.path.join(cfg.out_dir, "calibrate.csv")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args):
    seed = _seed(args)
    report = harness.run_lemma_suite(seed=seed, budget=args.budget)
    text = harness.lemma_report_json(report) + "\n"
    for name in sorted(report):
        print(f"{report[name]['status']:>12}  {name}", file=sys.stderr)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "verify.json")
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    failed = [n for n, r in report.items() if r["status"] == "fail"]
    return 1 if failed else 0


def cmd_config_show(args):
    cfg = harness.load_config(args.config)
    sys.stdout.write(harness.config_toml(cfg))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="tracelab",
                                 description="deletion-channel trace reconstruction toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: TRACELAB_SEED or 0)")

    def add_out(p):
        p.add_argument("--out", default=None, help="output directory")

    ch = sub.add_parser("channel", help="channel sampling and exact statistics")
    chs = ch.add_subparsers(dest="sub", required=True)
    p = chs.add_parser("sample")
    p.add_argument("--input", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--with-indices", action="store_true")
    add_seed(p)
    p.set_defaults(func=cmd_channel_sample)
    p = chs.add_parser("stats")
    p.add_argument("--input", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--jmax", type=int, required=True)
    add_out(p)
    p.set_defaults(func=cmd_channel_stats)

    al = sub.add_parser("align", help="greedy alignment tools")
    als = al.add_subparsers(dest="sub", required=True)
    p = als.add_parser("greedy")
    p.add_argument("--x", required=True, help="reference bits")
    p.add_argument("--y", required=True, help="string fitted into the reference")
    p.set_defaults(func=cmd_align_greedy)
    p = als.add_parser("trackability")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--trials", type=int, default=10000)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_align_trackability)

    an = sub.add_parser("anchors", help="anchor ambiguity estimators")
    ans = an.add_subparsers(dest="sub", required=True)
    p = ans.add_parser("check")
    p.add_argument("--x", required=True, help="bits or @file")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--trials", type=int, default=10000)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_anchors_check)

    p = sub.add_parser("goodness", help="run-length, lag-tail and anchor checks")
    p.add_argument("--x", required=True, help="bits or @file")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--trials", type=int, default=3000)
    p.add_argument("--params", default=None)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_goodness)

    st = sub.add_parser("stats", help="separation certificates and identity checks")
    sts = st.add_subparsers(dest="sub", required=True)
    p = sts.add_parser("separate")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--shift", default=None, help="JSON file with shift probabilities")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--jmax", type=int, default=None)
    add_out(p)
    p.set_defaults(func=cmd_stats_separate)
    p = sts.add_parser("identity")
    p.add_argument("--len", type=int, default=60)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--p", type=float, default=0.6)
    add_seed(p)
    p.set_defaults(func=cmd_stats_identity)

    rc = sub.add_parser("reconstruct", help="end-to-end reconstruction")
    rcs = rc.add_subparsers(dest="sub", required=True)
    p = rcs.add_parser("run")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--traces", type=int, default=None)
    p.add_argument("--params", default=None)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_reconstruct_run)
    p = rcs.add_parser("from-file")
    p.add_argument("--traces", required=True, help="file with one trace per line")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--params", default=None)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_reconstruct_from_file)

    def add_sweep_args(p):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--n", nargs="*", default=None)
        p.add_argument("--q", nargs="*", default=None)
        p.add_argument("--budgets", nargs="*", default=None,
                       help="trace budgets; 0 means calibrated default")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--timeout-s", type=float, default=None, dest="timeout_s")
        add_seed(p)
        add_out(p)

    p = sub.add_parser("sweep", help="success-rate sweep over (n, q, budget) cells")
    add_sweep_args(p)
    p.add_argument("--baseline", choices=harness.BASELINES, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="probe budgets until cells hit a target rate")
    add_sweep_args(p)
    p.add_argument("--target", type=float, default=0.9)
    p.add_argument("--start-budget", type=int, default=None)
    p.add_argument("--max-budget", type=int, default=2_000_000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="run the statistical property suite")
    p.add_argument("--budget", default="quick",
                   help="tiny | quick | full, or a numeric scale")
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_verify)

    cf = sub.add_parser("config", help="configuration utilities")
    cfs = cf.add_subparsers(dest="sub", required=True)
    p = cfs.add_parser("show")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_config_show)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except TracelabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
