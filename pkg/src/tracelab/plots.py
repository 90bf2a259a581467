"""Figure rendering for sweep and estimator reports.

All figures are written as self-contained SVG files with deterministic
content: a fixed hash salt and no creation date, so re-running a command with
the same seed reproduces the bytes.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_RC = {
    "svg.hashsalt": "tracelab",
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_success_curves(result, out_dir):
    """One SVG per n: success rate against the trace budget, one line per q."""
    paths = []
    by_n = {}
    for row in result.rows:
        by_n.setdefault(row.n, []).append(row)
    with plt.rc_context(_RC):
        for n, rows in sorted(by_n.items()):
            fig, ax = plt.subplots()
            by_q = {}
            for r in rows:
                by_q.setdefault(r.q, []).append(r)
            for q, rws in sorted(by_q.items()):
                rws = sorted(rws, key=lambda r: r.budget)
                ax.plot([r.budget for r in rws], [r.success_rate for r in rws],
                        marker="o", label=f"q={q:g}")
            ax.set_xlabel("traces")
            ax.set_ylabel("exact-recovery rate")
            ax.set_ylim(-0.03, 1.03)
            ax.set_title(f"{result.algorithm}, n={n}")
            ax.legend()
            path = os.path.join(out_dir, f"success_n{n}.svg")
            _save(fig, path)
            paths.append(path)
    return paths


def save_lag_tail_curve(estimate, out_path):
    """Tail probabilities of the maximum greedy lag with the fitted envelope."""
    import numpy as np
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        if estimate.lam.size:
            ax.semilogy(estimate.lam, estimate.r, marker="o", linestyle="none",
                        label="observed")
            if np.isfinite(estimate.beta) and estimate.beta > 0:
                lam = estimate.lam.astype(float)
                ax.semilogy(lam, np.exp(-(lam - estimate.alpha) / estimate.beta),
                            label=f"exp(-(lam-{estimate.alpha:.2f})/{estimate.beta:.2f})")
        ax.set_xlabel("lag threshold")
        ax.set_ylabel("tail probability")
        ax.legend()
        _save(fig, out_path)
    return out_path
