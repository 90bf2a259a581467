"""Tunable constants of the reconstruction algorithm.

The asymptotic analysis fixes these as functions of n with existential
constants; here every one of them is an explicit field.  `paper_shape` builds
defaults with the canonical ratios (anchor alignment window 40x the run cap,
anchor half-length the square root of that); `desk` profiles in
tracelab.calibrated override the ratios where the canonical ones are
unusable at small n.
"""

import math
from dataclasses import dataclass, field, fields, replace

from .errors import ParamError

PAD_POLICIES = ("zeros", "ones", "alternating")


@dataclass
class AlgoParams:
    run_cap: int            # M: no-run length bound and greedy slack unit
    anchor_half: int        # K0: anchors are 2*anchor_half bits
    align_tol: int          # K1: |aligned source - m| tolerance; shifts live in [0, 2*K1]
    head_len: int           # K2: length of the initial segment
    probe_depth: int        # K3: decided-block depth scale; j_max defaults to 4*K3
    trace_budget: int       # N: traces drawn per reconstruction
    ext_window: int = 6     # W: undecided bits enumerated per decision
    pad_policy: str = "alternating"
    pad_len: int = 24       # candidate tail padding beyond the extension window
    j_max: int = 0          # statistics horizon; 0 means 4*probe_depth
    min_gap: float = 0.0    # hard epsilon floor for certificates
    floor_scale: float = 0.85  # scale on the sampling floor sqrt(ln(2 j_max n)/(2 usable))
    tail_sigma: float = 2.5    # scale on unmodeled-position scatter in the whitener
    elim_margin: float = 0.0   # extra sigmas a loss must show before eliminating
    shift_trials: int = 20000  # Monte Carlo budget for the alignment-shift law
    min_aligned: int = 50      # minimum usable traces per decision
    track_beta: float = 4.0    # tail-scale threshold for the goodness trackability check
    stitch_overlap: int = 0    # extra bits reconstructed past n/2 for the stitch check
    anchor_check_trials: int = 0  # Monte Carlo confirmation budget in anchor choice
    anchor_life: int = 0       # bits an anchor may serve past its admissible range
                               # (0 = refresh on the head_len - 2*align_tol schedule)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.run_cap < 2:
            raise ParamError("run_cap must be >= 2")
        if not 1 <= self.anchor_half <= self.align_tol:
            raise ParamError("need 1 <= anchor_half <= align_tol")
        if not 2 * self.align_tol < self.head_len:
            raise ParamError("need 2*align_tol < head_len")
        if not self.head_len < self.probe_depth:
            raise ParamError("need head_len < probe_depth")
        if self.ext_window < 1:
            raise ParamError("ext_window must be >= 1")
        if self.pad_policy not in PAD_POLICIES:
            raise ParamError(f"pad_policy must be one of {PAD_POLICIES}")
        if self.pad_len < 0:
            raise ParamError("pad_len must be >= 0")
        if not self.trace_budget >= self.min_aligned >= 1:
            raise ParamError("need trace_budget >= min_aligned >= 1")
        if self.shift_trials < 1:
            raise ParamError("shift_trials must be >= 1")
        if self.stitch_overlap < 0:
            raise ParamError("stitch_overlap must be >= 0")
        return self

    @property
    def effective_j_max(self):
        return self.j_max if self.j_max > 0 else 4 * self.probe_depth

    def replace(self, **kw):
        return replace(self, **kw)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParamError(f"unknown parameter fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def paper_shape(cls, n, q):
        """Defaults with the canonical ratios; sound asymptotically, heavy at small n."""
        if n < 4:
            raise ParamError("n too small")
        m = max(2, math.ceil(2 * math.log2(n)))
        k1 = 40 * m
        k0 = math.ceil(math.sqrt(k1))
        # the sqrt(k1)*log n shape only clears 2*k1 for very large n; clamp
        k2 = max(math.ceil(4 * math.sqrt(k1) * math.log2(n)), 2 * k1 + 8 * m)
        k3 = k2 + 2 * k1
        budget = math.ceil(math.exp(2.5 * math.sqrt(math.log(n))))
        return cls(run_cap=m, anchor_half=k0, align_tol=k1, head_len=k2,
                   probe_depth=k3, trace_budget=budget)


def gamma_default(p):
    """Default anchor-ambiguity ratio (2p)^(-1/2); below 1 exactly when p > 1/2."""
    return (2.0 * p) ** -0.5
