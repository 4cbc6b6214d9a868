"""Fitted wear/retention error models and peripheral error mechanisms.

The ground-truth model is a set of 13 fitted rows, one per modeled
variable, each evaluating

    value = (alpha * pec + beta) * ln(t_seconds) + gamma * pec + delta

where pec is the program/erase cycle count and t the retention time in
seconds (natural log). Two rows give log RBER for the MSB/LSB pages, eight
give the mean/stdev of the four state distributions, and three give the
block-level optimal read reference voltages (the va row has no retention
dependence: va = gamma * pec + delta).

Layer-to-layer process variation, program interference, read disturb,
read errors and retention interference are layered on top as separate
small models; eval_distribution composes them for a given cell context.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .voltage import State, StateDistribution, VrefTriple, optimal_boundary

__all__ = [
    "ROW_NAMES",
    "WearRow",
    "ModelDomainError",
    "ModelDomainWarning",
    "RetentionWearModel",
    "CellContext",
    "LayerVariationProfile",
    "ProgramInterferenceModel",
    "ReadDisturbModel",
    "ReadErrorModel",
    "RetentionInterferenceModel",
    "ErrorModelSet",
    "eval_distribution",
    "eval_rber",
    "eval_vopt",
    "gamma_rber_pdf",
    "SECONDS_24D",
]

RBER_ROWS = ("log_rber_msb", "log_rber_lsb")
MEAN_ROWS = ("mu_er", "mu_p1", "mu_p2", "mu_p3")
SIGMA_ROWS = ("sigma_er", "sigma_p1", "sigma_p2", "sigma_p3")
VOPT_ROWS = ("vopt_a", "vopt_b", "vopt_c")
ROW_NAMES = RBER_ROWS + MEAN_ROWS + SIGMA_ROWS + VOPT_ROWS

SECONDS_24D = 24.0 * 86400.0


class ModelDomainError(ValueError):
    """Raised when a (pec, t) query falls outside the fitted domain."""


class ModelDomainWarning(UserWarning):
    """Issued instead of ModelDomainError when the model is permissive."""


@dataclass(frozen=True)
class WearRow:
    """One fitted row: value = (alpha*pec + beta)*ln(t) + gamma*pec + delta."""

    alpha: float
    beta: float
    gamma: float
    delta: float
    adj_r2: float | None = None

    def value(self, pec: float, log_t: float) -> float:
        return (self.alpha * pec + self.beta) * log_t + self.gamma * pec + self.delta


@dataclass
class RetentionWearModel:
    """The 13 fitted wear/retention rows plus their supported domain."""

    rows: dict[str, WearRow]
    pec_max: float = 20000.0
    t_min_s: float = 60.0
    t_max_s: float = 1.0e7
    permissive: bool = False

    def __post_init__(self) -> None:
        missing = [name for name in ROW_NAMES if name not in self.rows]
        if missing:
            raise ValueError(f"model is missing rows: {missing}")

    def check_domain(self, pec: float, t_s: float) -> None:
        if 0.0 <= pec <= self.pec_max and self.t_min_s <= t_s <= self.t_max_s:
            return
        msg = (
            f"(pec={pec}, t={t_s}s) outside fitted domain "
            f"[0, {self.pec_max}] x [{self.t_min_s}, {self.t_max_s}]s"
        )
        if self.permissive:
            warnings.warn(msg, ModelDomainWarning)
        else:
            raise ModelDomainError(msg)

    def value(self, name: str, pec: float, t_s: float) -> float:
        self.check_domain(pec, t_s)
        return self.rows[name].value(pec, math.log(t_s))


@dataclass(frozen=True)
class CellContext:
    """Everything the models need to know about one cell's situation."""

    pec: float
    retention_s: float
    layer: int = 0
    read_disturbs: int = 0
    neighbor_state: State | None = None


class LayerVariationProfile:
    """Per-layer offsets relative to the reference layer (layer 0, topmost).

    Carries additive offsets for the ER mean, the ER/P1 stdevs, and the
    layer-aware optimal va/vb. The erased state varies most from layer to
    layer (erase depth is not verify-clamped) and P1's width varies with
    program-verify margin; the programmed means are pinned by verify. All
    offsets are zero at layer 0. The va/vb offsets are derived from the
    distribution offsets at construction time (pdf-equality boundaries at a
    reference context), so the profile stays self-consistent with the wear
    model it was built against.
    """

    def __init__(
        self,
        d_mu_er: np.ndarray,
        d_sigma_er: np.ndarray,
        d_sigma_p1: np.ndarray,
        d_va: np.ndarray,
        d_vb: np.ndarray,
    ):
        arrays = [
            np.asarray(a, dtype=float)
            for a in (d_mu_er, d_sigma_er, d_sigma_p1, d_va, d_vb)
        ]
        n = arrays[0].shape[0]
        if any(a.shape != (n,) for a in arrays):
            raise ValueError("profile arrays must share one length")
        for a in arrays:
            if a[0] != 0.0:
                raise ValueError("reference layer (layer 0) offsets must be zero")
        (
            self.d_mu_er,
            self.d_sigma_er,
            self.d_sigma_p1,
            self.d_va,
            self.d_vb,
        ) = arrays

    @property
    def n_layers(self) -> int:
        return self.d_mu_er.shape[0]

    def mean_offset(self, state: State, layer: int) -> float:
        if state == State.ER:
            return float(self.d_mu_er[layer])
        return 0.0

    def stdev_offset(self, state: State, layer: int) -> float:
        if state == State.ER:
            return float(self.d_sigma_er[layer])
        if state == State.P1:
            return float(self.d_sigma_p1[layer])
        return 0.0

    @classmethod
    def flat(cls, n_layers: int) -> "LayerVariationProfile":
        z = np.zeros(n_layers)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def from_knots(
        cls,
        wear: RetentionWearModel,
        n_layers: int,
        knot_x: list[float],
        d_mu_er: list[float],
        d_sigma_er: list[float],
        d_sigma_p1: list[float],
        vopt_ref_pec: float = 10000.0,
        vopt_ref_t_s: float = 3000.0,
    ) -> "LayerVariationProfile":
        """Build a piecewise-linear profile over normalized layer positions.

        Layer i maps to x = 100*i/(n_layers-1) (layer 0 is the top). The
        offset curves interpolate the given knot values; knot_x[0] must be 0
        with zero offsets so the reference layer stays clean. va/vb offsets
        are computed from the per-layer pdf-equality boundaries at the
        reference context, relative to layer 0's boundaries.
        """
        if knot_x[0] != 0.0:
            raise ValueError("first knot must sit at x=0")
        if n_layers < 2:
            x = np.zeros(n_layers)
        else:
            x = 100.0 * np.arange(n_layers) / (n_layers - 1)
        mu_er = np.interp(x, knot_x, d_mu_er)
        sig_er = np.interp(x, knot_x, d_sigma_er)
        sig_p1 = np.interp(x, knot_x, d_sigma_p1)
        # Force exact zeros at the reference layer (interp is exact at knots,
        # this just guards against odd knot inputs).
        mu_er[0], sig_er[0], sig_p1[0] = 0.0, 0.0, 0.0

        log_t = math.log(vopt_ref_t_s)
        mu = {n: wear.rows[n].value(vopt_ref_pec, log_t) for n in MEAN_ROWS}
        sd = {n: wear.rows[n].value(vopt_ref_pec, log_t) for n in SIGMA_ROWS}

        def boundaries(i: int) -> tuple[float, float]:
            er = StateDistribution(mu["mu_er"] + mu_er[i], sd["sigma_er"] + sig_er[i])
            p1 = StateDistribution(mu["mu_p1"], sd["sigma_p1"] + sig_p1[i])
            p2 = StateDistribution(mu["mu_p2"], sd["sigma_p2"])
            va = optimal_boundary(er, p1)
            vb = optimal_boundary(p1, p2)
            return va, vb

        base_va, base_vb = boundaries(0)
        d_va = np.zeros(n_layers)
        d_vb = np.zeros(n_layers)
        for i in range(1, n_layers):
            va_i, vb_i = boundaries(i)
            d_va[i] = va_i - base_va
            d_vb[i] = vb_i - base_vb
        return cls(mu_er, sig_er, sig_p1, d_va, d_vb)


@dataclass(frozen=True)
class ProgramInterferenceModel:
    """Capacitive-coupling shift on a victim cell per aggressor voltage swing.

    Programming wordline N+1 shifts wordline N cells by coupling_next times
    the aggressor's program swing; programming wordline N shifts the
    still-erased cells of wordline N+1 by coupling_prev times the swing
    (only ER-state victims keep that shift, later programming overwrites it).
    """

    coupling_next: float = 0.027
    coupling_prev: float = 0.0008


@dataclass(frozen=True)
class ReadDisturbModel:
    """Linear per-read drift of each state's mean and stdev, in steps."""

    mean_step_per_read: tuple[float, float, float, float]
    stdev_step_per_read: tuple[float, float, float, float]

    def mean_shift(self, state: State, reads: int) -> float:
        return self.mean_step_per_read[state] * reads

    def stdev_shift(self, state: State, reads: int) -> float:
        return self.stdev_step_per_read[state] * reads


@dataclass(frozen=True)
class ReadErrorModel:
    """Comparator error probability, decaying exponentially in |vref - vth|."""

    amplitude: float = 0.35
    decay_per_step: float = 0.7

    def probability(self, offset_steps):
        p = self.amplitude * np.exp(-self.decay_per_step * np.abs(offset_steps))
        return np.clip(p, 0.0, 0.5)


class RetentionInterferenceModel:
    """Neighbor-state-dependent retention drift adjustment.

    adjust_steps[victim, neighbor] is the signed mean adjustment in steps at
    the reference retention; a higher neighbor state means less charge loss,
    so rows are nondecreasing in neighbor rank. Other retention times scale
    the adjustment by ln(t)/ln(t_ref).
    """

    def __init__(self, adjust_steps, t_ref_s: float = SECONDS_24D):
        table = np.asarray(adjust_steps, dtype=float)
        if table.shape != (4, 4):
            raise ValueError("adjust_steps must be 4x4 (victim x neighbor)")
        self.adjust_steps = table
        self.t_ref_s = float(t_ref_s)

    def scale(self, t_s: float) -> float:
        return math.log(t_s) / math.log(self.t_ref_s)

    def adjust(self, victim: State, neighbor: State, t_s: float) -> float:
        return float(self.adjust_steps[victim, neighbor]) * self.scale(t_s)

    def scaled_table(self, t_s: float) -> np.ndarray:
        return self.adjust_steps * self.scale(t_s)

    @classmethod
    def symmetric(cls, span_steps: float = 2.0, t_ref_s: float = SECONDS_24D):
        """Victim-independent adjustments spanning span_steps, centered."""
        ranks = np.arange(4.0)
        row = (ranks - 1.5) * (span_steps / 3.0)
        return cls(np.tile(row, (4, 1)), t_ref_s)


@dataclass
class ErrorModelSet:
    """Bundle of all ground-truth models used by the simulator and policies."""

    wear: RetentionWearModel
    profile: LayerVariationProfile
    interference: ProgramInterferenceModel
    read_disturb: ReadDisturbModel
    read_error: ReadErrorModel
    retention_interference: RetentionInterferenceModel
    grid_lo: float = -50.0
    grid_hi: float = 350.0
    grid_step: float = 1.0

    def grid(self) -> np.ndarray:
        n = int(round((self.grid_hi - self.grid_lo) / self.grid_step)) + 1
        return self.grid_lo + self.grid_step * np.arange(n)

    def with_profile(self, profile: LayerVariationProfile) -> "ErrorModelSet":
        return ErrorModelSet(
            wear=self.wear,
            profile=profile,
            interference=self.interference,
            read_disturb=self.read_disturb,
            read_error=self.read_error,
            retention_interference=self.retention_interference,
            grid_lo=self.grid_lo,
            grid_hi=self.grid_hi,
            grid_step=self.grid_step,
        )


_STATE_MEAN_ROW = {State.ER: "mu_er", State.P1: "mu_p1", State.P2: "mu_p2", State.P3: "mu_p3"}
_STATE_SIGMA_ROW = {State.ER: "sigma_er", State.P1: "sigma_p1", State.P2: "sigma_p2", State.P3: "sigma_p3"}


def eval_distribution(models: ErrorModelSet, ctx: CellContext, state: State) -> StateDistribution:
    """Ground-truth threshold distribution of one state in a given context.

    Composes the wear/retention row, the layer offset, read-disturb drift
    and (when a neighbor state is known) the retention-interference
    adjustment. Program interference is an event-driven per-cell shift and
    is handled by the simulator, not here.
    """
    state = State(state)
    wear = models.wear
    wear.check_domain(ctx.pec, ctx.retention_s)
    log_t = math.log(ctx.retention_s)
    mean = wear.rows[_STATE_MEAN_ROW[state]].value(ctx.pec, log_t)
    stdev = wear.rows[_STATE_SIGMA_ROW[state]].value(ctx.pec, log_t)
    mean += models.profile.mean_offset(state, ctx.layer)
    stdev += models.profile.stdev_offset(state, ctx.layer)
    if ctx.read_disturbs:
        mean += models.read_disturb.mean_shift(state, ctx.read_disturbs)
        stdev += models.read_disturb.stdev_shift(state, ctx.read_disturbs)
    if ctx.neighbor_state is not None:
        mean += models.retention_interference.adjust(state, ctx.neighbor_state, ctx.retention_s)
    if stdev <= 0.0:
        raise ModelDomainError(f"model stdev collapsed to {stdev} for {state.name} at {ctx}")
    return StateDistribution(mean, stdev)


def eval_rber(models: ErrorModelSet, ctx: CellContext, page_type: str) -> float:
    """Block-level fitted RBER for a page type ("msb" or "lsb")."""
    row = {"msb": "log_rber_msb", "lsb": "log_rber_lsb"}[page_type]
    return math.exp(models.wear.value(row, ctx.pec, ctx.retention_s))


def eval_vopt(
    models: ErrorModelSet, pec: float, retention_s: float, layer: int | None = None
) -> VrefTriple:
    """Model-predicted optimal read references.

    layer=None gives the block-level (variation-agnostic) prediction; with a
    layer index the profile's va/vb offsets are added (vc does not vary by
    layer).
    """
    wear = models.wear
    wear.check_domain(pec, retention_s)
    log_t = math.log(retention_s)
    va = wear.rows["vopt_a"].value(pec, log_t)
    vb = wear.rows["vopt_b"].value(pec, log_t)
    vc = wear.rows["vopt_c"].value(pec, log_t)
    if layer is not None:
        va += float(models.profile.d_va[layer])
        vb += float(models.profile.d_vb[layer])
    return VrefTriple(va, vb, vc)


def gamma_rber_pdf(x, shape: float, scale: float):
    """Gamma density x^(a-1) e^(-x/s) / (Gamma(a) s^a), the RBER-variation model."""
    if shape <= 0.0 or scale <= 0.0:
        raise ValueError("shape and scale must be positive")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0.0
    xp = x[pos]
    log_pdf = (shape - 1.0) * np.log(xp) - xp / scale - math.lgamma(shape) - shape * math.log(scale)
    out[pos] = np.exp(log_pdf)
    if out.ndim == 0:
        return float(out)
    return out
