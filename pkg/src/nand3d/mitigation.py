"""Read-reference policies, mitigation mechanisms, and ECC sizing.

Policies map (pec, retention, layer) to the three read references. The
mechanisms layered on top:

* per-layer reference offset table learned from variation across layers
  (small SRAM table, two signed bytes per layer),
* retention-aware reference prediction from an online-fitted wear model,
* neighbor-assisted re-read that conditions references on the adjacent
  wordline's cell states,
* periodic refresh that bounds retention age at the cost of extra cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from . import fitting
from .models import CellContext, ErrorModelSet, eval_distribution, eval_vopt
from .sim import FlashSim, PageAddress, SimUsageError
from .voltage import STATES, VrefTriple

__all__ = [
    "ReadPolicy",
    "FixedDefaultPolicy",
    "WearTrackingPolicy",
    "ModelOptimalPolicy",
    "LavarTable",
    "LavarPolicy",
    "lavar_learn_analytic",
    "lavar_learn_mc",
    "RemarController",
    "RemarPolicy",
    "renac_reread",
    "fcr_refresh",
    "EccConfig",
    "ecc_capability_bits",
    "ecc_required_overhead",
    "codeword_fail_probability",
]

# ---------------------------------------------------------------------------
# read-reference policies


class ReadPolicy:
    """Maps cell condition to read references. Subclasses pin what they know."""

    name = "abstract"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        raise NotImplementedError


@dataclass
class FixedDefaultPolicy(ReadPolicy):
    """References frozen at the beginning-of-life calibration point.

    Models a controller with no adaptation: references tuned once for a
    fresh device at nominal dwell and never moved.
    """

    models: ErrorModelSet
    calibration_pec: float = 0.0
    calibration_retention_s: float = 3000.0
    name: str = "fixed_default"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        return eval_vopt(self.models, self.calibration_pec, self.calibration_retention_s)


@dataclass
class WearTrackingPolicy(ReadPolicy):
    """References follow program/erase wear but assume nominal retention.

    This is the strongest commonly deployed scheme: the controller knows
    the block's cycle count and re-tunes references for it, but prediction
    is anchored to a short fixed dwell rather than the actual data age.
    """

    models: ErrorModelSet
    assumed_retention_s: float = 3000.0
    name: str = "wear_tracking"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        return eval_vopt(self.models, pec, self.assumed_retention_s)


@dataclass
class ModelOptimalPolicy(ReadPolicy):
    """References predicted from both wear and actual retention age."""

    models: ErrorModelSet
    name: str = "retention_aware"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        return eval_vopt(self.models, pec, retention_s)


# ---------------------------------------------------------------------------
# per-layer reference offsets


@dataclass
class LavarTable:
    """Per-layer signed offsets for the two hard-read references.

    Stored as int8 pairs (d_va, d_vb) in reference-step units; d_vc stays 0
    because the top boundary varies little across layers. The table is the
    whole mechanism state: 2 bytes per layer.
    """

    d_va: np.ndarray
    d_vb: np.ndarray

    def __post_init__(self) -> None:
        self.d_va = np.asarray(self.d_va, dtype=np.int8)
        self.d_vb = np.asarray(self.d_vb, dtype=np.int8)
        if self.d_va.shape != self.d_vb.shape or self.d_va.ndim != 1:
            raise ValueError("offset arrays must be 1-D and equal length")

    @property
    def n_layers(self) -> int:
        return int(self.d_va.size)

    @property
    def size_bytes(self) -> int:
        return 2 * self.n_layers

    def offsets(self, layer: int) -> tuple[int, int]:
        return int(self.d_va[layer]), int(self.d_vb[layer])


@dataclass
class LavarPolicy(ReadPolicy):
    """Wraps a base policy with learned per-layer reference offsets."""

    base: ReadPolicy
    table: LavarTable
    name: str = "layer_aware"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        v = self.base.vrefs(pec, retention_s, layer=None)
        if layer is None:
            return v
        d_va, d_vb = self.table.offsets(layer)
        return v.shifted(da=d_va, db=d_vb)


def lavar_learn_analytic(
    models: ErrorModelSet,
    pec: float,
    retention_s: float,
    base_vrefs: VrefTriple | None = None,
    n_layers: int | None = None,
) -> LavarTable:
    """Exact per-layer offsets from the model's layer variation profile.

    Offsets are each layer's optimal (va, vb) minus the base references
    the table will be added to (default: the block-level model prediction
    at the learning condition), rounded to integer steps. Anchoring to the
    base keeps the table correct regardless of any bias between the block
    prediction and the true pooled optimum.
    """
    n = n_layers if n_layers is not None else models.profile.n_layers
    if base_vrefs is None:
        base_vrefs = eval_vopt(models, pec, retention_s)
    grid = models.grid()
    d_va = np.zeros(n, dtype=np.int8)
    d_vb = np.zeros(n, dtype=np.int8)
    for layer in range(n):
        ctx = CellContext(pec=pec, retention_s=retention_s, layer=layer)
        dists = [eval_distribution(models, ctx, s) for s in STATES]
        est = fitting.analytic_vopt(dists, grid)
        d_va[layer] = int(np.clip(round(est.va - base_vrefs.va), -128, 127))
        d_vb[layer] = int(np.clip(round(est.vb - base_vrefs.vb), -128, 127))
    return LavarTable(d_va=d_va, d_vb=d_vb)


def lavar_learn_mc(sim: FlashSim, chip: int, block: int, base_vrefs: VrefTriple) -> LavarTable:
    """Offsets measured from one sampled block via voltage sweeps.

    Groups the block's wordlines by layer, sweeps cell voltages against
    known data, and takes each layer's empirically best (va, vb) relative
    to the base references the table will be added to. The block must be
    programmed (blank wordlines are skipped).
    """
    geo = sim.geometry
    grid = sim.models.grid()
    programmed = sim.block_metadata(chip, block)["programmed"]
    by_layer: dict[int, list[np.ndarray]] = {}
    by_layer_states: dict[int, list[np.ndarray]] = {}
    for wl in range(geo.wordlines_per_block):
        if not programmed[wl]:
            continue
        layer = geo.layer_of(wl)
        by_layer.setdefault(layer, []).append(sim.sweep_read(chip, block, wl))
        by_layer_states.setdefault(layer, []).append(sim.true_states(chip, block, wl))
    if not by_layer:
        raise SimUsageError("block has no programmed wordlines to learn from")

    n = sim.geometry.n_layers
    d_va = np.zeros(n, dtype=np.int8)
    d_vb = np.zeros(n, dtype=np.int8)
    for layer, vth_list in sorted(by_layer.items()):
        vth = np.concatenate(vth_list)
        states = np.concatenate(by_layer_states[layer])
        est = fitting.empirical_vopt(vth, states, grid)
        d_va[layer] = int(np.clip(round(est.vrefs.va - base_vrefs.va), -128, 127))
        d_vb[layer] = int(np.clip(round(est.vrefs.vb - base_vrefs.vb), -128, 127))
    return LavarTable(d_va=d_va, d_vb=d_vb)


# ---------------------------------------------------------------------------
# retention-aware online model

_REF_NAMES = ("va", "vb", "vc")


class RemarController:
    """Online wear-and-retention model for read-reference prediction.

    Observes (pec, retention, best vref) triples from periodic calibration
    reads and refits per-reference linear models. Until a reference has
    enough spread to fit the full form, prediction falls back to the seed
    model. The top two references use value = (a*pec + b)*ln(t) + c*pec + d;
    the bottom reference is retention-invariant and uses value = c*pec + d.
    """

    min_samples = 8

    def __init__(self, models: ErrorModelSet):
        self.models = models
        self._obs: dict[str, list[tuple[float, float, float]]] = {n: [] for n in _REF_NAMES}
        self._fits: dict[str, fitting.OlsFit | None] = {n: None for n in _REF_NAMES}
        self.name = "retention_aware_online"

    def observe(self, pec: float, retention_s: float, vrefs: VrefTriple) -> None:
        for ref_name, value in zip(_REF_NAMES, vrefs.as_tuple()):
            self._obs[ref_name].append((float(pec), float(retention_s), float(value)))

    def n_observations(self, ref_name: str) -> int:
        return len(self._obs[ref_name])

    def refit(self) -> dict[str, fitting.OlsFit | None]:
        for ref_name in _REF_NAMES:
            obs = self._obs[ref_name]
            if len(obs) < self.min_samples:
                continue
            pec = np.array([o[0] for o in obs])
            t_s = np.array([o[1] for o in obs])
            val = np.array([o[2] for o in obs])
            distinct_pec = np.unique(pec).size
            distinct_t = np.unique(t_s).size
            try:
                if ref_name == "va":
                    if distinct_pec < 2:
                        continue
                    self._fits[ref_name] = fitting.ols_fit_pec_only(pec, val)
                else:
                    if distinct_pec < 2 or distinct_t < 2:
                        continue
                    self._fits[ref_name] = fitting.ols_fit(pec, t_s, val)
            except fitting.OlsRankError:
                continue
        return dict(self._fits)

    def fit_for(self, ref_name: str) -> fitting.OlsFit | None:
        return self._fits[ref_name]

    def predict(self, pec: float, retention_s: float) -> VrefTriple:
        seed = eval_vopt(self.models, pec, retention_s)
        vals = {}
        for ref_name, fallback in zip(_REF_NAMES, seed.as_tuple()):
            fit = self._fits[ref_name]
            vals[ref_name] = fallback if fit is None else fit.predict(pec, retention_s)
        va = min(vals["va"], vals["vb"] - 1.0)
        vc = max(vals["vc"], vals["vb"] + 1.0)
        return VrefTriple(va=va, vb=vals["vb"], vc=vc)


class RemarPolicy(ReadPolicy):
    """Policy view over a fitted online controller."""

    def __init__(self, controller: RemarController):
        self.controller = controller
        self.name = "retention_aware_online"

    def vrefs(self, pec: float, retention_s: float, layer: int | None = None) -> VrefTriple:
        return self.controller.predict(pec, retention_s)


# ---------------------------------------------------------------------------
# neighbor-assisted re-read


def renac_reread(
    sim: FlashSim,
    addr: PageAddress,
    vrefs: VrefTriple,
    adjust_steps: np.ndarray | None = None,
):
    """Re-read a failed page with references conditioned on neighbor state.

    Reads the next wordline (the retention-coupled aggressor) to classify
    each victim cell's neighbor, then re-reads the victim once per neighbor
    state with all three references shifted by that state's adjustment, and
    stitches the per-cell results. Cells on the last wordline have no
    neighbor and reuse the unshifted read. Intended as a recovery step after
    an ECC failure, not as the default read path.

    adjust_steps defaults to the victim-averaged column of the model's
    retention interference table at the page's actual retention age.
    """
    if sim.mode != "mc":
        raise SimUsageError("neighbor-assisted re-read needs per-cell state (mc mode)")
    neighbor_states = sim.neighbor_states_for_read(addr, vrefs)
    base = sim.read_page(addr, vrefs)
    if neighbor_states is None:
        return base
    if adjust_steps is None:
        model = sim.models.retention_interference
        if model is None:
            raise SimUsageError("no retention interference table to condition on")
        retention_s = sim.retention_s(addr.chip, addr.block)
        table = model.scaled_table(retention_s)
        adjust_steps = table.mean(axis=0)  # victim-averaged, per neighbor state
    adjust_steps = np.asarray(adjust_steps, dtype=np.float64)
    bits = base.bits.copy()
    n_flips = 0
    for nbr in range(4):
        mask = neighbor_states == nbr
        if not mask.any():
            continue
        shift = float(adjust_steps[nbr])
        shifted = VrefTriple(va=vrefs.va + shift, vb=vrefs.vb + shift, vc=vrefs.vc + shift)
        re_read = sim.read_page(addr, shifted)
        bits[mask] = re_read.bits[mask]
    true_bits = sim.true_page_bits(addr)
    n_err = int(np.count_nonzero(bits != true_bits))
    return base.replace_bits(bits, n_err)


# ---------------------------------------------------------------------------
# periodic refresh


def fcr_refresh(sim: FlashSim, chip: int, block: int) -> int:
    """Rewrite a block in place to reset its retention clock.

    Reads back the true stored data (refresh happens through the ECC path,
    so the rewritten data is the corrected original), erases, reprograms.
    Costs one program/erase cycle; returns the block's new cycle count.
    """
    data = sim.stored_block_data(chip, block)
    sim.erase_block(chip, block)
    for wl in sorted(data):
        msb, lsb = data[wl]
        sim.program_wordline(chip, block, wl, msb_bits=msb, lsb_bits=lsb, enforce_order=False)
    return sim.block_metadata(chip, block)["pec"]


# ---------------------------------------------------------------------------
# ECC sizing


@dataclass(frozen=True)
class EccConfig:
    k_bits: int = 8192
    parity_bits_per_error: int = 14
    target_codeword_fail: float = 1e-15
    rber_limit: float = 3e-3


def codeword_fail_probability(rber: float, k_bits: int, t: int, parity_bits_per_error: int) -> float:
    """P(more than t bit errors in a codeword of k data + t*m parity bits)."""
    n = k_bits + t * parity_bits_per_error
    if rber <= 0.0:
        return 0.0
    if rber >= 1.0:
        return 1.0
    # binomial survival P(X > t) for X ~ Bin(n, p)
    return float(betainc(t + 1, n - t, rber))


def ecc_capability_bits(rber: float, cfg: EccConfig) -> int:
    """Smallest correction capability t meeting the codeword failure target."""
    if rber <= 0.0:
        return 0
    t = 0
    while True:
        if codeword_fail_probability(rber, cfg.k_bits, t, cfg.parity_bits_per_error) <= cfg.target_codeword_fail:
            return t
        t += 1
        if t > cfg.k_bits:
            raise ValueError(f"no achievable capability for rber={rber}")


def ecc_required_overhead(rber: float, cfg: EccConfig) -> float:
    """Parity overhead (parity bits / data bits) to hit the failure target."""
    t = ecc_capability_bits(rber, cfg)
    return t * cfg.parity_bits_per_error / cfg.k_bits
