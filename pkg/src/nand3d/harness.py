"""Experiment harness: validated configs, RBER sweeps, lifetime scans,
characterization replication, and CSV/SVG emission.

Every CSV starts with a provenance comment line carrying the config hash
and the master seed; identical configs reproduce byte-identical files.
Independent (policy, PEC) sweep cells draw their randomness from sub-seeds
forked from (master seed, cell index), so results do not depend on
execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .config import build_models, config_hash, load_model_dict
from .fitting import OlsFit, gamma_fit, gaussian_fit, kl_divergence, ols_fit, ols_fit_pec_only
from .mitigation import (
    EccConfig,
    FixedDefaultPolicy,
    LavarPolicy,
    ModelOptimalPolicy,
    ReadPolicy,
    WearTrackingPolicy,
    ecc_required_overhead,
    lavar_learn_analytic,
)
from .models import (
    SECONDS_24D,
    CellContext,
    ErrorModelSet,
    LayerVariationProfile,
    eval_distribution,
    gamma_rber_pdf,
)
from .raid import RaidLayout, build_liraid_layout, worst_case_group_rber
from .sim import ChipGeometry, FlashSim, PageAddress, PageRberSample
from .voltage import STATES, State, StateDistribution, VrefTriple, expected_rber, optimal_boundary

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_experiment_config",
    "build_policy",
    "POLICY_NAMES",
    "LIFETIME_STACKS",
    "SweepResult",
    "LifetimeResult",
    "ReplicationResult",
    "run_rber_sweep",
    "run_lifetime",
    "run_characterization_replication",
    "emit_plots",
    "write_csv",
    "read_csv",
]


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries file:line when known."""


# ---------------------------------------------------------------------------
# experiment config

POLICY_NAMES = (
    "fixed_default",
    "wear_tracking",
    "retention_aware",
    "layer_aware",
    "layer_retention_aware",
)

_DEFAULT_GRID = tuple(range(0, 20001, 1000))


@dataclass
class ExperimentConfig:
    """One experiment: a model, a device geometry, policies, and a sweep grid."""

    seed: int
    mode: str = "analytic"
    model_path: Path | None = None
    outdir: Path = Path("out")
    chips: int = 32
    blocks_per_chip: int = 1
    wordlines_per_block: int = 32
    cells_per_wordline: int = 4096
    policies: tuple[str, ...] = ("wear_tracking", "layer_aware")
    retention_s: float = 3000.0
    lifetime_retention_s: float = SECONDS_24D
    pec_grid: tuple[int, ...] = _DEFAULT_GRID
    ecc: EccConfig = field(default_factory=EccConfig)
    lavar_learn_pec: float = 10000.0
    lavar_learn_retention_s: float = 3000.0
    raw: dict = field(default_factory=dict, repr=False)

    def geometry(self) -> ChipGeometry:
        return ChipGeometry(
            chips=self.chips,
            blocks_per_chip=self.blocks_per_chip,
            wordlines_per_block=self.wordlines_per_block,
            cells_per_wordline=self.cells_per_wordline,
        )

    def load_models(self, permissive: bool = False) -> tuple[ErrorModelSet, str]:
        """Build the model set plus the provenance hash of (experiment, model)."""
        model_cfg = load_model_dict(self.model_path)
        models = build_models(model_cfg, n_layers=self.wordlines_per_block, permissive=permissive)
        return models, config_hash(self.raw, model_cfg)


def _node_lines(text: str) -> dict[tuple, int]:
    """Map of config key paths to 1-based source lines, for error messages."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                sub = path + (key_node.value,)
                lines[sub] = key_node.start_mark.line + 1
                walk(value_node, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                sub = path + (i,)
                lines[sub] = item.start_mark.line + 1
                walk(item, sub)

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


class _Validator:
    """Field access with file:line context on every complaint."""

    def __init__(self, data: dict, lines: dict[tuple, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def fail(self, path: tuple, message: str) -> ConfigError:
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: {message}")

    def get(self, *path, default=None, required=False):
        node = self.data
        for key in path:
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and 0 <= key < len(node):
                node = node[key]
            else:
                if required:
                    raise self.fail(path[:-1] if len(path) > 1 else (), f"missing required key {'.'.join(map(str, path))!r}")
                return default
        return node

    def typed(self, kind, *path, default=None, required=False):
        value = self.get(*path, default=default, required=required)
        if value is default and not required:
            return default
        try:
            out = kind(value)
        except (TypeError, ValueError):
            raise self.fail(path, f"{'.'.join(map(str, path))} must be a {kind.__name__}, got {value!r}") from None
        if kind is int and isinstance(value, float) and value != out:
            raise self.fail(path, f"{'.'.join(map(str, path))} must be an integer, got {value!r}")
        return out


def _parse_grid(v: _Validator) -> tuple[int, ...]:
    raw = v.get("pec_grid")
    if raw is None:
        return _DEFAULT_GRID
    if isinstance(raw, dict):
        start = v.typed(int, "pec_grid", "start", required=True)
        stop = v.typed(int, "pec_grid", "stop", required=True)
        step = v.typed(int, "pec_grid", "step", default=1000)
        if step <= 0:
            raise v.fail(("pec_grid", "step"), "pec_grid.step must be positive")
        if stop < start:
            raise v.fail(("pec_grid", "stop"), "pec_grid.stop must be at least pec_grid.start")
        return tuple(range(start, stop + 1, step))
    if isinstance(raw, list):
        grid = tuple(v.typed(int, "pec_grid", i) for i in range(len(raw)))
        if len(grid) < 1:
            raise v.fail(("pec_grid",), "pec_grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise v.fail(("pec_grid",), "pec_grid must be strictly ascending")
        if grid[0] < 0:
            raise v.fail(("pec_grid", 0), "pec_grid values must be nonnegative")
        return grid
    raise v.fail(("pec_grid",), "pec_grid must be a list or a {start, stop, step} mapping")


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment YAML; raises ConfigError with
    file:line positions for every rejected field."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a key/value mapping")
    v = _Validator(data, _node_lines(text), str(path))

    known = {
        "seed", "mode", "model", "outdir", "geometry", "policies", "retention_s",
        "lifetime_retention_s", "pec_grid", "ecc", "lavar",
    }
    for key in data:
        if key not in known:
            raise v.fail((key,), f"unknown config key {key!r}")

    seed = v.typed(int, "seed", required=True)
    if seed < 0:
        raise v.fail(("seed",), "seed must be nonnegative")
    mode = v.typed(str, "mode", default="analytic")
    if mode not in ("mc", "analytic"):
        raise v.fail(("mode",), f"mode must be 'mc' or 'analytic', got {mode!r}")

    model_path = v.get("model")
    if model_path is not None:
        model_path = Path(str(model_path))
        if not model_path.is_absolute():
            model_path = path.parent / model_path
        if not model_path.exists():
            raise v.fail(("model",), f"model file {model_path} does not exist")

    geometry_fields = {
        "chips": 32, "blocks_per_chip": 1, "wordlines_per_block": 32, "cells_per_wordline": 4096,
    }
    geom = {}
    for name, default in geometry_fields.items():
        geom[name] = v.typed(int, "geometry", name, default=default)
        if geom[name] < 1:
            raise v.fail(("geometry", name), f"geometry.{name} must be positive")

    raw_policies = v.get("policies", default=["wear_tracking", "layer_aware"])
    if not isinstance(raw_policies, list) or not raw_policies:
        raise v.fail(("policies",), "policies must be a non-empty list")
    policies = []
    for i, name in enumerate(raw_policies):
        if name not in POLICY_NAMES:
            raise v.fail(("policies", i), f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
        policies.append(name)

    retention_s = v.typed(float, "retention_s", default=3000.0)
    if retention_s <= 0:
        raise v.fail(("retention_s",), "retention_s must be positive")
    lifetime_retention_s = v.typed(float, "lifetime_retention_s", default=SECONDS_24D)
    if lifetime_retention_s <= 0:
        raise v.fail(("lifetime_retention_s",), "lifetime_retention_s must be positive")

    ecc = EccConfig(
        k_bits=v.typed(int, "ecc", "k_bits", default=8192),
        parity_bits_per_error=v.typed(int, "ecc", "parity_bits_per_error", default=14),
        target_codeword_fail=v.typed(float, "ecc", "target_codeword_fail", default=1e-15),
        rber_limit=v.typed(float, "ecc", "rber_limit", default=3e-3),
    )
    if ecc.k_bits < 1 or ecc.parity_bits_per_error < 1:
        raise v.fail(("ecc",), "ecc sizes must be positive")
    if not 0.0 < ecc.target_codeword_fail < 1.0:
        raise v.fail(("ecc", "target_codeword_fail"), "target_codeword_fail must be in (0, 1)")
    if not 0.0 < ecc.rber_limit < 1.0:
        raise v.fail(("ecc", "rber_limit"), "rber_limit must be in (0, 1)")

    return ExperimentConfig(
        seed=seed,
        mode=mode,
        model_path=model_path,
        outdir=Path(str(v.get("outdir", default="out"))),
        chips=geom["chips"],
        blocks_per_chip=geom["blocks_per_chip"],
        wordlines_per_block=geom["wordlines_per_block"],
        cells_per_wordline=geom["cells_per_wordline"],
        policies=tuple(policies),
        retention_s=retention_s,
        lifetime_retention_s=lifetime_retention_s,
        pec_grid=_parse_grid(v),
        ecc=ecc,
        lavar_learn_pec=v.typed(float, "lavar", "learn_pec", default=10000.0),
        lavar_learn_retention_s=v.typed(float, "lavar", "learn_retention_s", default=3000.0),
        raw=data,
    )


# ---------------------------------------------------------------------------
# policies

def build_policy(models: ErrorModelSet, name: str, cfg: ExperimentConfig) -> ReadPolicy:
    """Instantiate a named read policy against a model set."""
    if name == "fixed_default":
        return FixedDefaultPolicy(models)
    if name == "wear_tracking":
        return WearTrackingPolicy(models)
    if name == "retention_aware":
        return ModelOptimalPolicy(models)
    if name == "layer_aware":
        base = WearTrackingPolicy(models)
        table = lavar_learn_analytic(
            models, cfg.lavar_learn_pec, cfg.lavar_learn_retention_s,
            n_layers=cfg.wordlines_per_block,
        )
        return LavarPolicy(base=base, table=table, name=name)
    if name == "layer_retention_aware":
        base = ModelOptimalPolicy(models)
        table = lavar_learn_analytic(
            models, cfg.lavar_learn_pec, cfg.lavar_learn_retention_s,
            base_vrefs=base.vrefs(cfg.lavar_learn_pec, cfg.lavar_learn_retention_s),
            n_layers=cfg.wordlines_per_block,
        )
        return LavarPolicy(base=base, table=table, name=name)
    raise ConfigError(f"unknown policy {name!r}")


def _cell_seed(master_seed: int, cell_index: int) -> int:
    return int(np.random.SeedSequence((master_seed, cell_index)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# per-block RBER measurement

def analytic_block_rbers(
    models: ErrorModelSet, geometry: ChipGeometry, pec: float, retention_s: float, policy: ReadPolicy
) -> list[PageRberSample]:
    """Model-expected per-page RBER for every (wordline, page type) of a block."""
    out = []
    for wl in range(geometry.wordlines_per_block):
        layer = geometry.layer_of(wl)
        ctx = CellContext(pec=pec, retention_s=retention_s, layer=layer)
        dists = [eval_distribution(models, ctx, s) for s in STATES]
        est = expected_rber(dists, policy.vrefs(pec, retention_s, layer))
        out.append(PageRberSample(wordline=wl, layer=layer, page_type="msb", rber=est.msb))
        out.append(PageRberSample(wordline=wl, layer=layer, page_type="lsb", rber=est.lsb))
    return out


def mc_block_rbers(
    models: ErrorModelSet,
    geometry: ChipGeometry,
    pec: int,
    retention_s: float,
    policy: ReadPolicy,
    seed: int,
) -> list[PageRberSample]:
    """Monte Carlo per-page RBER of one freshly measured block.

    The block is wear-forwarded so its cycle count at program time equals
    `pec`, aged by `retention_s`, then read page by page under the policy.
    """
    sim = FlashSim(
        models,
        geometry=replace(geometry, chips=1, blocks_per_chip=1),
        seed=seed,
        mode="mc",
    )
    if pec > 0:
        sim.add_wear(0, 0, pec - 1)
    sim.program_block(0, 0)
    sim.advance_clock(retention_s)
    return sim.measure_block_rber(0, 0, policy)


def _block_samples(
    cfg: ExperimentConfig,
    models: ErrorModelSet,
    pec: int,
    retention_s: float,
    policy: ReadPolicy,
    cell_index: int,
) -> list[PageRberSample]:
    geometry = cfg.geometry()
    if cfg.mode == "analytic":
        return analytic_block_rbers(models, geometry, pec, retention_s, policy)
    return mc_block_rbers(models, geometry, pec, retention_s, policy, _cell_seed(cfg.seed, cell_index))


# ---------------------------------------------------------------------------
# CSV plumbing

def _format_field(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[tuple], cfg_hash: str, seed: int) -> Path:
    """Write rows with a provenance comment line; floats use repr so output
    is byte-stable and round-trips exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_hash={cfg_hash} seed={seed}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_field(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    """Read a harness CSV; returns (provenance, columns, string rows)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ConfigError(f"{path}: missing provenance comment line")
    meta = {}
    for token in lines[0][2:].split():
        if "=" in token:
            key, _, val = token.partition("=")
            meta[key] = val
    if len(lines) < 2:
        raise ConfigError(f"{path}: missing column header")
    columns = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:] if line]
    return meta, columns, rows


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = ["pec", "policy", "avg_rber", "worst_rber", "seed"]


@dataclass
class SweepResult:
    csv_path: Path
    rows: list[tuple]
    cfg_hash: str


def run_rber_sweep(cfg: ExperimentConfig, csv_name: str = "rber_sweep.csv") -> SweepResult:
    """Average and worst-case per-page RBER per (policy, PEC) cell.

    Cell index runs policy-major over the grid; each cell's sub-seed is
    forked from (master seed, cell index) so any execution order gives the
    same CSV.
    """
    models, cfg_hash = cfg.load_models()
    rows = []
    for p_idx, name in enumerate(cfg.policies):
        policy = build_policy(models, name, cfg)
        for g_idx, pec in enumerate(cfg.pec_grid):
            cell_index = p_idx * len(cfg.pec_grid) + g_idx
            samples = _block_samples(cfg, models, pec, cfg.retention_s, policy, cell_index)
            rbers = np.array([s.rber for s in samples])
            rows.append(
                (pec, name, float(rbers.mean()), float(rbers.max()), _cell_seed(cfg.seed, cell_index))
            )
    path = write_csv(cfg.outdir / csv_name, SWEEP_COLUMNS, rows, cfg_hash, cfg.seed)
    return SweepResult(csv_path=path, rows=rows, cfg_hash=cfg_hash)


# ---------------------------------------------------------------------------
# lifetime

# (stack key, display name, policy name, worst statistic over RAID group means)
LIFETIME_STACKS = (
    ("baseline", "fixed baseline", "fixed_default", False),
    ("sota", "wear tracking", "wear_tracking", False),
    ("lavar", "wear tracking + layer offsets", "layer_aware", False),
    ("lavar_li", "layer offsets + interleaved RAID", "layer_aware", True),
    ("full", "layer offsets + interleaved RAID + retention model", "layer_retention_aware", True),
)

LIFETIME_SCAN_COLUMNS = ["stack", "pec", "worst_rber", "seed"]
LIFETIME_SUMMARY_COLUMNS = [
    "stack", "endurance_pec", "improvement_ratio", "eol_rber", "ecc_overhead", "ecc_reduction",
]


@dataclass
class LifetimeResult:
    """Endurance per policy stack with ratios and ECC sizing.

    Endurance is the largest grid PEC whose worst-case RBER stays at or
    under the ECC limit; ratios compare against the fixed baseline; ECC
    overheads are evaluated at each stack's RBER at the end of the
    baseline's life, per the redundancy-comparison methodology.
    """

    retention_s: float
    rber_limit: float
    grid: tuple[int, ...]
    endurance: dict[str, int]
    ratio: dict[str, float]
    eol_rber: dict[str, float]
    ecc_overhead: dict[str, float]
    ecc_reduction: dict[str, float]
    scan: list[tuple]
    scan_csv: Path | None = None
    summary_csv: Path | None = None

    def stacks(self) -> list[str]:
        return [key for key, *_ in LIFETIME_STACKS]


def _group_stat(samples: list[PageRberSample], chips: int, layout: RaidLayout) -> float:
    # Analytic per-block samples apply to every chip of the stripe alike.
    rber_map = {}
    for chip in range(chips):
        for s in samples:
            rber_map[(chip, s.wordline, s.page_type)] = s.rber
    return worst_case_group_rber(layout, rber_map)


def _mc_stripe_stat(
    cfg: ExperimentConfig, models: ErrorModelSet, pec: int, retention_s: float,
    policy: ReadPolicy, layout: RaidLayout, cell_index: int,
) -> float:
    """Worst RAID-group mean over an MC stripe: independent block per chip."""
    sim = FlashSim(
        models,
        geometry=replace(cfg.geometry(), blocks_per_chip=1),
        seed=_cell_seed(cfg.seed, cell_index),
        mode="mc",
    )
    rber_map = {}
    for chip in range(cfg.chips):
        blanks = layout.blank_wordlines(chip)
        if pec > 0:
            sim.add_wear(chip, 0, pec - 1)
        sim.program_block(chip, 0, blanks=blanks)
    sim.advance_clock(retention_s)
    for chip in range(cfg.chips):
        for s in sim.measure_block_rber(chip, 0, policy):
            rber_map[(chip, s.wordline, s.page_type)] = s.rber
    return worst_case_group_rber(layout, rber_map)


def run_lifetime(cfg: ExperimentConfig) -> LifetimeResult:
    """Scan the PEC grid for each policy stack and size the ECC at the end
    of the baseline's life.

    The worst-case statistic is the maximum per-page RBER of a block; RAID
    stacks replace it with the worst per-group mean, which is what their
    parity striping exposes to the ECC.
    """
    models, cfg_hash = cfg.load_models()
    retention = cfg.lifetime_retention_s
    limit = cfg.ecc.rber_limit
    layout = build_liraid_layout(cfg.chips, cfg.wordlines_per_block)
    if len(cfg.pec_grid) < 2:
        raise ConfigError("lifetime needs a PEC grid with at least two points")

    stats: dict[str, list[float]] = {}
    scan_rows = []
    for s_idx, (key, _label, policy_name, grouped) in enumerate(LIFETIME_STACKS):
        policy = build_policy(models, policy_name, cfg)
        per_pec = []
        for g_idx, pec in enumerate(cfg.pec_grid):
            cell_index = s_idx * len(cfg.pec_grid) + g_idx
            if grouped and cfg.mode == "mc":
                stat = _mc_stripe_stat(cfg, models, pec, retention, policy, layout, cell_index)
            else:
                samples = _block_samples(cfg, models, pec, retention, policy, cell_index)
                if grouped:
                    stat = _group_stat(samples, cfg.chips, layout)
                else:
                    stat = max(s.rber for s in samples)
            per_pec.append(stat)
            scan_rows.append((key, pec, float(stat), _cell_seed(cfg.seed, cell_index)))
        stats[key] = per_pec

    endurance: dict[str, int] = {}
    for key, per_pec in stats.items():
        if per_pec[0] > limit:
            raise ConfigError(
                f"stack {key!r} already exceeds the ECC limit at PEC {cfg.pec_grid[0]}; extend PEC grid"
            )
        last_ok = cfg.pec_grid[0]
        for pec, stat in zip(cfg.pec_grid, per_pec):
            if stat > limit:
                break
            last_ok = pec
        else:
            if key == "baseline":
                raise ConfigError(
                    "baseline never exceeds the ECC limit within the grid; extend PEC grid"
                )
        endurance[key] = last_ok

    base_end = endurance["baseline"]
    base_idx = cfg.pec_grid.index(base_end)
    eol_rber = {key: float(stats[key][base_idx]) for key in stats}
    overhead = {key: ecc_required_overhead(eol_rber[key], cfg.ecc) for key in stats}
    base_ov = overhead["baseline"]
    result = LifetimeResult(
        retention_s=retention,
        rber_limit=limit,
        grid=cfg.pec_grid,
        endurance=endurance,
        ratio={k: (e / base_end if base_end > 0 else float("inf")) for k, e in endurance.items()},
        eol_rber=eol_rber,
        ecc_overhead=overhead,
        ecc_reduction={k: 1.0 - ov / base_ov for k, ov in overhead.items()},
        scan=scan_rows,
    )
    result.scan_csv = write_csv(
        cfg.outdir / "lifetime_scan.csv", LIFETIME_SCAN_COLUMNS, scan_rows, cfg_hash, cfg.seed
    )
    summary_rows = [
        (
            key,
            endurance[key],
            result.ratio[key],
            eol_rber[key],
            overhead[key],
            result.ecc_reduction[key],
        )
        for key, *_ in LIFETIME_STACKS
    ]
    result.summary_csv = write_csv(
        cfg.outdir / "lifetime_summary.csv", LIFETIME_SUMMARY_COLUMNS, summary_rows, cfg_hash, cfg.seed
    )
    return result


# ---------------------------------------------------------------------------
# characterization replication

REPLICATION_COLUMNS = ["block", "pec", "retention_s", "quantity", "value"]
_FIT_REPORT_COLUMNS = [
    "quantity", "alpha", "beta", "gamma", "delta",
    "ref_alpha", "ref_beta", "ref_gamma", "ref_delta", "max_rel_err", "adj_r2",
]
_GAMMA_REPORT_COLUMNS = ["page_type", "shape", "scale", "kl_nats", "n_pages"]

_MEAN_OF_STATE = {State.ER: "mu_er", State.P1: "mu_p1", State.P2: "mu_p2", State.P3: "mu_p3"}
_SIGMA_OF_STATE = {State.ER: "sigma_er", State.P1: "sigma_p1", State.P2: "sigma_p2", State.P3: "sigma_p3"}


def _fitted_crossings(vth: np.ndarray, states: np.ndarray) -> tuple[list[StateDistribution], VrefTriple]:
    """Per-state Gaussian fits of staircase data and their pdf crossings."""
    fitted = []
    for state in STATES:
        mean, stdev = gaussian_fit(vth[states == state])
        fitted.append(StateDistribution(mean, stdev))
    vrefs = VrefTriple(
        optimal_boundary(fitted[0], fitted[1]),
        optimal_boundary(fitted[1], fitted[2]),
        optimal_boundary(fitted[2], fitted[3]),
    )
    return fitted, vrefs


@dataclass
class RowRecovery:
    quantity: str
    fit: OlsFit
    reference: tuple[float, float, float, float]
    max_rel_err: float


@dataclass(frozen=True)
class GammaSpreadFit:
    page_type: str
    shape: float
    scale: float
    kl_nats: float
    n_pages: int


@dataclass
class ReplicationResult:
    rows: dict[str, RowRecovery]
    gamma: dict[str, GammaSpreadFit]
    samples_csv: Path
    report_csv: Path
    gamma_csv: Path

    def max_rel_err(self) -> float:
        return max(r.max_rel_err for r in self.rows.values())


def _recovery_error(fit: OlsFit, ref: tuple[float, float, float, float], floor: float = 1e-4) -> float:
    """Worst relative coefficient error, ignoring near-zero references."""
    worst = 0.0
    for got, want in zip((fit.alpha, fit.beta, fit.gamma, fit.delta), ref):
        if abs(want) > floor:
            worst = max(worst, abs(got - want) / abs(want))
    return worst


def run_characterization_replication(cfg: ExperimentConfig) -> ReplicationResult:
    """Regenerate the fitted model from simulated characterization.

    Ages 11 blocks to evenly spaced wear levels, measures each at 9
    log-spaced retention times (per-state staircase statistics, optimal
    references from the fitted distribution crossings, and page error
    rates at those references), refits all 13 model rows, and fits the
    page-to-page RBER spread at the mid-grid wear level with a gamma
    model, per page type, over 8 additional blocks.

    The layer profile and the interference mechanisms are disabled here:
    the wear/retention rows describe reference-layer single-cell behavior,
    and each overlay mechanism has its own dedicated experiment. Each row's
    recovery is reported against the same measurement channel evaluated
    noiselessly, which for the mean/stdev rows equals the seeded row
    coefficients.
    """
    if cfg.mode != "mc":
        raise ConfigError("characterization replication needs mode: mc")
    models, cfg_hash = cfg.load_models()
    models = models.with_profile(LayerVariationProfile.flat(cfg.wordlines_per_block))
    wear = models.wear

    pec_points = [int(round(p)) for p in np.linspace(0.0, wear.pec_max, 11)]
    t_lo = max(wear.t_min_s * 5.0, 300.0)
    t_hi = min(wear.t_max_s * 0.6, 6.0e6)
    t_points = list(np.geomspace(t_lo, t_hi, 9))

    sample_rows: list[tuple] = []
    observed: dict[str, list[tuple[float, float, float]]] = {}

    def record(block: int, pec: int, t_s: float, quantity: str, value: float) -> None:
        observed.setdefault(quantity, []).append((float(pec), float(t_s), float(value)))
        sample_rows.append((block, pec, float(t_s), quantity, float(value)))

    geometry = replace(cfg.geometry(), chips=1, blocks_per_chip=1)
    n_wl, n_cells = geometry.wordlines_per_block, geometry.cells_per_wordline

    for b_idx, pec in enumerate(pec_points):
        sim = FlashSim(
            models,
            geometry=geometry,
            seed=_cell_seed(cfg.seed, b_idx),
            mode="mc",
            enable_interference=False,
            enable_retention_interference=False,
        )
        if pec > 0:
            sim.add_wear(0, 0, pec - 1)
        sim.program_block(0, 0)
        actual_pec = sim.block_metadata(0, 0)["pec"]
        elapsed = 0.0
        for t_s in t_points:
            sim.advance_clock(t_s - elapsed)
            elapsed = t_s
            vth = np.concatenate([sim.sweep_read(0, 0, wl) for wl in range(n_wl)])
            states = np.concatenate([sim.true_states(0, 0, wl) for wl in range(n_wl)])
            fitted, vrefs = _fitted_crossings(vth, states)
            for state, dist in zip(STATES, fitted):
                record(b_idx, actual_pec, t_s, _MEAN_OF_STATE[state], dist.mean)
                record(b_idx, actual_pec, t_s, _SIGMA_OF_STATE[state], dist.stdev)
            record(b_idx, actual_pec, t_s, "vopt_a", vrefs.va)
            record(b_idx, actual_pec, t_s, "vopt_b", vrefs.vb)
            record(b_idx, actual_pec, t_s, "vopt_c", vrefs.vc)
            errors = {"msb": 0.0, "lsb": 0.0}
            for wl in range(n_wl):
                for page_type in ("msb", "lsb"):
                    r = sim.read_page(PageAddress(0, 0, wl, page_type), vrefs)
                    errors[page_type] += r.raw_errors
            bits = n_wl * n_cells
            # Half-count floor keeps the log defined when a block reads clean.
            record(b_idx, actual_pec, t_s, "log_rber_msb", math.log(max(errors["msb"], 0.5) / bits))
            record(b_idx, actual_pec, t_s, "log_rber_lsb", math.log(max(errors["lsb"], 0.5) / bits))

    gamma_pec = pec_points[len(pec_points) // 2]
    gamma_t = t_points[-1]
    gamma_pages: dict[str, list[float]] = {"msb": [], "lsb": []}
    for k in range(8):
        sim = FlashSim(
            models,
            geometry=geometry,
            seed=_cell_seed(cfg.seed, 1000 + k),
            mode="mc",
            enable_interference=False,
            enable_retention_interference=False,
        )
        if gamma_pec > 0:
            sim.add_wear(0, 0, gamma_pec - 1)
        sim.program_block(0, 0)
        sim.advance_clock(gamma_t)
        vth = np.concatenate([sim.sweep_read(0, 0, wl) for wl in range(n_wl)])
        states = np.concatenate([sim.true_states(0, 0, wl) for wl in range(n_wl)])
        _, vrefs = _fitted_crossings(vth, states)
        for wl in range(n_wl):
            for page_type in ("msb", "lsb"):
                gamma_pages[page_type].append(sim.read_page(PageAddress(0, 0, wl, page_type), vrefs).rber)

    gamma: dict[str, GammaSpreadFit] = {}
    for page_type, rbers in gamma_pages.items():
        shape, scale = gamma_fit(rbers)
        counts, edges = np.histogram(rbers, bins=8)
        kl = kl_divergence(counts, edges, lambda x, a=shape, b=scale: gamma_rber_pdf(x, a, b))
        gamma[page_type] = GammaSpreadFit(page_type, shape, scale, kl.nats, len(rbers))

    # Noiseless channel references on the same grid.
    references: dict[str, tuple[float, float, float, float]] = {}
    for name in list(_MEAN_OF_STATE.values()) + list(_SIGMA_OF_STATE.values()):
        references[name] = (
            wear.rows[name].alpha, wear.rows[name].beta, wear.rows[name].gamma, wear.rows[name].delta,
        )
    channel: dict[str, list[tuple[float, float, float]]] = {n: [] for n in ("vopt_a", "vopt_b", "vopt_c", "log_rber_msb", "log_rber_lsb")}
    for pec in pec_points:
        for t_s in t_points:
            ctx = CellContext(pec=float(pec), retention_s=t_s, layer=0)
            dists = [eval_distribution(models, ctx, s) for s in STATES]
            vopt = VrefTriple(
                optimal_boundary(dists[0], dists[1]),
                optimal_boundary(dists[1], dists[2]),
                optimal_boundary(dists[2], dists[3]),
            )
            est = expected_rber(dists, vopt)
            for name, value in (
                ("vopt_a", vopt.va), ("vopt_b", vopt.vb), ("vopt_c", vopt.vc),
                ("log_rber_msb", math.log(est.msb)), ("log_rber_lsb", math.log(est.lsb)),
            ):
                channel[name].append((float(pec), float(t_s), float(value)))

    def fit_triples(triples: list[tuple[float, float, float]], name: str) -> OlsFit:
        pec = np.array([x[0] for x in triples])
        t_s = np.array([x[1] for x in triples])
        val = np.array([x[2] for x in triples])
        if name == "vopt_a":
            return ols_fit_pec_only(pec, val)
        return ols_fit(pec, t_s, val)

    for name, triples in channel.items():
        ref = fit_triples(triples, name)
        references[name] = (ref.alpha, ref.beta, ref.gamma, ref.delta)

    recoveries: dict[str, RowRecovery] = {}
    for name, triples in observed.items():
        fit = fit_triples(triples, name)
        ref = references[name]
        recoveries[name] = RowRecovery(
            quantity=name, fit=fit, reference=ref, max_rel_err=_recovery_error(fit, ref)
        )

    samples_csv = write_csv(
        cfg.outdir / "replication_samples.csv", REPLICATION_COLUMNS, sample_rows, cfg_hash, cfg.seed
    )
    report_rows = []
    for name in list(_MEAN_OF_STATE.values()) + list(_SIGMA_OF_STATE.values()) + ["vopt_a", "vopt_b", "vopt_c", "log_rber_msb", "log_rber_lsb"]:
        r = recoveries[name]
        report_rows.append(
            (name, r.fit.alpha, r.fit.beta, r.fit.gamma, r.fit.delta, *r.reference, r.max_rel_err, r.fit.adj_r2)
        )
    report_csv = write_csv(
        cfg.outdir / "replication_report.csv", _FIT_REPORT_COLUMNS, report_rows, cfg_hash, cfg.seed
    )
    gamma_csv = write_csv(
        cfg.outdir / "replication_gamma.csv",
        _GAMMA_REPORT_COLUMNS,
        [(g.page_type, g.shape, g.scale, g.kl_nats, g.n_pages) for g in gamma.values()],
        cfg_hash,
        cfg.seed,
    )
    return ReplicationResult(
        rows=recoveries,
        gamma=gamma,
        samples_csv=samples_csv,
        report_csv=report_csv,
        gamma_csv=gamma_csv,
    )


# ---------------------------------------------------------------------------
# SVG plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
_W, _H = 640.0, 420.0
_ML, _MR, _MT, _MB = 70.0, 20.0, 30.0, 50.0


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


class _SvgChart:
    """Minimal deterministic SVG line/bar chart writer."""

    def __init__(self, title: str, x_label: str, y_label: str, x_range, y_range, y_log: bool):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W:.0f}" height="{_H:.0f}" '
            f'viewBox="0 0 {_W:.0f} {_H:.0f}" font-family="monospace" font-size="12">',
            f'<rect width="{_W:.0f}" height="{_H:.0f}" fill="white"/>',
            f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        ]
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range
        self.y_log = y_log
        if self.x_hi <= self.x_lo:
            self.x_hi = self.x_lo + 1.0
        if self.y_hi <= self.y_lo:
            self.y_hi = self.y_lo + 1.0
        self._axes(x_label, y_label)

    def x_px(self, x: float) -> float:
        return _ML + (x - self.x_lo) / (self.x_hi - self.x_lo) * (_W - _ML - _MR)

    def y_px(self, y: float) -> float:
        if self.y_log:
            y = math.log10(max(y, 1e-300))
        frac = (y - self.y_lo) / (self.y_hi - self.y_lo)
        return _H - _MB - frac * (_H - _MT - _MB)

    def _axes(self, x_label: str, y_label: str) -> None:
        p = self.parts
        p.append(
            f'<rect x="{_ML:.1f}" y="{_MT:.1f}" width="{_W - _ML - _MR:.1f}" '
            f'height="{_H - _MT - _MB:.1f}" fill="none" stroke="black"/>'
        )
        for tick in _nice_ticks(self.x_lo, self.x_hi):
            x = self.x_px(tick)
            p.append(f'<line x1="{x:.1f}" y1="{_H - _MB:.1f}" x2="{x:.1f}" y2="{_H - _MB + 5:.1f}" stroke="black"/>')
            p.append(f'<text x="{x:.1f}" y="{_H - _MB + 18:.1f}" text-anchor="middle">{tick:g}</text>')
        for tick in _nice_ticks(self.y_lo, self.y_hi):
            y = _H - _MB - (tick - self.y_lo) / (self.y_hi - self.y_lo) * (_H - _MT - _MB)
            label = f"1e{tick:g}" if self.y_log else f"{tick:g}"
            p.append(f'<line x1="{_ML - 5:.1f}" y1="{y:.1f}" x2="{_ML:.1f}" y2="{y:.1f}" stroke="black"/>')
            p.append(f'<text x="{_ML - 8:.1f}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
        p.append(f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 10:.1f}" text-anchor="middle">{x_label}</text>')
        p.append(
            f'<text x="16" y="{(_MT + _H - _MB) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.1f})">{y_label}</text>'
        )

    def polyline(self, xs, ys, color: str) -> None:
        pts = " ".join(f"{self.x_px(x):.2f},{self.y_px(y):.2f}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def bar(self, x: float, width: float, y: float, color: str) -> None:
        px = self.x_px(x - width / 2.0)
        pw = self.x_px(x + width / 2.0) - px
        py = self.y_px(y)
        self.parts.append(
            f'<rect x="{px:.2f}" y="{py:.2f}" width="{pw:.2f}" '
            f'height="{_H - _MB - py:.2f}" fill="{color}"/>'
        )

    def hline(self, y: float, color: str, dash: str = "4 3") -> None:
        py = self.y_px(y)
        self.parts.append(
            f'<line x1="{_ML:.1f}" y1="{py:.1f}" x2="{_W - _MR:.1f}" y2="{py:.1f}" '
            f'stroke="{color}" stroke-dasharray="{dash}"/>'
        )

    def legend(self, names: list[str]) -> None:
        for i, name in enumerate(names):
            y = _MT + 14 + 16 * i
            color = _PALETTE[i % len(_PALETTE)]
            self.parts.append(f'<rect x="{_ML + 10:.1f}" y="{y - 9:.1f}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{_ML + 25:.1f}" y="{y:.1f}">{name}</text>')

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.parts) + "\n</svg>\n")
        return path


def _series(rows: list[list[str]], key_col: int, x_col: int, y_col: int) -> dict[str, tuple[list, list]]:
    out: dict[str, tuple[list, list]] = {}
    for row in rows:
        xs, ys = out.setdefault(row[key_col], ([], []))
        xs.append(float(row[x_col]))
        ys.append(float(row[y_col]))
    return out


def _log_range(values, pad: float = 0.3) -> tuple[float, float]:
    logs = [math.log10(max(v, 1e-300)) for v in values if v > 0.0]
    if not logs:
        return (-7.0, -1.0)
    return (math.floor(min(logs) - pad), math.ceil(max(logs) + pad))


def emit_plots(csv_path: str | Path, outdir: str | Path | None = None) -> list[Path]:
    """Render a harness CSV into deterministic SVG charts.

    The chart set is chosen from the CSV's column schema; an unrecognized
    schema is a config error.
    """
    csv_path = Path(csv_path)
    outdir = csv_path.parent if outdir is None else Path(outdir)
    _meta, columns, rows = read_csv(csv_path)
    stem = csv_path.stem
    paths = []

    if columns == SWEEP_COLUMNS:
        for metric, col in (("average", 2), ("worst-case", 3)):
            series = _series(rows, key_col=1, x_col=0, y_col=col)
            all_x = [x for xs, _ in series.values() for x in xs]
            all_y = [y for _, ys in series.values() for y in ys]
            chart = _SvgChart(
                f"{metric} page RBER vs wear", "P/E cycles", "RBER",
                (min(all_x), max(all_x)), _log_range(all_y), y_log=True,
            )
            for i, name in enumerate(series):
                xs, ys = series[name]
                chart.polyline(xs, ys, _PALETTE[i % len(_PALETTE)])
            chart.legend(list(series))
            paths.append(chart.write(outdir / f"{stem}_{metric.split('-')[0]}.svg"))
        return paths

    if columns == LIFETIME_SCAN_COLUMNS:
        series = _series(rows, key_col=0, x_col=1, y_col=2)
        all_x = [x for xs, _ in series.values() for x in xs]
        all_y = [y for _, ys in series.values() for y in ys]
        chart = _SvgChart(
            "worst-case RBER vs wear", "P/E cycles", "RBER",
            (min(all_x), max(all_x)), _log_range(all_y), y_log=True,
        )
        for i, name in enumerate(series):
            xs, ys = series[name]
            chart.polyline(xs, ys, _PALETTE[i % len(_PALETTE)])
        chart.legend(list(series))
        paths.append(chart.write(outdir / f"{stem}.svg"))
        return paths

    if columns == LIFETIME_SUMMARY_COLUMNS:
        names = [row[0] for row in rows]
        values = [float(row[1]) for row in rows]
        chart = _SvgChart(
            "endurance by policy stack", "", "P/E cycles",
            (-0.6, len(names) - 0.4), (0.0, max(values) * 1.15), y_log=False,
        )
        for i, value in enumerate(values):
            chart.bar(float(i), 0.7, value, _PALETTE[i % len(_PALETTE)])
        chart.legend(names)
        paths.append(chart.write(outdir / f"{stem}.svg"))
        return paths

    if columns == REPLICATION_COLUMNS:
        mean_rows = [r for r in rows if r[3].startswith("mu_")]
        if not mean_rows:
            raise ConfigError(f"{csv_path}: no state-mean samples to plot")
        t_max = max(float(r[2]) for r in mean_rows)
        at_tmax = [r for r in mean_rows if float(r[2]) == t_max]
        series = _series(at_tmax, key_col=3, x_col=1, y_col=4)
        all_x = [x for xs, _ in series.values() for x in xs]
        all_y = [y for _, ys in series.values() for y in ys]
        chart = _SvgChart(
            f"state means vs wear at t={t_max:g}s", "P/E cycles", "threshold (steps)",
            (min(all_x), max(all_x)), (min(all_y) - 10.0, max(all_y) + 10.0), y_log=False,
        )
        for i, name in enumerate(sorted(series)):
            xs, ys = series[name]
            order = np.argsort(xs)
            chart.polyline(np.array(xs)[order], np.array(ys)[order], _PALETTE[i % len(_PALETTE)])
        chart.legend(sorted(series))
        paths.append(chart.write(outdir / f"{stem}.svg"))
        return paths

    raise ConfigError(f"{csv_path}: unrecognized CSV schema: {','.join(columns)}")
