"""Model configuration loading and hashing.

The shipped default parameter file lives in nand3d/data/default_model.yaml.
Loading returns an ErrorModelSet ready for the simulator; the raw dict is
kept around for provenance hashing (every CSV the harness writes records
the hash of the exact configuration that produced it).
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml

from .models import (
    ROW_NAMES,
    ErrorModelSet,
    LayerVariationProfile,
    ProgramInterferenceModel,
    ReadDisturbModel,
    ReadErrorModel,
    RetentionInterferenceModel,
    RetentionWearModel,
    WearRow,
)

__all__ = [
    "default_model_text",
    "load_model_dict",
    "build_models",
    "load_models",
    "config_hash",
]

_STATE_KEYS = ("er", "p1", "p2", "p3")


def default_model_text() -> str:
    return resources.files("nand3d.data").joinpath("default_model.yaml").read_text()


def load_model_dict(path: str | Path | None = None) -> dict:
    """Parse the model YAML (shipped default when path is None)."""
    text = default_model_text() if path is None else Path(path).read_text()
    cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ValueError("model config must be a mapping")
    return cfg


def _f(value) -> float:
    # YAML 1.1 parses some exponent spellings as strings; coerce every leaf.
    return float(value)


def build_models(cfg: dict, n_layers: int = 32, permissive: bool = False) -> ErrorModelSet:
    """Construct the ErrorModelSet described by a parsed config dict."""
    dom = cfg.get("domain", {})
    rows = {}
    for name, row in cfg["wear_retention"].items():
        if name not in ROW_NAMES:
            raise ValueError(f"unknown wear/retention row {name!r}")
        rows[name] = WearRow(
            alpha=_f(row["alpha"]),
            beta=_f(row["beta"]),
            gamma=_f(row["gamma"]),
            delta=_f(row["delta"]),
            adj_r2=_f(row["adj_r2"]) if "adj_r2" in row else None,
        )
    wear = RetentionWearModel(
        rows=rows,
        pec_max=_f(dom.get("pec_max", 20000.0)),
        t_min_s=_f(dom.get("t_min_s", 60.0)),
        t_max_s=_f(dom.get("t_max_s", 1.0e7)),
        permissive=permissive,
    )

    lp = cfg["layer_profile"]
    profile = LayerVariationProfile.from_knots(
        wear,
        n_layers=n_layers,
        knot_x=[_f(v) for v in lp["knot_x"]],
        d_mu_er=[_f(v) for v in lp["d_mu_er"]],
        d_sigma_er=[_f(v) for v in lp["d_sigma_er"]],
        d_sigma_p1=[_f(v) for v in lp["d_sigma_p1"]],
        vopt_ref_pec=_f(lp.get("vopt_ref_pec", 10000.0)),
        vopt_ref_t_s=_f(lp.get("vopt_ref_t_s", 3000.0)),
    )

    inter = cfg.get("interference", {})
    interference = ProgramInterferenceModel(
        coupling_next=_f(inter.get("coupling_next_wordline", 0.027)),
        coupling_prev=_f(inter.get("coupling_prev_wordline", 8.0e-4)),
    )

    rd = cfg.get("read_disturb", {})
    mean_900k = rd.get("mean_steps_per_900k", {})
    sd_900k = rd.get("stdev_steps_per_900k", {})
    read_disturb = ReadDisturbModel(
        mean_step_per_read=tuple(_f(mean_900k.get(k, 0.0)) / 9.0e5 for k in _STATE_KEYS),
        stdev_step_per_read=tuple(_f(sd_900k.get(k, 0.0)) / 9.0e5 for k in _STATE_KEYS),
    )

    re_cfg = cfg.get("read_error", {})
    read_error = ReadErrorModel(
        amplitude=_f(re_cfg.get("amplitude", 0.35)),
        decay_per_step=_f(re_cfg.get("decay_per_step", 0.7)),
    )

    ri = cfg.get("retention_interference", {})
    retention_interference = RetentionInterferenceModel(
        adjust_steps=[[_f(v) for v in row] for row in ri["adjust_steps"]],
        t_ref_s=_f(ri.get("t_ref_s", 2073600.0)),
    )

    grid = cfg.get("voltage_grid", {})
    return ErrorModelSet(
        wear=wear,
        profile=profile,
        interference=interference,
        read_disturb=read_disturb,
        read_error=read_error,
        retention_interference=retention_interference,
        grid_lo=_f(grid.get("lo", -50.0)),
        grid_hi=_f(grid.get("hi", 350.0)),
        grid_step=_f(grid.get("step", 1.0)),
    )


def load_models(
    path: str | Path | None = None, n_layers: int = 32, permissive: bool = False
) -> ErrorModelSet:
    return build_models(load_model_dict(path), n_layers=n_layers, permissive=permissive)


def config_hash(*cfgs: dict) -> str:
    """Short stable hash of one or more config dicts, for CSV provenance."""
    blob = json.dumps(cfgs, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
