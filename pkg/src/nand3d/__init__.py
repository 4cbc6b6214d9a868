"""3D NAND reliability sandbox: fitted error models, a deterministic
flash-array simulator, and the mitigation mechanisms built on them."""

from .config import build_models, config_hash, load_model_dict, load_models
from .models import (
    CellContext,
    ErrorModelSet,
    LayerVariationProfile,
    ModelDomainError,
    ModelDomainWarning,
    RetentionWearModel,
    WearRow,
    eval_distribution,
    eval_rber,
    eval_vopt,
)
from .sim import ChipGeometry, FlashSim, PageAddress, PageRead, SimUsageError
from .voltage import State, StateDistribution, VrefTriple, expected_rber, optimal_boundary

__version__ = "0.1.0"

__all__ = [
    "CellContext",
    "ChipGeometry",
    "ErrorModelSet",
    "FlashSim",
    "LayerVariationProfile",
    "ModelDomainError",
    "ModelDomainWarning",
    "PageAddress",
    "PageRead",
    "RetentionWearModel",
    "SimUsageError",
    "State",
    "StateDistribution",
    "VrefTriple",
    "WearRow",
    "build_models",
    "config_hash",
    "eval_distribution",
    "eval_rber",
    "eval_vopt",
    "expected_rber",
    "load_model_dict",
    "load_models",
    "optimal_boundary",
    "__version__",
]
