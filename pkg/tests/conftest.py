import numpy as np
import pytest

from nand3d.config import load_models
from nand3d.models import LayerVariationProfile


@pytest.fixture(scope="session")
def models():
    """Shipped ground-truth model set with the default 32-layer profile."""
    return load_models()


@pytest.fixture(scope="session")
def flat_models(models):
    """Same wear model with all layer variation zeroed out."""
    return models.with_profile(LayerVariationProfile.flat(models.profile.n_layers))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
