import pytest
import yaml

from nand3d.config import (
    build_models,
    config_hash,
    default_model_text,
    load_model_dict,
    load_models,
)
from nand3d.models import ROW_NAMES, ErrorModelSet


def test_default_model_text_parses():
    cfg = yaml.safe_load(default_model_text())
    assert set(cfg["wear_retention"]) == set(ROW_NAMES)
    assert cfg["voltage_grid"]["lo"] == -120.0


def test_load_models_default(models):
    assert isinstance(models, ErrorModelSet)
    assert models.profile.n_layers == 32
    assert models.grid_lo == -120.0
    assert models.grid_hi == 350.0
    assert models.grid_step == 1.0


def test_load_models_n_layers():
    m = load_models(n_layers=64)
    assert m.profile.n_layers == 64


def test_load_model_dict_from_path(tmp_path):
    path = tmp_path / "model.yaml"
    path.write_text(default_model_text())
    cfg = load_model_dict(path)
    assert cfg == load_model_dict(None)


def test_load_model_dict_rejects_non_mapping(tmp_path):
    path = tmp_path / "model.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError, match="mapping"):
        load_model_dict(path)


def test_build_models_rejects_unknown_row():
    cfg = yaml.safe_load(default_model_text())
    cfg["wear_retention"]["mu_p4"] = {"alpha": 0, "beta": 0, "gamma": 0, "delta": 0}
    with pytest.raises(ValueError, match="mu_p4"):
        build_models(cfg)


def test_build_models_coerces_string_exponents():
    cfg = yaml.safe_load(default_model_text())
    # YAML 1.1 leaves exponents without a dot or sign as strings
    cfg["wear_retention"]["mu_er"]["alpha"] = "1.01e-4"
    m = build_models(cfg)
    assert m.wear.rows["mu_er"].alpha == 1.01e-4


def test_config_hash_is_stable_and_sensitive():
    a = {"x": 1, "y": {"z": [1, 2, 3]}}
    b = {"y": {"z": [1, 2, 3]}, "x": 1}  # same content, different insertion order
    h = config_hash(a)
    assert len(h) == 12
    assert int(h, 16) >= 0
    assert config_hash(b) == h
    assert config_hash({"x": 2, "y": {"z": [1, 2, 3]}}) != h
    assert config_hash(a, {"extra": True}) != h
