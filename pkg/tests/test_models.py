import math

import numpy as np
import pytest

from nand3d.models import (
    SECONDS_24D,
    CellContext,
    ErrorModelSet,
    LayerVariationProfile,
    ModelDomainError,
    ModelDomainWarning,
    ReadErrorModel,
    RetentionInterferenceModel,
    RetentionWearModel,
    WearRow,
    eval_distribution,
    eval_rber,
    eval_vopt,
    gamma_rber_pdf,
)
from nand3d.models import ROW_NAMES
from nand3d.voltage import State, StateDistribution, optimal_boundary


def test_wear_row_value_formula(rng):
    for _ in range(50):
        a, b, g, d = rng.uniform(-1.0, 1.0, size=4)
        row = WearRow(a, b, g, d)
        pec = rng.uniform(0.0, 20000.0)
        log_t = rng.uniform(math.log(60.0), math.log(1e7))
        assert row.value(pec, log_t) == pytest.approx(
            (a * pec + b) * log_t + g * pec + d, rel=1e-12
        )


def test_wear_model_requires_all_rows(models):
    rows = dict(models.wear.rows)
    rows.pop("mu_p2")
    with pytest.raises(ValueError, match="mu_p2"):
        RetentionWearModel(rows=rows)


def test_wear_model_domain_checks(models):
    wear = models.wear
    assert wear.pec_max == 20000.0
    assert wear.t_min_s == 60.0
    assert wear.t_max_s == 1.0e7
    wear.check_domain(0.0, 60.0)
    wear.check_domain(20000.0, 1.0e7)
    for pec, t in ((-1.0, 3000.0), (20001.0, 3000.0), (5000.0, 59.0), (5000.0, 1.1e7)):
        with pytest.raises(ModelDomainError):
            wear.check_domain(pec, t)


def test_wear_model_permissive_warns(models):
    relaxed = RetentionWearModel(rows=dict(models.wear.rows), permissive=True)
    with pytest.warns(ModelDomainWarning):
        assert math.isfinite(relaxed.value("mu_er", 25000.0, 3000.0))


def test_wear_model_value_is_row_at_log_t(models):
    for name in ROW_NAMES:
        expect = models.wear.rows[name].value(4321.0, math.log(86400.0))
        assert models.wear.value(name, 4321.0, 86400.0) == expect


def test_flat_profile_offsets_are_zero():
    p = LayerVariationProfile.flat(32)
    assert p.n_layers == 32
    for layer in range(32):
        for s in State:
            assert p.mean_offset(s, layer) == 0.0
            assert p.stdev_offset(s, layer) == 0.0
        assert p.d_va[layer] == 0.0 and p.d_vb[layer] == 0.0


def test_profile_reference_layer_must_be_clean():
    z = np.zeros(4)
    bad = z.copy()
    bad[0] = 1.0
    with pytest.raises(ValueError, match="layer 0"):
        LayerVariationProfile(bad, z, z, z, z)


def test_profile_offsets_touch_only_er_and_p1():
    p = LayerVariationProfile(
        np.array([0.0, 5.0]),
        np.array([0.0, -1.0]),
        np.array([0.0, -0.5]),
        np.array([0.0, 3.0]),
        np.array([0.0, 1.0]),
    )
    assert p.mean_offset(State.ER, 1) == 5.0
    assert p.mean_offset(State.P1, 1) == 0.0
    assert p.stdev_offset(State.ER, 1) == -1.0
    assert p.stdev_offset(State.P1, 1) == -0.5
    assert p.stdev_offset(State.P2, 1) == 0.0


def test_from_knots_interpolates_and_derives_boundaries(models):
    wear = models.wear
    knot_x = [0.0, 50.0, 100.0]
    p = LayerVariationProfile.from_knots(
        wear,
        n_layers=3,
        knot_x=knot_x,
        d_mu_er=[0.0, 10.0, 4.0],
        d_sigma_er=[0.0, -2.0, 0.0],
        d_sigma_p1=[0.0, -1.0, 0.0],
        vopt_ref_pec=10000.0,
        vopt_ref_t_s=3000.0,
    )
    # layers 0/1/2 map to x = 0/50/100, landing exactly on the knots
    np.testing.assert_allclose(p.d_mu_er, [0.0, 10.0, 4.0])
    np.testing.assert_allclose(p.d_sigma_er, [0.0, -2.0, 0.0])

    # va offset equals the shift of the ER/P1 pdf crossing at the reference context
    log_t = math.log(3000.0)
    mu_er = wear.rows["mu_er"].value(10000.0, log_t)
    sd_er = wear.rows["sigma_er"].value(10000.0, log_t)
    mu_p1 = wear.rows["mu_p1"].value(10000.0, log_t)
    sd_p1 = wear.rows["sigma_p1"].value(10000.0, log_t)
    mu_p2 = wear.rows["mu_p2"].value(10000.0, log_t)
    sd_p2 = wear.rows["sigma_p2"].value(10000.0, log_t)
    base_va = optimal_boundary(StateDistribution(mu_er, sd_er), StateDistribution(mu_p1, sd_p1))
    va_1 = optimal_boundary(
        StateDistribution(mu_er + 10.0, sd_er - 2.0), StateDistribution(mu_p1, sd_p1 - 1.0)
    )
    base_vb = optimal_boundary(StateDistribution(mu_p1, sd_p1), StateDistribution(mu_p2, sd_p2))
    vb_1 = optimal_boundary(StateDistribution(mu_p1, sd_p1 - 1.0), StateDistribution(mu_p2, sd_p2))
    assert p.d_va[1] == pytest.approx(va_1 - base_va, abs=1e-9)
    assert p.d_vb[1] == pytest.approx(vb_1 - base_vb, abs=1e-9)


def test_from_knots_rejects_offset_first_knot(models):
    with pytest.raises(ValueError):
        LayerVariationProfile.from_knots(
            models.wear, 4, [10.0, 100.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]
        )


def test_read_error_model_decays_and_clips():
    m = ReadErrorModel(amplitude=0.9, decay_per_step=0.5)
    assert m.probability(0.0) == 0.5  # clipped to a fair coin at worst
    assert m.probability(3.0) == m.probability(-3.0)
    assert m.probability(10.0) < m.probability(2.0)


def test_retention_interference_scaling():
    m = RetentionInterferenceModel.symmetric(span_steps=3.0, t_ref_s=SECONDS_24D)
    assert m.adjust_steps.shape == (4, 4)
    # victim-independent rows, nondecreasing in neighbor rank, centered span
    for victim in State:
        row = m.adjust_steps[victim]
        np.testing.assert_allclose(row, m.adjust_steps[0])
        assert np.all(np.diff(row) > 0)
    assert m.adjust_steps[0, 3] - m.adjust_steps[0, 0] == pytest.approx(3.0)
    assert m.scale(SECONDS_24D) == pytest.approx(1.0)
    assert m.scale(3000.0) < 1.0
    assert m.adjust(State.ER, State.P3, SECONDS_24D) == pytest.approx(1.5)
    np.testing.assert_allclose(m.scaled_table(3000.0), m.adjust_steps * m.scale(3000.0))


def test_retention_interference_rejects_bad_shape():
    with pytest.raises(ValueError):
        RetentionInterferenceModel(np.zeros((3, 4)))


def test_eval_distribution_composes_wear_and_profile(models):
    ctx = CellContext(pec=8000.0, retention_s=86400.0, layer=16)
    log_t = math.log(86400.0)
    d = eval_distribution(models, ctx, State.ER)
    expect_mean = models.wear.rows["mu_er"].value(8000.0, log_t) + models.profile.mean_offset(
        State.ER, 16
    )
    expect_sd = models.wear.rows["sigma_er"].value(8000.0, log_t) + models.profile.stdev_offset(
        State.ER, 16
    )
    assert d.mean == pytest.approx(expect_mean, rel=1e-12)
    assert d.stdev == pytest.approx(expect_sd, rel=1e-12)
    # programmed states do not move with the layer
    d3_a = eval_distribution(models, ctx, State.P3)
    d3_b = eval_distribution(models, CellContext(8000.0, 86400.0, layer=0), State.P3)
    assert d3_a == d3_b


def test_eval_distribution_applies_read_disturb(models):
    base = eval_distribution(models, CellContext(5000.0, 3000.0), State.ER)
    bumped = eval_distribution(
        models, CellContext(5000.0, 3000.0, read_disturbs=900_000), State.ER
    )
    assert bumped.mean > base.mean  # disturb charges erased cells upward


def test_eval_distribution_applies_neighbor_adjustment(models):
    ctx = CellContext(5000.0, SECONDS_24D, neighbor_state=State.P3)
    d = eval_distribution(models, ctx, State.P2)
    base = eval_distribution(models, CellContext(5000.0, SECONDS_24D), State.P2)
    expect = models.retention_interference.adjust(State.P2, State.P3, SECONDS_24D)
    assert d.mean - base.mean == pytest.approx(expect, rel=1e-12)


def test_eval_distribution_rejects_out_of_domain(models):
    with pytest.raises(ModelDomainError):
        eval_distribution(models, CellContext(30000.0, 3000.0), State.ER)


def test_eval_rber_is_exp_of_fitted_log_rate(models):
    for page_type, row in (("msb", "log_rber_msb"), ("lsb", "log_rber_lsb")):
        expect = math.exp(models.wear.value(row, 9000.0, 86400.0))
        assert eval_rber(models, CellContext(9000.0, 86400.0), page_type) == pytest.approx(
            expect, rel=1e-12
        )


def test_eval_vopt_ordering_and_layer_offsets(models):
    for pec in (0.0, 10000.0, 20000.0):
        for t in (60.0, 3000.0, SECONDS_24D, 1.0e7):
            v = eval_vopt(models, pec, t)
            assert v.va < v.vb < v.vc
    base = eval_vopt(models, 10000.0, 3000.0)
    lay = eval_vopt(models, 10000.0, 3000.0, layer=20)
    assert lay.va - base.va == pytest.approx(float(models.profile.d_va[20]))
    assert lay.vb - base.vb == pytest.approx(float(models.profile.d_vb[20]))
    assert lay.vc == base.vc


def test_gamma_rber_pdf_normalizes():
    x = np.linspace(0.0, 0.2, 200001)
    pdf = gamma_rber_pdf(x, shape=2.5, scale=1e-3)
    assert np.trapezoid(pdf, x) == pytest.approx(1.0, abs=1e-6)
    assert gamma_rber_pdf(-1.0, 2.5, 1e-3) == 0.0
    assert gamma_rber_pdf(0.0, 2.5, 1e-3) == 0.0
    with pytest.raises(ValueError):
        gamma_rber_pdf(1.0, -1.0, 1e-3)


def test_with_profile_swaps_only_the_profile(models, flat_models):
    assert isinstance(flat_models, ErrorModelSet)
    assert flat_models.wear is models.wear
    assert flat_models.grid_lo == models.grid_lo
    assert np.all(flat_models.profile.d_mu_er == 0.0)
    grid = models.grid()
    assert grid[0] == models.grid_lo
    assert grid[-1] == models.grid_hi
    assert np.all(np.diff(grid) == models.grid_step)
