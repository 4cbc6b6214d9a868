import numpy as np
import pytest

from nand3d.fitting import (
    OlsRankError,
    analytic_vopt,
    empirical_vopt,
    gamma_fit,
    gaussian_fit,
    kl_divergence,
    ols_fit,
    ols_fit_pec_only,
)
from nand3d.models import gamma_rber_pdf
from nand3d.voltage import StateDistribution, optimal_boundary


def _design(n_pec=6, n_t=5):
    pec = np.repeat(np.linspace(0.0, 20000.0, n_pec), n_t)
    t = np.tile(np.geomspace(60.0, 1e7, n_t), n_pec)
    return pec, t


def test_ols_fit_recovers_noiseless_coefficients(rng):
    pec, t = _design()
    for _ in range(20):
        a, b, g, d = rng.uniform(-1.0, 1.0, 4) * np.array([1e-4, 1.0, 1e-3, 100.0])
        y = (a * pec + b) * np.log(t) + g * pec + d
        fit = ols_fit(pec, t, y)
        assert fit.alpha == pytest.approx(a, rel=1e-6, abs=1e-12)
        assert fit.beta == pytest.approx(b, rel=1e-6, abs=1e-12)
        assert fit.gamma == pytest.approx(g, rel=1e-6, abs=1e-12)
        assert fit.delta == pytest.approx(d, rel=1e-6, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.n_samples == pec.size


def test_ols_fit_predict_and_as_row_agree(rng):
    pec, t = _design()
    y = (1e-5 * pec + 0.5) * np.log(t) + 2e-4 * pec - 3.0
    fit = ols_fit(pec, t, y + rng.normal(0.0, 0.01, y.size))
    row = fit.as_row()
    assert fit.predict(5000.0, 86400.0) == pytest.approx(
        row.value(5000.0, np.log(86400.0)), rel=1e-12
    )
    assert row.adj_r2 == fit.adj_r2


def test_ols_fit_standard_errors_cover_truth(rng):
    pec, t = _design()
    true = np.array([2e-5, 0.3, 5e-4, -10.0])
    hits = np.zeros(4)
    trials = 200
    for _ in range(trials):
        y = (true[0] * pec + true[1]) * np.log(t) + true[2] * pec + true[3]
        fit = ols_fit(pec, t, y + rng.normal(0.0, 0.5, y.size))
        est = np.array([fit.alpha, fit.beta, fit.gamma, fit.delta])
        hits += np.abs(est - true) <= 3.0 * np.array(fit.std_errors)
    # 3 SE covers ~99.7%; demand at least 95% per coefficient
    assert np.all(hits / trials >= 0.95)


def test_ols_fit_rank_errors():
    pec = np.full(10, 5000.0)
    t = np.geomspace(60.0, 1e7, 10)
    with pytest.raises(OlsRankError):
        ols_fit(pec, t, np.ones(10))
    with pytest.raises(OlsRankError):
        ols_fit(np.linspace(0, 1e4, 10), np.full(10, 3000.0), np.ones(10))
    with pytest.raises(ValueError, match="at least 5"):
        ols_fit(np.arange(4.0), np.arange(4.0) + 1.0, np.ones(4))


def test_ols_fit_pec_only():
    pec = np.linspace(0.0, 20000.0, 12)
    y = 1.2e-3 * pec + 60.52
    fit = ols_fit_pec_only(pec, y)
    assert fit.alpha == 0.0 and fit.beta == 0.0
    assert fit.gamma == pytest.approx(1.2e-3, rel=1e-9)
    assert fit.delta == pytest.approx(60.52, rel=1e-9)
    assert fit.predict(1000.0, 999.0) == pytest.approx(1.2 + 60.52)  # t is ignored
    with pytest.raises(OlsRankError):
        ols_fit_pec_only(np.full(5, 1.0), np.ones(5))


def test_gaussian_fit(rng):
    x = rng.normal(3.0, 2.0, 200_000)
    mean, sd = gaussian_fit(x)
    assert mean == pytest.approx(3.0, abs=0.02)
    assert sd == pytest.approx(2.0, abs=0.02)
    assert sd == pytest.approx(float(np.std(x, ddof=1)), rel=1e-12)
    with pytest.raises(ValueError):
        gaussian_fit([1.0])


def test_gamma_fit_method_of_moments(rng):
    shape, scale = 2.5, 4e-4
    x = rng.gamma(shape, scale, 100_000)
    got_shape, got_scale = gamma_fit(x)
    assert got_shape == pytest.approx(shape, rel=0.05)
    assert got_scale == pytest.approx(scale, rel=0.05)
    # the estimator is exactly mean^2/var, var/mean
    assert got_shape == pytest.approx(x.mean() ** 2 / x.var(ddof=1), rel=1e-12)
    with pytest.raises(ValueError):
        gamma_fit([-1.0, 2.0])
    with pytest.raises(ValueError):
        gamma_fit([5.0, 5.0])  # zero variance


def test_kl_divergence_small_for_matching_model(rng):
    shape, scale = 3.0, 1e-3
    x = rng.gamma(shape, scale, 50_000)
    counts, edges = np.histogram(x, bins=10)
    kl = kl_divergence(counts, edges, lambda v: gamma_rber_pdf(v, shape, scale))
    assert not kl.disjoint_support
    assert 0.0 <= kl.nats < 0.05
    wrong = kl_divergence(counts, edges, lambda v: gamma_rber_pdf(v, 8.0, scale))
    assert wrong.nats > 10.0 * max(kl.nats, 1e-4)


def test_kl_divergence_flags_disjoint_support():
    counts = np.array([5, 0, 5])
    edges = np.array([-2.0, -1.0, 0.5, 1.0])  # first bin has no gamma mass
    kl = kl_divergence(counts, edges, lambda v: gamma_rber_pdf(v, 2.0, 1.0))
    assert kl.disjoint_support
    assert np.isinf(kl.nats)


def test_kl_divergence_input_validation():
    pdf = lambda v: gamma_rber_pdf(v, 2.0, 1.0)
    with pytest.raises(ValueError):
        kl_divergence([1, 2], [0.0, 1.0], pdf)  # edges too short
    with pytest.raises(ValueError):
        kl_divergence([1, -1], [0.0, 1.0, 2.0], pdf)
    with pytest.raises(ValueError):
        kl_divergence([1, 1], [0.0, 0.0, 1.0], pdf)


def test_empirical_vopt_tie_plateau_resolves_to_midpoint():
    # separable clusters: any reference in (9, 20] is error-free, grid ties 10..20
    vth = np.array([0.0, 3.0, 6.0, 9.0, 20.0, 23.0, 26.0, 29.0, 60.0, 64.0, 95.0, 99.0])
    states = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 3, 3])
    grid = np.arange(0.0, 101.0)
    est = empirical_vopt(vth, states, grid)
    assert not any(est.degenerate)
    assert est.vrefs.va == 15.0
    assert 29.0 < est.vrefs.vb <= 60.0
    assert 64.0 < est.vrefs.vc <= 95.0


def test_empirical_vopt_flags_missing_state():
    vth = np.array([0.0, 1.0, 50.0, 51.0, 99.0, 98.0])
    states = np.array([0, 0, 1, 1, 3, 3])  # no P2 cells
    est = empirical_vopt(vth, states, np.arange(0.0, 101.0))
    assert est.degenerate == (False, True, True)
    assert est.vrefs.va < est.vrefs.vb < est.vrefs.vc


def test_empirical_vopt_matches_crossing_on_dense_samples(rng):
    dists = [StateDistribution(m, s) for m, s in
             ((-20.0, 16.0), (112.0, 10.0), (186.0, 10.5), (260.0, 11.0))]
    n = 200_000
    vth = np.concatenate([rng.normal(d.mean, d.stdev, n) for d in dists])
    states = np.repeat(np.arange(4), n)
    grid = np.arange(-120.0, 351.0)
    est = empirical_vopt(vth, states, grid)
    for got, (l, r) in zip(est.vrefs.as_tuple(), ((0, 1), (1, 2), (2, 3))):
        assert got == pytest.approx(optimal_boundary(dists[l], dists[r]), abs=2.0)


def test_analytic_vopt_matches_closed_form_boundaries():
    dists = [StateDistribution(m, s) for m, s in
             ((-15.0, 17.0), (110.0, 10.2), (188.0, 10.6), (262.0, 11.2))]
    grid = np.arange(-120.0, 351.0)
    v = analytic_vopt(dists, grid)
    for got, (l, r) in zip(v.as_tuple(), ((0, 1), (1, 2), (2, 3))):
        assert abs(got - optimal_boundary(dists[l], dists[r])) <= 1.0


def test_analytic_vopt_pools_distribution_sets():
    base = [StateDistribution(m, 10.0) for m in (0.0, 100.0, 200.0, 300.0)]
    shifted = [StateDistribution(d.mean + 30.0, 10.0) for d in base]
    grid = np.arange(-50.0, 351.0)
    pooled = analytic_vopt([base, shifted], grid)
    lone = analytic_vopt(base, grid)
    # pooling with an upshifted copy pulls every boundary upward
    assert pooled.va > lone.va
    assert pooled.vb > lone.vb
    assert pooled.vc > lone.vc
    same = analytic_vopt([base, base], grid)
    assert same.as_tuple() == lone.as_tuple()
