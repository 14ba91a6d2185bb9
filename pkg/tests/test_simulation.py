from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gmvptest.dense import mahalanobis_statistic, power_mahalanobis_asymptotic
from gmvptest.errors import ConfigError, InputError
from gmvptest.model import covariance_model, gmvp_weights, lambda_dense, sample_covariance
from gmvptest.simulation import (
    CurveKind,
    CurveResult,
    ExperimentConfig,
    RngStream,
    ScenarioSpec,
    TestKind,
    build_scenario,
    build_scenario_sigma,
    contaminate,
    dn_en_diagnostic,
    empirical_power_curve,
    empirical_power_stochastic,
    factor_sample_covariance,
    roc_auc,
    run_power_experiment,
    run_roc_experiment,
    sample_tn_singular_stochastic,
    sample_tn_stochastic,
    scenario_spectrum,
    worker_count,
)

# --- streams and samplers ------------------------------------------------------------


def test_stream_reproducible_and_distinct():
    a = RngStream(7, 3).generator().standard_normal(5)
    b = RngStream(7, 3).generator().standard_normal(5)
    c = RngStream(7, 4).generator().standard_normal(5)
    d = RngStream(7, 3, tag=2).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_stream_rejects_negative_seed():
    with pytest.raises(InputError):
        RngStream(-1)


def test_sampler_determinism():
    assert sample_tn_stochastic(0.3, 5, 50, RngStream(1, 2)) == sample_tn_stochastic(0.3, 5, 50, RngStream(1, 2))
    a = sample_tn_singular_stochastic(0.3, 10, 4, 50, RngStream(1, 2), size=10)
    assert np.array_equal(a, sample_tn_singular_stochastic(0.3, 10, 4, 50, RngStream(1, 2), size=10))


def test_sampler_null_is_f():
    draws = sample_tn_stochastic(0.0, 5, 50, RngStream(11), size=10_000)
    assert stats.kstest(draws, stats.f(4, 45).cdf).pvalue > 0.01


def test_sampler_p2_uses_point_mass():
    draws = sample_tn_stochastic(0.0, 2, 30, RngStream(12), size=10_000)
    assert np.all(draws >= 0)
    assert stats.kstest(draws, stats.f(1, 28).cdf).pvalue > 0.01


def test_sampler_preconditions():
    with pytest.raises(InputError):
        sample_tn_stochastic(0.1, 50, 50, RngStream(0))
    with pytest.raises(InputError):
        sample_tn_stochastic(-0.1, 5, 50, RngStream(0))
    with pytest.raises(InputError):
        sample_tn_singular_stochastic(0.1, 10, 11, 50, RngStream(0))


def test_singular_sampler_reduces_to_dense():
    a = sample_tn_stochastic(0.4, 8, 60, RngStream(21), size=10_000)
    b = sample_tn_singular_stochastic(0.4, 8, 7, 60, RngStream(22), size=10_000)
    assert stats.ks_2samp(a, b).pvalue > 0.01
    # identical underlying draws give identical values
    c = sample_tn_singular_stochastic(0.4, 8, 7, 60, RngStream(21), size=10_000)
    np.testing.assert_allclose(a, c, rtol=1e-12)


def _target_with_lambda(p, lam):
    cov = covariance_model(np.eye(p))
    d = np.zeros(p)
    d[0], d[1] = 1.0, -1.0
    w = np.full(p, 1.0 / p)
    unit = lambda_dense(cov, w + d).value
    return w + math.sqrt(lam / unit) * d


@pytest.mark.parametrize("p,n", [(5, 30), (10, 60)])
@pytest.mark.parametrize("lam", [0.0, 0.16, 1.0])
def test_sampler_matches_data_level_statistic(p, n, lam):
    rng = np.random.default_rng(1000 * p + int(100 * lam))
    r = _target_with_lambda(p, lam)
    assert lambda_dense(covariance_model(np.eye(p)), r).value == pytest.approx(lam, abs=1e-12)
    data = [mahalanobis_statistic(rng.standard_normal((n, p)), r) for _ in range(10_000)]
    draws = sample_tn_stochastic(lam, p, n, RngStream(p, int(100 * lam)), size=10_000)
    assert stats.ks_2samp(data, draws).pvalue > 0.01


# --- empirical power ---------------------------------------------------------------


def test_empirical_size_of_exact_rule():
    est = empirical_power_stochastic(0.0, 5, 50, 0.05, 10_000, RngStream(3), rule="f_exact")
    assert abs(est.estimate - 0.05) <= 3 * est.std_error


def test_empirical_size_of_asymptotic_rule_at_c01():
    # exact size of the normal rule at (50, 500) is 0.0637, so check against that
    est = empirical_power_stochastic(0.0, 50, 500, 0.05, 10_000, RngStream(4))
    exact = stats.f(49, 450).sf(1 + stats.norm.isf(0.05) * math.sqrt(2 / 0.9) / math.sqrt(49))
    assert abs(est.estimate - exact) <= 3 * est.std_error


def test_empirical_power_tracks_asymptotic_c01():
    grid = np.linspace(0.0, 0.3, 20)
    curve = empirical_power_curve(grid, 50, 500, 0.05, 10_000, 31)
    theory = np.array([power_mahalanobis_asymptotic(g, 50, 500) for g in grid])
    assert np.max(np.abs(np.array(curve.estimates) - theory)) <= 0.03


def test_standard_error_scaling():
    a = empirical_power_stochastic(0.05, 50, 500, 0.05, 2_000, RngStream(5))
    b = empirical_power_stochastic(0.05, 50, 500, 0.05, 4_000, RngStream(6))
    assert a.std_error / b.std_error == pytest.approx(math.sqrt(2), rel=0.2)


def test_empirical_power_minimum_replications():
    with pytest.raises(InputError):
        empirical_power_stochastic(0.0, 5, 50, 0.05, 99, RngStream(0))


# --- curves ----------------------------------------------------------------------


def test_curve_from_counts_matches_binomial():
    curve = CurveResult.from_counts([0, 1, 2], [0, 50, 100], 100, "power")
    assert curve.estimates == (0.0, 0.5, 1.0)
    assert curve.std_errors == (0.0, 0.05, 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(grid=(0, 1), estimates=(0.1,), std_errors=(0.03,)),
        dict(grid=(0,), estimates=(1.2,), std_errors=(0.0,)),
        dict(grid=(0,), estimates=(0.5,), std_errors=(0.1,)),
    ],
)
def test_curve_validation(kwargs):
    with pytest.raises(InputError):
        CurveResult(replications=100, kind=CurveKind.POWER, **kwargs)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=20), st.integers(500, 2000))
def test_curve_se_exact(counts, B):
    curve = CurveResult.from_counts(range(len(counts)), counts, B, "power")
    est = np.array(counts) / B
    np.testing.assert_allclose(curve.std_errors, np.sqrt(est * (1 - est) / B), rtol=1e-12, atol=0)
    assert all(0 <= e <= 1 for e in curve.estimates)


def test_never_rejecting_roc_is_pinned():
    grid = np.linspace(0.01, 0.99, 99)
    curve = CurveResult.from_counts(grid, [0] * 99, 1000, "roc", fpr_counts=[0] * 99)
    assert set(curve.estimates) == {0.0} and set(curve.fpr) == {0.0}
    assert roc_auc(curve) == pytest.approx(0.5)


def test_roc_auc_perfect_and_diagonal():
    grid = [0.1, 0.5, 0.9]
    perfect = CurveResult.from_counts(grid, [100, 100, 100], 100, "roc", fpr_counts=[0, 0, 0])
    assert roc_auc(perfect) == pytest.approx(1.0)
    diag = CurveResult.from_counts(grid, [10, 50, 90], 100, "roc", fpr_counts=[10, 50, 90])
    assert roc_auc(diag) == pytest.approx(0.5)
    with pytest.raises(InputError):
        roc_auc(CurveResult.from_counts(grid, [1, 2, 3], 100, "power"))


# --- scenarios ---------------------------------------------------------------------


def test_spectrum_q9():
    assert scenario_spectrum(9).tolist() == [2, 5, 5, 5, 5, 10, 10, 10, 10]


@pytest.mark.parametrize("q", [1, 5, 10, 100, 450])
def test_spectrum_counts(q):
    vals = scenario_spectrum(q)
    assert len(vals) == q
    assert np.sum(vals == 2) == q // 9 and np.sum(vals == 5) == 4 * q // 9


def test_full_rank_scenario_trace():
    sigma = build_scenario_sigma(ScenarioSpec(450, 450, 1))
    assert np.trace(sigma.matrix) == pytest.approx(3100.0, rel=1e-10)
    assert sigma.rank == 450


def test_singular_scenario_structure():
    spec = ScenarioSpec(60, 20, 9)
    sigma = build_scenario_sigma(spec)
    assert sigma.rank == 20
    np.testing.assert_allclose(sigma.eigenvalues[:20], np.sort(scenario_spectrum(20))[::-1], rtol=1e-10)
    np.testing.assert_allclose(sigma.eigenvalues[20:], 0.0, atol=1e-10)
    assert np.array_equal(sigma.matrix, build_scenario_sigma(spec).matrix)
    assert not np.array_equal(sigma.matrix, build_scenario_sigma(ScenarioSpec(60, 20, 10)).matrix)


def test_contamination_scales_leading_eigenvalues():
    spec = ScenarioSpec(120, 90, 3, kappa=15)
    assert spec.m == 18 and spec.a == pytest.approx(2.5)
    sc = build_scenario(spec)
    ratio = sc.scaled_eigenvalues(15)[:90] / sc.eigenvalues[:90]
    np.testing.assert_allclose(ratio[:18], 6.25)
    np.testing.assert_allclose(ratio[18:], 1.0)
    sigma1 = contaminate(sc.eigenvalues, sc.basis, 18, 15)
    np.testing.assert_allclose(sigma1.matrix, sc.covariance(15).matrix, atol=1e-10)


def test_contamination_kappa_zero_identity():
    sc = build_scenario(ScenarioSpec(30, 30, 4))
    np.testing.assert_allclose(contaminate(sc.eigenvalues, sc.basis, 6, 0).matrix, sc.covariance(0).matrix)
    with pytest.raises(InputError):
        contaminate(sc.eigenvalues[:10].tolist() + [0.0] * 20, sc.basis, 11, 1)


def test_roc_operating_point():
    assert ScenarioSpec(10, 10, 0, kappa=4).a == pytest.approx(1.4)


@pytest.mark.parametrize("p,q", [(12, 12), (30, 8)])
def test_factor_covariance_matches_generic(rng, p, q):
    sc = build_scenario(ScenarioSpec(p, q, 5))
    z = rng.standard_normal((40, q))
    scale = sc.root_scale(3)
    x = z @ (sc.basis[:, :q] * scale).T
    fast = factor_sample_covariance(z, sc.basis, scale, q)
    slow = sample_covariance(x, rank=q)
    np.testing.assert_allclose(fast.matrix, slow.matrix, atol=1e-12)
    np.testing.assert_allclose(fast.precision, slow.precision, atol=1e-10)


# --- experiments ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(tests=("dense_mahalanobis",), p=60, q=20, n=200),
        dict(tests=("dense_shrinkage",), p=600, n=500),
        dict(tests=("singular_mahalanobis",), p=60, q=20, n=20),
        dict(tests=("bogus",), p=10, n=50),
        dict(tests=(), p=10, n=50),
        dict(tests=("dense_shrinkage",), p=10, n=50, alpha=1.5),
        dict(tests=("singular_shrinkage",), p=10, q=5, n=50, k=6),
    ],
)
def test_experiment_config_errors(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("GMVP_TEST_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("GMVP_TEST_THREADS", "0")
    assert worker_count() >= 1
    monkeypatch.setenv("GMVP_TEST_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count()


def test_experiment_deterministic_across_workers():
    cfg = ExperimentConfig(("dense_mahalanobis", "singular_shrinkage"), p=30, q=30, n=120, kappas=(0, 8), B=40, seed=9)
    one = run_power_experiment(cfg, workers=1)
    two = run_power_experiment(cfg, workers=2)
    assert one == two
    roc1 = run_roc_experiment(cfg, workers=1)
    assert roc1 == run_roc_experiment(cfg, workers=3)


def _normal_rule_size(df1, df2, q, k, n, alpha=0.05):
    # exact null size of the normal-reference Mahalanobis rules: the statistic is F(k, n - q)
    c, b = q / n, k / n
    cut = 1 + stats.norm.isf(alpha) * math.sqrt(2 * (1 - c + b) / (1 - c)) / math.sqrt(k)
    return stats.f(df1, df2).sf(cut)


@pytest.fixture(scope="module")
def dense_size_rows():
    cfg = ExperimentConfig(
        ("dense_mahalanobis", "dense_mahalanobis_exact", "dense_shrinkage"), p=250, n=500, B=1_000, seed=17
    )
    return run_power_experiment(cfg, workers=1)


def _within(curve, target):
    return abs(curve.estimates[0] - target) <= 3 * curve.std_errors[0]


def test_size_row_dense_exact(dense_size_rows):
    assert _within(dense_size_rows[TestKind.DENSE_MAHALANOBIS_EXACT], 0.05)


def test_size_row_dense_asymptotic(dense_size_rows):
    # dense statistic with q = p, k = p - 1 matches the singular form exactly at b = (p-1)/n
    exact = stats.f(249, 250).sf(1 + stats.norm.isf(0.05) * math.sqrt(2 / 0.5) / math.sqrt(249))
    assert _within(dense_size_rows[TestKind.DENSE_MAHALANOBIS], exact)
    assert _within(dense_size_rows[TestKind.DENSE_MAHALANOBIS], 0.05)


def test_size_row_dense_shrinkage(dense_size_rows):
    assert _within(dense_size_rows[TestKind.DENSE_SHRINKAGE], 0.05)


@pytest.mark.xfail(strict=True, reason="shrinkage test is undersized at c = 0.1, n = 500 (rate 0.015)")
def test_size_row_dense_shrinkage_small_c():
    cfg = ExperimentConfig(("dense_shrinkage",), p=50, n=500, B=2_000, seed=17)
    assert _within(run_power_experiment(cfg, workers=1)[TestKind.DENSE_SHRINKAGE], 0.05)


@pytest.fixture(scope="module")
def singular_size_rows():
    cfg = ExperimentConfig(("singular_mahalanobis", "singular_shrinkage"), p=300, q=100, n=500, B=2_000, seed=18)
    return run_power_experiment(cfg, workers=1)


def test_size_row_singular_mahalanobis(singular_size_rows):
    exact = _normal_rule_size(99, 400, 100, 99, 500)
    assert 0.06 < exact < 0.07
    assert _within(singular_size_rows[TestKind.SINGULAR_MAHALANOBIS], exact)
    assert 0.03 <= singular_size_rows[TestKind.SINGULAR_MAHALANOBIS].estimates[0] <= 0.07


@pytest.mark.xfail(strict=True, reason="shrinkage test is undersized at c = 0.2, n = 500 (rate near 0.028)")
def test_size_row_singular_shrinkage(singular_size_rows):
    assert _within(singular_size_rows[TestKind.SINGULAR_SHRINKAGE], 0.05)


@pytest.mark.slow
def test_dense_power_monotone_at_c05():
    cfg = ExperimentConfig(("dense_mahalanobis", "dense_shrinkage"), p=250, n=500, kappas=(0, 5, 10, 15), B=200, seed=19)
    for curve in run_power_experiment(cfg, workers=1).values():
        est, se = np.array(curve.estimates), np.array(curve.std_errors)
        assert np.all(np.diff(est) >= -2 * np.maximum(se[1:], se[:-1]))
        assert est[-1] > 0.9


def test_dense_tests_blind_on_singular_data():
    cfg = ExperimentConfig(
        ("dense_mahalanobis", "dense_shrinkage", "singular_shrinkage"),
        p=450, q=100, n=500, kappas=(0, 15), B=200, seed=20, ignore_singularity=True,
    )
    out = run_power_experiment(cfg, workers=1)
    assert max(out[TestKind.DENSE_MAHALANOBIS].estimates) < 0.1
    assert max(out[TestKind.DENSE_SHRINKAGE].estimates) < 0.1
    assert out[TestKind.SINGULAR_SHRINKAGE].estimates[-1] > 0.8


@pytest.fixture(scope="module")
def roc_c01():
    cfg = ExperimentConfig(("dense_mahalanobis", "dense_shrinkage"), p=50, n=500, B=1_000, seed=21)
    return run_roc_experiment(cfg, workers=1)


def test_roc_curves_are_monotone(roc_c01):
    for curve in roc_c01.values():
        assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.estimates) >= 0)
        assert curve.fpr[0] < 0.05 and curve.estimates[-1] > 0.95


def test_roc_auc_informative(roc_c01):
    for curve in roc_c01.values():
        se = math.sqrt(0.25 / curve.replications)
        assert roc_auc(curve) >= 0.5 - 2 * se


def _anchored(curve, at):
    return np.interp(at, np.concatenate([[0.0], curve.fpr]), np.concatenate([[0.0], curve.estimates]))


def test_roc_shrinkage_dominates_at_low_fpr(roc_c01):
    shr, mah = roc_c01[TestKind.DENSE_SHRINKAGE], roc_c01[TestKind.DENSE_MAHALANOBIS]
    low = np.array([0.005, 0.01, 0.02])
    assert np.all(_anchored(shr, low) > _anchored(mah, low))
    wide = np.linspace(0.03, 0.1, 8)
    se = math.sqrt(0.05 / shr.replications)
    assert np.all(_anchored(shr, wide) >= _anchored(mah, wide) - 2 * se)


# --- joint CLT diagnostic -----------------------------------------------------------------


@pytest.fixture(scope="module")
def dn_en_report():
    return dn_en_diagnostic(50, 500, 10_000, RngStream(2024))


def test_dn_variance(dn_en_report):
    assert abs(dn_en_report.var_d - 2.0) <= 0.15


def test_en_variance(dn_en_report):
    assert dn_en_report.target_var_e == pytest.approx(2 / 0.9**3)
    assert dn_en_report.var_e / dn_en_report.target_var_e == pytest.approx(1.0, abs=0.1)


def test_dn_en_orthogonal_covariance_vanishes():
    b = np.zeros(20)
    b[0], b[1] = 1.0, -1.0
    rep = dn_en_diagnostic(20, 200, 4_000, RngStream(7), b=b)
    assert rep.target_cov_de == 0.0
    assert abs(rep.cov_de) <= 3 * rep.se_cov_de


def test_dn_en_preconditions():
    with pytest.raises(InputError):
        dn_en_diagnostic(10, 10, 100, RngStream(0))
