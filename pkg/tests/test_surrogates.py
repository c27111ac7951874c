import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activesampling.errors import FitFailed
from activesampling.harness.synthetic import SyntheticSpec, generate_synthetic
from activesampling.schemes import application_scores, predictive_scores
from activesampling.surrogates import (
    LabeledSet,
    ModelKind,
    SurrogateConfig,
    _gaussian_kernel,
    _kernel_ridge,
    cv_residual_covariance,
    fit_ratio_surrogate,
    fit_surrogate,
    fold_assignment,
    ratio_moments,
)


def _labeled(z, y):
    z = np.asarray(z, dtype=float)
    return LabeledSet(np.arange(z.shape[0]), y, z)


def test_labeled_set_rejects_duplicates():
    with pytest.raises(ValueError):
        LabeledSet(np.array([1, 1]), np.ones(2), np.ones(2))
    lab = LabeledSet.from_population([3, 1, 3], np.arange(5.0), np.arange(5.0))
    np.testing.assert_array_equal(lab.indices, [1, 3])


def test_linear_on_noiseless_line():
    z = np.linspace(0, 1, 10)
    y = 2 * z + 1
    fit = fit_surrogate(_labeled(z, y), z, SurrogateConfig(kind="linear"))
    assert fit.success
    assert fit.holdout_score == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(fit.predicted_means[:, 0], y, atol=1e-8)
    floor = 1e-6 * np.var(y, ddof=1)
    assert fit.residual_variances[0] == pytest.approx(floor)


def test_knn_with_all_neighbours_fails():
    rng = np.random.default_rng(0)
    z = rng.uniform(size=20)
    y = rng.normal(size=20)
    cfg = SurrogateConfig(kind="knn", neighbors=(20,))
    fit = fit_surrogate(_labeled(z, y), z, cfg)
    np.testing.assert_allclose(fit.predicted_means[:, 0], y.mean())
    assert fit.holdout_score <= 0
    assert not fit.success


def test_kernel_ridge_on_synthetic_data():
    pop = generate_synthetic(SyntheticSpec(sigma=0.1, r2=0.9, seed=1))
    idx = np.random.default_rng(2).choice(pop.size, 100, replace=False)
    lab = LabeledSet.from_population(idx, pop.responses, pop.auxiliaries)
    fit = fit_surrogate(lab, pop.auxiliaries)
    assert fit.success and fit.holdout_score > 0.5


def test_below_minimum_fit_size():
    with pytest.raises(FitFailed):
        fit_surrogate(_labeled(np.arange(5.0), np.arange(5.0)), np.arange(5.0))


def test_rank_deficient_linear_fit_fails():
    z = np.ones(12)
    with pytest.raises(FitFailed):
        fit_surrogate(_labeled(z, np.arange(12.0)), z, SurrogateConfig(kind="linear"))


def test_constant_coordinate_is_exact():
    rng = np.random.default_rng(1)
    z = rng.uniform(size=30)
    y = np.column_stack([np.ones(30), np.sin(6 * z)])
    fit = fit_surrogate(_labeled(z, y), z)
    np.testing.assert_array_equal(fit.predicted_means[:, 0], 1.0)
    assert fit.residual_variances[0] == pytest.approx(1e-6)
    assert fit.residual_covariances[0, 0, 1] == 0.0


def test_cv_variance_examples():
    rng = np.random.default_rng(7)
    z = rng.uniform(size=200)
    cov = cv_residual_covariance("linear", _labeled(z, 3 * z), 5, z)
    np.testing.assert_allclose(cov[:, 0, 0], 1e-6 * np.var(3 * z, ddof=1))
    y = rng.normal(size=200)
    for kind in ModelKind:
        v = cv_residual_covariance(kind, _labeled(z, y), 5, z)[0, 0, 0]
        assert 0.7 <= v <= 1.3, kind
    y2 = np.column_stack([rng.normal(size=200), rng.normal(size=200)])
    cov = cv_residual_covariance("linear", _labeled(z, y2), 5, z)
    assert np.all(cov[:, 0, 1] == 0) and np.all(cov[:, 1, 0] == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(list(ModelKind)), n=st.integers(10, 60))
def test_fit_invariants(seed, kind, n):
    rng = np.random.default_rng(seed)
    z_all = rng.uniform(size=(80, 2))
    idx = rng.choice(80, n, replace=False)
    y = np.column_stack([np.sin(4 * z_all[idx, 0]), rng.normal(size=n)])
    lab = LabeledSet(idx, y, z_all[idx])
    cfg = SurrogateConfig(kind=kind, seed=seed)
    try:
        fit = fit_surrogate(lab, z_all, cfg)
    except FitFailed:
        return
    assert fit.success == (fit.holdout_score > 0)
    for j in range(2):
        floor = 1e-6 * np.var(y[:, j], ddof=1)
        assert fit.residual_covariances[:, j, j].min() >= floor
    np.linalg.cholesky(fit.residual_covariances[0])
    again = fit_surrogate(lab, z_all, cfg)
    np.testing.assert_array_equal(fit.predicted_means, again.predicted_means)


def test_fold_assignment_is_balanced_and_seeded():
    a = fold_assignment(23, 5, 3)
    np.testing.assert_array_equal(a, fold_assignment(23, 5, 3))
    assert sorted(np.bincount(a)) == [4, 4, 5, 5, 5]


def test_kernel_ridge_block_cv_matches_refits():
    rng = np.random.default_rng(4)
    z = rng.uniform(size=(40, 1))
    y = np.sin(5 * z[:, 0]) + 0.1 * rng.normal(size=40)
    cfg = SurrogateConfig(bandwidths=(0.2,), ridges=(0.01,))
    folds = fold_assignment(40, 5, 0)
    oof, _, _ = _kernel_ridge(z, y, z, folds, cfg)
    brute = np.empty(40)
    for f in range(5):
        tr, te = folds != f, folds == f
        zt, yt = z[tr], y[tr]
        n = zt.shape[0]
        # intercept unpenalised: centre the gram matrix and the response
        k = _gaussian_kernel(zt, zt, 0.2)
        cen = np.eye(n) - 1.0 / n
        alpha = np.linalg.solve(cen @ k @ cen + 0.01 * np.eye(n), cen @ yt)
        # fitted values of the centred problem plus the mean
        b = np.mean(yt - k @ (cen @ alpha))
        brute[te] = b + _gaussian_kernel(z[te], zt, 0.2) @ (cen @ alpha)
    np.testing.assert_allclose(oof, brute, atol=1e-8)


def _ratio_population(rng, n=300):
    z = rng.uniform(size=(n, 2))
    r = (z[:, 0] + 0.2 * rng.normal(size=n) > 0.4).astype(float)
    x = np.where(r > 0, 10 * z[:, 1] + rng.normal(size=n), np.nan)
    return z, r, x


def test_ratio_fit_parts():
    rng = np.random.default_rng(8)
    z, r, x = _ratio_population(rng)
    idx = rng.choice(300, 120, replace=False)
    fit = fit_ratio_surrogate(idx, r[idx], x[idx], z)
    assert fit.crash_ok and fit.outcome_ok and fit.success
    assert fit.crash_score > 0.7 and fit.outcome_score > 0.5
    assert np.all((fit.crash_prob >= 1e-6) & (fit.crash_prob <= 1 - 1e-6))
    # no events: constant fallback for the outcome part
    fit = fit_ratio_surrogate(idx, np.zeros(120), x[idx], z)
    assert not fit.outcome_ok and not fit.crash_ok


def test_ratio_binary_outcome_sd():
    rng = np.random.default_rng(9)
    z, r, _ = _ratio_population(rng)
    x = np.where(r > 0, (z[:, 1] > 0.5).astype(float), np.nan)
    idx = rng.choice(300, 150, replace=False)
    fit = fit_ratio_surrogate(idx, r[idx], x[idx], z)
    np.testing.assert_allclose(fit.resid_sd, np.sqrt(fit.pred * (1 - fit.pred)))


def test_ratio_moments_reproduce_two_part_scores():
    rng = np.random.default_rng(10)
    z, r, x = _ratio_population(rng)
    idx = rng.choice(300, 100, replace=False)
    fit = fit_ratio_surrogate(idx, r[idx], x[idx], z)
    p = rng.uniform(0.1, 1.0, 300)
    t1, t2 = 40.0, 220.0
    theta = t2 / t1
    grad = np.array([-t2 / t1**2, 1 / t1])
    means, covs = ratio_moments(fit, p)
    generic = predictive_scores(means, covs, grad)
    two_part = application_scores(p, fit.crash_prob, fit.pred, fit.resid_sd, theta)
    np.testing.assert_allclose(generic * t1**2, two_part, rtol=1e-10, atol=1e-12)
