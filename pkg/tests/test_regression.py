"""Residualization: interaction least squares, kernel smoothing, bandwidths."""

import numpy as np
import pytest

from hetfx import (
    DegenerateSampleError,
    ExperimentSample,
    NWConfig,
    bandwidth_rule,
    d_theta_stat,
    linear_interaction_fit,
    nw_fit,
    residualize_group_mean,
    residualize_linear,
    residualize_nw,
)


def cov_sample(rng, n=60, q=2):
    x = rng.standard_normal((n, q))
    d = np.zeros(n, int)
    d[: n // 2] = 1
    rng.shuffle(d)
    y = 0.5 + x @ rng.standard_normal(q) + 0.7 * d + 0.3 * rng.standard_normal(n)
    return ExperimentSample(y, d, x)


class TestLinearFit:
    def test_constant_outcome(self):
        rng = np.random.default_rng(0)
        s = cov_sample(rng)
        s = ExperimentSample(np.full(s.n, 3.25), s.treatments, s.covariates)
        fit = linear_interaction_fit(s)
        assert fit.coefficients[0] == pytest.approx(3.25, abs=1e-10)
        assert np.allclose(fit.coefficients[1:], 0.0, atol=1e-10)
        assert np.allclose(fit.residuals, 0.0, atol=1e-10)

    def test_exact_interpolation(self):
        rng = np.random.default_rng(1)
        n = 50
        x1 = rng.standard_normal(n)
        d = np.zeros(n, int)
        d[: n // 2] = 1
        rng.shuffle(d)
        y = 1.0 + 2.0 * d + 3.0 * x1 - 1.0 * d * x1
        s = ExperimentSample(y, d, x1[:, None])
        fit = linear_interaction_fit(s)
        assert np.allclose(fit.residuals, 0.0, atol=1e-8)
        assert fit.coefficients == pytest.approx([1.0, 2.0, 3.0, -1.0], abs=1e-8)

    def test_duplicate_column_same_projection(self):
        rng = np.random.default_rng(2)
        s = cov_sample(rng, q=2)
        dup = np.column_stack([s.covariates, s.covariates[:, 0]])
        fit = linear_interaction_fit(s)
        fit_dup = linear_interaction_fit(
            ExperimentSample(s.outcomes, s.treatments, dup))
        assert np.allclose(fit.fitted, fit_dup.fitted, atol=1e-8)
        assert fit_dup.rank == fit.rank

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(3)
        s = cov_sample(rng)
        fit = linear_interaction_fit(s)
        from hetfx import interaction_design
        design = interaction_design(s.treatments, s.covariates)
        scale = np.linalg.norm(s.outcomes)
        assert np.all(np.abs(design.T @ fit.residuals) <= 1e-8 * scale)

    def test_affine_reparameterization_invariance(self):
        rng = np.random.default_rng(4)
        s = cov_sample(rng, q=3)
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        b = rng.standard_normal(3)
        rebased = ExperimentSample(s.outcomes, s.treatments,
                                   s.covariates @ A + b)
        r1 = linear_interaction_fit(s).residuals
        r2 = linear_interaction_fit(rebased).residuals
        assert np.allclose(r1, r2, atol=1e-8 * max(1.0, np.abs(r1).max()))


class TestResidualize:
    def test_no_covariates_equals_group_demeaning(self):
        rng = np.random.default_rng(5)
        n = 30
        y = rng.standard_normal(n)
        d = np.zeros(n, int)
        d[:12] = 1
        rng.shuffle(d)
        s = ExperimentSample(y, d)
        lin = residualize_linear(s)
        grp = residualize_group_mean(s)
        assert np.allclose(lin.residuals, grp.residuals, atol=1e-10)

    def test_group_means_vanish(self):
        rng = np.random.default_rng(6)
        s = cov_sample(rng)
        resid = residualize_linear(s)
        scale = max(1.0, float(np.abs(s.outcomes).max()))
        for g in (0, 1):
            assert abs(resid.residuals[s.treatments == g].mean()) <= 1e-10 * scale

    def test_noiseless_covariate_model_zero_residuals(self):
        rng = np.random.default_rng(7)
        n = 80
        x = np.column_stack([
            rng.standard_normal(n),
            (rng.random(n) < 0.5).astype(float),
            (rng.random(n) < 0.25).astype(float),
            rng.standard_normal(n),
        ])
        d = np.zeros(n, int)
        d[: int(0.6 * n)] = 1
        rng.shuffle(d)
        y0 = 0.3 + x @ np.array([0.2, 0.3, -0.4, 0.8])
        y = np.where(d == 1, y0 + 0.3, y0)
        s = ExperimentSample(y, d, x)
        assert np.allclose(residualize_linear(s).residuals, 0.0, atol=1e-10)

    def test_d_stat_invariant_to_linear_shift_of_outcomes(self):
        rng = np.random.default_rng(8)
        s = cov_sample(rng, q=2)
        base = d_theta_stat(residualize_linear(s))
        tilted = ExperimentSample(
            s.outcomes + s.covariates @ np.array([4.0, -2.5]) + 7.0,
            s.treatments, s.covariates)
        assert d_theta_stat(residualize_linear(tilted)) == pytest.approx(
            base, abs=1e-8)


class TestBandwidth:
    def test_rule_arithmetic(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((100, 1))
        x = (x - x.mean()) / x.std()
        assert bandwidth_rule(x) == pytest.approx(1.06 * 100 ** (-0.2), rel=1e-12)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((50, 1))
        assert bandwidth_rule(5.0 * x) == pytest.approx(5.0 * bandwidth_rule(x))

    def test_sample_size_rate(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((100, 1))
        x4 = np.concatenate([x, x, x, x])
        assert bandwidth_rule(x4) == pytest.approx(
            bandwidth_rule(x) * 4 ** (-0.2), rel=1e-12)

    def test_degenerate_dimensions(self):
        x = np.column_stack([np.ones(20), np.linspace(0, 1, 20)])
        assert bandwidth_rule(x) > 0
        assert bandwidth_rule(np.ones((20, 2))) == 1.0


class TestNW:
    def test_constant_outcome_reproduced(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((25, 1))
        fit = nw_fit(x, np.full(25, 2.5))
        assert np.allclose(fit(x), 2.5, atol=1e-12)

    def test_single_training_point(self):
        fit = nw_fit(np.array([[0.0]]), np.array([4.0]))
        assert fit(np.array([[0.3], [-1.0]])) == pytest.approx([4.0, 4.0])

    def test_identity_function_bias_bound(self):
        x = np.linspace(0, 1, 400)[:, None]
        fit = nw_fit(x, x.ravel())
        h = float(fit.bandwidths[0])
        interior = x[(x.ravel() > 0.1) & (x.ravel() < 0.9)]
        pred = fit(interior)
        assert np.abs(pred - interior.ravel()).max() <= 5 * h

    def test_weights_fallback_counted(self):
        x = np.zeros((5, 1))
        fit = nw_fit(x, np.arange(5.0), NWConfig(kernel="epanechnikov",
                                                 bandwidth=0.5))
        pred, fallbacks = fit.evaluate(np.array([[100.0]]))
        assert fallbacks == 1
        assert pred[0] == pytest.approx(2.0)  # training mean

    def test_epanechnikov_matches_gaussian_on_smooth_data(self):
        rng = np.random.default_rng(13)
        x = np.linspace(-1, 1, 200)[:, None]
        y = np.sin(2 * x.ravel()) + 0.05 * rng.standard_normal(200)
        ge = nw_fit(x, y, NWConfig(kernel="gaussian", bandwidth=0.15))
        ep = nw_fit(x, y, NWConfig(kernel="epanechnikov", bandwidth=0.3))
        inner = x[np.abs(x.ravel()) < 0.7]
        assert np.abs(ge(inner) - ep(inner)).max() < 0.2


class TestResidualizeNW:
    def test_constant_groups_zero_residuals(self):
        rng = np.random.default_rng(14)
        n = 20
        x = rng.standard_normal((n, 1))
        d = np.zeros(n, int)
        d[:10] = 1
        y = np.where(d == 1, 2.0, -1.0)
        s = ExperimentSample(y, d, x)
        resid = residualize_nw(s)
        assert np.allclose(resid.residuals, 0.0, atol=1e-12)

    def test_order_invariance(self):
        rng = np.random.default_rng(15)
        s = cov_sample(rng, n=40, q=1)
        resid = residualize_nw(s).residuals
        perm = rng.permutation(s.n)
        shuffled = ExperimentSample(s.outcomes[perm], s.treatments[perm],
                                    s.covariates[perm])
        resid_shuffled = residualize_nw(shuffled).residuals
        assert np.allclose(resid_shuffled, resid[perm], atol=1e-12)

    def test_consistency_smoke(self):
        # Noiseless conditional means, large n, small bandwidth: only
        # smoothing bias remains and it is tiny.
        rng = np.random.default_rng(16)
        n = 5000
        x = rng.uniform(-1, 1, size=(n, 1))
        d = np.zeros(n, int)
        d[: n // 2] = 1
        rng.shuffle(d)
        m1 = np.sin(3 * x.ravel())
        m0 = x.ravel() ** 2
        y = np.where(d == 1, m1, m0)
        s = ExperimentSample(y, d, x)
        resid = residualize_nw(s, NWConfig(bandwidth=0.03))
        assert float(np.mean(resid.residuals ** 2)) < 1e-4

    def test_small_group_rejected(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((6, 1))
        s = ExperimentSample(rng.standard_normal(6), [1, 1, 1, 0, 0, 0], x)
        with pytest.raises(DegenerateSampleError):
            residualize_nw(s)
