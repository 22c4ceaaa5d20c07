"""DGP construction and the Monte Carlo harness."""

import math

import numpy as np
import pytest

from hetfx import (
    DGPConfig,
    TestConfig,
    VariationFlags,
    gen_cov,
    gen_nocov,
    generate,
    plain_statistic,
    run_size_power,
    size_adjusted_power,
)


class TestNoCovDGP:
    def test_constant_effect_shifts_treated_by_one(self):
        # With sigma_tau = 0 the treated arm equals baseline + 1; compare
        # against a re-draw of the same seed with the labels stripped.
        cfg = DGPConfig(family="normal", n=500, sigma_tau=0.0, seed=42)
        s = gen_nocov(cfg)
        assert s.n1 == 250
        # Treated outcomes are baseline + 1, so group difference has mean
        # near 1 and both groups have unit-ish variance.
        assert s.treated_outcomes.mean() - s.control_outcomes.mean() == \
            pytest.approx(1.0, abs=0.25)

    def test_variance_scaling_under_heterogeneity(self):
        cfg = DGPConfig(family="normal", n=400_000, sigma_tau=0.5, seed=1)
        s = gen_nocov(cfg)
        ratio = s.treated_outcomes.var() / s.control_outcomes.var()
        assert ratio == pytest.approx(1.5 ** 2, rel=0.02)

    def test_fixed_seed_reproducible(self):
        cfg = DGPConfig(family="lognormal", n=100, sigma_tau=0.2, seed=7)
        a, b = gen_nocov(cfg), gen_nocov(cfg)
        assert np.array_equal(a.outcomes, b.outcomes)
        assert np.array_equal(a.treatments, b.treatments)

    def test_families_distinct(self):
        samples = {}
        for family in ("normal", "t5", "exponential", "lognormal"):
            cfg = DGPConfig(family=family, n=50_000, seed=3)
            samples[family] = gen_nocov(cfg).control_outcomes
        assert samples["exponential"].min() >= 0
        assert samples["lognormal"].min() >= 0
        assert abs(samples["normal"].mean()) < 0.05
        assert samples["t5"].var() == pytest.approx(5 / 3, rel=0.1)

    def test_bad_family_rejected(self):
        with pytest.raises(ValueError):
            DGPConfig(family="cauchy", n=100)
        cfg = DGPConfig(family="covariate_linear", n=100,
                        variation=VariationFlags())
        with pytest.raises(ValueError):
            gen_nocov(cfg)


class TestCovDGP:
    def test_constant_effect_without_flags(self):
        cfg = DGPConfig(family="covariate_linear", n=2000,
                        variation=VariationFlags(False, False), seed=5)
        s = gen_cov(cfg)
        assert s.n1 == 1200  # sixty percent treated
        # Effect exactly 0.3: group mean difference recovers it.
        assert s.treated_outcomes.mean() - s.control_outcomes.mean() == \
            pytest.approx(0.3, abs=0.15)

    def test_systematic_effect_formula(self):
        cfg = DGPConfig(family="covariate_linear", n=100_000,
                        variation=VariationFlags(systematic=True), seed=6)
        s = gen_cov(cfg)
        x1 = s.covariates[:, 0]
        x3 = s.covariates[:, 2]
        expected = 0.2 + 0.1 * x1.mean() + 0.4 * x3.mean()
        assert s.treated_outcomes.mean() - s.control_outcomes.mean() == \
            pytest.approx(expected, abs=0.02)

    def test_baseline_mean(self):
        cfg = DGPConfig(family="covariate_linear", n=1_000_000,
                        variation=VariationFlags(), seed=7)
        s = gen_cov(cfg)
        assert s.control_outcomes.mean() == pytest.approx(0.35, abs=0.01)

    def test_covariate_marginals(self):
        cfg = DGPConfig(family="covariate_linear", n=200_000,
                        variation=VariationFlags(), seed=8)
        x = gen_cov(cfg).covariates
        assert x[:, 1].mean() == pytest.approx(0.5, abs=0.01)
        assert x[:, 2].mean() == pytest.approx(0.25, abs=0.01)
        assert x[:, 3].std() == pytest.approx(1.0, rel=0.02)

    def test_requires_variation_flags(self):
        with pytest.raises(ValueError):
            DGPConfig(family="covariate_linear", n=100)
        with pytest.raises(ValueError):
            DGPConfig(family="normal", n=100, variation=VariationFlags())
        with pytest.raises(ValueError):
            DGPConfig(family="covariate_linear", n=100, sigma_tau=0.5,
                      variation=VariationFlags())


class TestHarness:
    def test_smoke_grid_and_standard_errors(self):
        cells = [
            (DGPConfig(family="normal", n=50),
             TestConfig("l_theta", "perm", B=100)),
            (DGPConfig(family="exponential", n=50),
             TestConfig("hkz", "perm", B=100)),
        ]
        result = run_size_power(cells, 100, master_seed=1, threads=1)
        for cell in result.cells:
            assert cell.errors == 0
            assert cell.replications == 100
            p = cell.rejection_rate
            assert cell.mc_standard_error == pytest.approx(
                math.sqrt(p * (1 - p) / 100))

    def test_reproducible_across_thread_counts(self):
        cells = [(DGPConfig(family="normal", n=40),
                  TestConfig("l_theta", "perm", B=100))]
        a = run_size_power(cells, 120, master_seed=9, threads=1)
        b = run_size_power(cells, 120, master_seed=9, threads=4)
        assert a.cells[0].rejections == b.cells[0].rejections

    def test_tstat_cell(self):
        cells = [(DGPConfig(family="normal", n=100),
                  TestConfig("tstat", "asymptotic"))]
        result = run_size_power(cells, 200, master_seed=2, threads=1)
        assert 0.0 <= result.cells[0].rejection_rate <= 0.2

    def test_rows_schema(self):
        cells = [(DGPConfig(family="covariate_linear", n=60,
                            variation=VariationFlags(False, True)),
                  TestConfig("d_theta", "covperm", B=100))]
        result = run_size_power(cells, 100, master_seed=3, threads=1)
        row = result.rows()[0]
        assert row["variation"] == "idiosyncratic"
        assert set(row) >= {"test_id", "family", "n", "rejection_rate",
                            "mc_standard_error", "errors"}


class TestSizeAdjusted:
    def test_null_draws_reject_at_nominal_rate(self):
        # Evaluating null draws against null critical values recovers the
        # nominal level by construction.
        cells = [(DGPConfig(family="normal", n=80, sigma_tau=0.0),
                  TestConfig("l_theta", "perm"))]
        result = size_adjusted_power(cells, 1000, master_seed=4, threads=1)
        assert result.cells[0].rejection_rate == pytest.approx(0.05, abs=0.02)

    def test_power_monotone_in_heterogeneity(self):
        def power(sigma, n):
            cells = [(DGPConfig(family="normal", n=n, sigma_tau=sigma),
                      TestConfig("l_theta", "perm"))]
            res = size_adjusted_power(cells, 2000, master_seed=5, threads=1)
            return res.cells[0].rejection_rate, res.cells[0].mc_standard_error

        for n in (100, 400):
            lo, se_lo = power(0.2, n)
            hi, se_hi = power(0.5, n)
            assert hi - lo > 2 * max(se_lo, se_hi)

    def test_one_sided_statistic_uses_upper_cutoff(self):
        cells = [(DGPConfig(family="normal", n=60, sigma_tau=0.0),
                  TestConfig("hkz", "perm"))]
        result = size_adjusted_power(cells, 500, master_seed=6, threads=1)
        assert result.cells[0].rejection_rate == pytest.approx(0.05, abs=0.03)


class TestPlainStatistic:
    def test_dispatch(self):
        rng_cfg = DGPConfig(family="normal", n=40, seed=11)
        s = generate(rng_cfg)
        assert math.isfinite(plain_statistic(s, TestConfig("l_theta", "perm")))
        assert math.isfinite(plain_statistic(s, TestConfig("hkz", "perm")))
        sc = generate(DGPConfig(family="covariate_linear", n=40,
                                variation=VariationFlags(), seed=11))
        assert math.isfinite(plain_statistic(sc, TestConfig("d_theta", "covperm")))
        with pytest.raises(ValueError):
            plain_statistic(s, TestConfig("tstat", "asymptotic"))
