"""Quadrature cross-checks of the pair-kernel statistic."""

import math

import numpy as np
import pytest

from hetfx import ExperimentSample, QuadratureConfig, l_quadrature_oracle, \
    l_theta_stat


def make_sample(treated, control):
    y = np.concatenate([np.asarray(treated, float), np.asarray(control, float)])
    d = np.array([1] * len(treated) + [0] * len(control))
    return ExperimentSample(y, d)


def test_identical_groups_vanish():
    s = make_sample([0.0, 1.0, 2.5], [0.0, 1.0, 2.5])
    assert l_quadrature_oracle(s, 2.0) == pytest.approx(0.0, abs=1e-10)
    assert l_quadrature_oracle(s, 1.0) == pytest.approx(0.0, abs=1e-8)


def test_hand_computed_value_theta2():
    s = make_sample([0.0, 1.0], [0.0, 2.0])
    expected = (math.exp(-1) - math.exp(-4)) / 2
    assert l_quadrature_oracle(s, 2.0) == pytest.approx(expected, abs=1e-6)


def test_matches_statistic_theta2_random():
    rng = np.random.default_rng(10)
    for _ in range(10):
        n = int(rng.integers(10, 80))
        y = rng.standard_normal(n) * rng.uniform(0.5, 3.0)
        d = np.zeros(n, int)
        d[: int(rng.integers(1, n))] = 1
        rng.shuffle(d)
        s = ExperimentSample(y, d)
        assert l_quadrature_oracle(s, 2.0) == pytest.approx(
            l_theta_stat(s, 2.0), abs=1e-8)


def test_matches_statistic_theta1_random():
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = int(rng.integers(10, 60))
        y = rng.standard_exponential(n)
        d = np.zeros(n, int)
        d[: n // 3 + 1] = 1
        rng.shuffle(d)
        s = ExperimentSample(y, d)
        assert l_quadrature_oracle(s, 1.0) == pytest.approx(
            l_theta_stat(s, 1.0), abs=1e-6)


def test_node_doubling_converged():
    rng = np.random.default_rng(12)
    y = rng.standard_normal(50)
    d = np.zeros(50, int)
    d[:20] = 1
    rng.shuffle(d)
    s = ExperimentSample(y, d)
    coarse = l_quadrature_oracle(s, 2.0, QuadratureConfig(nodes_per_wavelength=8))
    fine = l_quadrature_oracle(s, 2.0, QuadratureConfig(nodes_per_wavelength=16))
    assert fine == pytest.approx(coarse, abs=1e-8)


def test_unsupported_theta_rejected():
    s = make_sample([0.0], [1.0])
    with pytest.raises(ValueError):
        l_quadrature_oracle(s, 1.5)


def test_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(min_nodes=32)
    with pytest.raises(ValueError):
        QuadratureConfig(truncation=-1.0)
