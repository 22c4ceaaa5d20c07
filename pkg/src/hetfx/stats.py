"""Test statistics built on the empirical characteristic function.

Every statistic here reduces to sums of the pair kernel
``exp(-|y - y'|**theta)`` over within-group or cross-group pairs. All
functions are pure; pairwise sums are accumulated over fixed row-major
blocks so results are bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .sample import (
    DegenerateSampleError,
    DegenerateVarianceError,
    ExperimentSample,
    ResidualizedSample,
    validate_theta,
)

# Row-block size for pairwise accumulations; fixed so that summation order
# (and therefore the floating-point result) never depends on input size
# thresholds or thread counts.
_BLOCK = 256


def _abs_pow(diffs: np.ndarray, theta: float) -> np.ndarray:
    if theta == 2.0:
        return diffs * diffs
    return np.abs(diffs) ** theta


def kernel_matrix(left: np.ndarray, right: np.ndarray, theta: float,
                  shift: float = 0.0) -> np.ndarray:
    """Pairwise kernel exp(-|left_i + shift - right_j|**theta)."""
    d = (left[:, None] + shift) - right[None, :]
    return np.exp(-_abs_pow(d, theta))


def _pair_mean(values: np.ndarray, theta: float) -> float:
    """Mean of the kernel over all ordered pairs, diagonal included."""
    m = values.size
    total = 0.0
    for start in range(0, m, _BLOCK):
        block = kernel_matrix(values[start:start + _BLOCK], values, theta)
        total += float(block.sum())
    return total / (m * m)


def _cross_mean(left: np.ndarray, right: np.ndarray, theta: float,
                shift: float = 0.0) -> float:
    """Mean of exp(-|left_i + shift - right_j|**theta) over all cross pairs."""
    total = 0.0
    for start in range(0, left.size, _BLOCK):
        block = kernel_matrix(left[start:start + _BLOCK], right, theta, shift)
        total += float(block.sum())
    return total / (left.size * right.size)


def ecf(values, t: float) -> complex:
    """Empirical characteristic function of ``values`` at frequency ``t``.

    Returns the complex number with real part ``mean(cos(t*v))`` and
    imaginary part ``mean(sin(t*v))``; its modulus never exceeds 1.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("ecf requires a non-empty sample")
    if not np.all(np.isfinite(v)):
        raise ValueError("ecf requires finite values")
    arg = t * v
    return complex(np.cos(arg).mean(), np.sin(arg).mean())


def diff_in_means(sample: ExperimentSample) -> float:
    """Mean treated outcome minus mean control outcome."""
    return float(sample.treated_outcomes.mean() - sample.control_outcomes.mean())


def l_theta_stat(sample: ExperimentSample, theta: float = 2.0) -> float:
    """Difference of within-group mean pair kernels.

    The statistic compares the treated and control distributions through
    the characteristic functions of their within-group differences, so it
    is invariant to shifting either group by a constant and needs no
    estimate of the average treatment effect. Both double sums run over
    all ordered pairs including i == j.
    """
    theta = validate_theta(theta)
    return (_pair_mean(sample.treated_outcomes, theta)
            - _pair_mean(sample.control_outcomes, theta))


def hkz_stat(sample: ExperimentSample, tau_hat: float, theta: float = 2.0) -> float:
    """Location-shift two-sample statistic with a plug-in effect estimate.

    Sum of the two within-group mean pair kernels minus twice the
    cross-group mean kernel computed after shifting control outcomes by
    ``tau_hat``. Zero when the aligned groups coincide.
    """
    theta = validate_theta(theta)
    if not math.isfinite(tau_hat):
        raise ValueError("tau_hat must be finite")
    treated = sample.treated_outcomes
    control = sample.control_outcomes
    return (_pair_mean(control, theta) + _pair_mean(treated, theta)
            - 2.0 * _cross_mean(control, treated, theta, shift=tau_hat))


def d_theta_stat(resid: ResidualizedSample, theta: float = 2.0) -> float:
    """Squared weighted ECF distance between treated and control residuals.

    Expands to within-group pair-kernel means plus cross terms; the value
    is non-negative up to floating-point slack and zero when both residual
    multisets coincide.
    """
    theta = validate_theta(theta)
    treated = resid.treated
    control = resid.control
    return (_pair_mean(control, theta) + _pair_mean(treated, theta)
            - 2.0 * _cross_mean(control, treated, theta))


@dataclass(frozen=True)
class VarianceEstimate:
    """Components of the asymptotic variance of the pair-kernel statistic.

    ``r2_*`` are mean kernels over unordered pairs, ``r3_*`` mean anchored
    kernel products over ordered triples; all four lie in (0, 1].
    ``zeta_pop`` and ``mu_l_theta`` are optional reference slots for known
    population values (never computed from data).
    """

    zeta_hat: float
    r2_treated: float
    r2_control: float
    r3_treated: float
    r3_control: float
    zeta_pop: float | None = None
    mu_l_theta: float | None = None


def _group_r2_r3(values: np.ndarray, theta: float) -> tuple[float, float]:
    m = values.size
    kern = kernel_matrix(values, values, theta)
    # Pair sum over j < l and, for triples j < l < k, the anchored product
    # kern[j, l] * kern[j, k] expressed through per-row tail sums.
    pair_total = 0.0
    triple_total = 0.0
    for j in range(m - 1):
        row = kern[j, j + 1:]
        srow = float(row.sum())
        pair_total += srow
        triple_total += (srow * srow - float((row * row).sum())) / 2.0
    r2 = pair_total / (m * (m - 1) / 2)
    r3 = triple_total / (m * (m - 1) * (m - 2) / 6)
    return r2, r3


def zeta_hat(sample: ExperimentSample, theta: float = 2.0) -> VarianceEstimate:
    """Plug-in estimate of the variance constant from pair and triple kernels.

    Requires at least 3 units per group so that triples exist. The triple
    statistic anchors the kernel product at the smallest index of each
    ordered triple; the estimate combines both groups weighted by one
    minus their sample share.
    """
    theta = validate_theta(theta)
    if sample.n1 < 3 or sample.n0 < 3:
        raise DegenerateSampleError(
            f"variance estimation needs >= 3 units per group, "
            f"got n1={sample.n1}, n0={sample.n0}"
        )
    r2_t, r3_t = _group_r2_r3(sample.treated_outcomes, theta)
    r2_c, r3_c = _group_r2_r3(sample.control_outcomes, theta)
    n = sample.n
    zeta = ((1.0 - sample.n1 / n) * (r3_t - r2_t * r2_t)
            + (1.0 - sample.n0 / n) * (r3_c - r2_c * r2_c))
    return VarianceEstimate(zeta_hat=zeta, r2_treated=r2_t, r2_control=r2_c,
                            r3_treated=r3_t, r3_control=r3_c)


class TStatResult(NamedTuple):
    z: float
    p: float


def t_stat_test(sample: ExperimentSample, theta: float = 2.0,
                mu0: float = 0.0) -> TStatResult:
    """Normal-approximation test for the pair-kernel statistic.

    Standardizes ``l_theta_stat - mu0`` by ``2 * sqrt(zeta_hat * n / (n0*n1))``
    and returns the z value with a two-sided standard normal p-value. Under
    a constant treatment effect the statistic is centered at zero, hence
    the default ``mu0 = 0``.
    """
    est = zeta_hat(sample, theta)
    if est.zeta_hat <= 0.0:
        raise DegenerateVarianceError(
            f"variance estimate is not positive (zeta_hat={est.zeta_hat!r})"
        )
    n, n1, n0 = sample.n, sample.n1, sample.n0
    se = 2.0 * math.sqrt(est.zeta_hat * n / (n0 * n1))
    z = (l_theta_stat(sample, theta) - mu0) / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return TStatResult(z=z, p=p)
