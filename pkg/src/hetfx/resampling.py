"""Resampling-based tests: bootstrap, permutation, CI-permutation, covariate permutation.

Replicate draws come from a counter-based generator keyed by the plan
seed, replicate batches are processed in fixed index order, and all
reductions respect that order, so a report is bitwise identical for any
worker-thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._parallel import chunk_ranges, parallel_map, resolve_threads
from .regression import interaction_design, linear_interaction_fit, residualize_nw
from .sample import DegenerateSampleError, ExperimentSample, validate_theta
from .stats import _abs_pow, _cross_mean, _pair_mean, diff_in_means, hkz_stat, \
    kernel_matrix, l_theta_stat

RESAMPLING_METHODS = ("bootstrap", "permutation", "ci_permutation",
                      "covariate_permutation")

# Replicate chunk sizes; fixed constants so accumulation order never varies.
_GEMM_CHUNK = 512


def _cross_chunk(n: int) -> int:
    # Shift-dependent kernels are materialized per chunk as (chunk, n, n)
    # tensors; cap the working set at ~32 MB.
    return max(1, min(256, 4_000_000 // (n * n)))


@dataclass(frozen=True)
class ResamplingPlan:
    """How to build a resampling distribution.

    ``grid_size`` and ``ci_level`` only matter for the CI-permutation
    method; ``ci_level`` is the confidence level of the interval from
    which the candidate-effect grid is drawn.
    """

    method: str
    replicates: int = 2000
    seed: int = 0
    grid_size: int = 21
    ci_level: float = 0.999
    alpha: float = 0.05

    def __post_init__(self):
        if self.method not in RESAMPLING_METHODS:
            raise ValueError(f"unknown resampling method {self.method!r}")
        if self.replicates < 100:
            raise ValueError("need at least 100 replicates")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.method == "ci_permutation":
            if self.grid_size < 1:
                raise ValueError("grid_size must be at least 1")
            if not 0.99 < self.ci_level < 1.0:
                raise ValueError("ci_level must lie in (0.99, 1)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class TestReport:
    """Outcome of one resampling test.

    ``ecp`` is the fraction of replicate statistics at or below the
    observed one; ``reject`` follows the quantile-exceedance rule of the
    chosen method while ``p_value`` uses the add-one convention, so the
    two can disagree by at most one replicate's worth of probability.
    """

    statistic_kind: str
    observed: float
    ecp: float
    p_value: float
    reject: bool
    B_effective: int
    tau_grid: tuple[float, ...] | None = None
    diagnostics: dict = field(default_factory=dict)


def _rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def assignment_sampler(n: int, n1: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random 0/1 assignment vector with exactly ``n1`` ones."""
    if not 1 <= n1 <= n - 1:
        raise ValueError(f"n1 must lie in [1, n-1], got n1={n1}, n={n}")
    return _assignment_batch(rng, n, n1, 1)[0]


def _assignment_batch(rng: np.random.Generator, n: int, n1: int,
                      B: int) -> np.ndarray:
    """(B, n) matrix of independent assignments, each with exactly n1 ones."""
    out = np.zeros((B, n), dtype=np.int8)
    out[:, :n1] = 1
    rng.permuted(out, axis=1, out=out)
    return out


def _order_stat(sorted_vals: np.ndarray, q: float) -> float:
    k = max(1, math.ceil(q * sorted_vals.size))
    return float(sorted_vals[k - 1])


def _replicate_summary(vals: np.ndarray) -> dict:
    s = np.sort(vals)
    return {
        "min": float(s[0]),
        "q25": _order_stat(s, 0.25),
        "median": _order_stat(s, 0.5),
        "q75": _order_stat(s, 0.75),
        "max": float(s[-1]),
        "mean": float(s.mean()),
        "sd": float(s.std(ddof=1)) if s.size > 1 else 0.0,
        "zero_variance": bool(s[0] == s[-1]),
    }


def _ecp(replicates: np.ndarray, observed: float) -> float:
    return float(np.count_nonzero(replicates <= observed)) / replicates.size


def _p_upper(replicates: np.ndarray, observed: float) -> float:
    b = replicates.size
    return (1.0 + np.count_nonzero(replicates >= observed)) / (b + 1.0)


def _p_two_sided(replicates: np.ndarray, observed: float) -> float:
    b = replicates.size
    lo = (1.0 + np.count_nonzero(replicates <= observed)) / (b + 1.0)
    hi = (1.0 + np.count_nonzero(replicates >= observed)) / (b + 1.0)
    return float(min(1.0, max(2.0 * min(lo, hi), 1.0 / (b + 1.0))))


def _decide_two_sided(replicates: np.ndarray, observed: float,
                      alpha: float) -> bool:
    s = np.sort(replicates)
    return bool(observed < _order_stat(s, alpha / 2.0)
                or observed > _order_stat(s, 1.0 - alpha / 2.0))


def _decide_upper(replicates: np.ndarray, observed: float, alpha: float) -> bool:
    s = np.sort(replicates)
    return bool(observed > _order_stat(s, 1.0 - alpha))


# ---------------------------------------------------------------------------
# Batched statistic evaluation

def _batch_quadratic(M: np.ndarray, C: np.ndarray, threads: int) -> np.ndarray:
    """Per-column quadratic form C[:, b]' M C[:, b]."""

    def task(bounds):
        a, b = bounds
        G = M @ C[:, a:b]
        return np.einsum("ij,ij->j", G, C[:, a:b])

    parts = parallel_map(task, chunk_ranges(C.shape[1], _GEMM_CHUNK), threads)
    return np.concatenate(parts)


def _batch_l_labels(M: np.ndarray, c1: np.ndarray, n1: int, n0: int,
                    threads: int) -> np.ndarray:
    """Pair-kernel statistic for label permutations (group sizes fixed)."""
    rows = M.sum(axis=0)
    total = float(rows.sum())
    s11 = _batch_quadratic(M, c1, threads)
    s00 = total - 2.0 * (rows @ c1) + s11
    return s11 / (n1 * n1) - s00 / (n0 * n0)


def _batch_l_counts(M: np.ndarray, c1: np.ndarray, c0: np.ndarray,
                    n1s: np.ndarray, n0s: np.ndarray,
                    threads: int) -> np.ndarray:
    """Pair-kernel statistic for joint bootstrap draws (group sizes vary)."""
    s11 = _batch_quadratic(M, c1, threads)
    s00 = _batch_quadratic(M, c0, threads)
    return s11 / (n1s * n1s) - s00 / (n0s * n0s)


def _batch_hkz(values: np.ndarray, c1: np.ndarray, c0: np.ndarray,
               n1s: np.ndarray, n0s: np.ndarray, theta: float,
               threads: int) -> np.ndarray:
    """Location-shift statistic over weighted draws of ``values``.

    ``c1``/``c0`` are (n, B) multiplicity matrices for the treated and
    control sides of each replicate; the plug-in effect estimate is
    recomputed per replicate and enters the cross term as a shift.
    """
    n = values.size
    M = kernel_matrix(values, values, theta)
    s11 = _batch_quadratic(M, c1, threads)
    s00 = _batch_quadratic(M, c0, threads)
    taus = (values @ c1) / n1s - (values @ c0) / n0s
    base_diff = values[:, None] - values[None, :]

    def task(bounds):
        a, b = bounds
        shifted = base_diff[None, :, :] + taus[a:b, None, None]
        kern = np.exp(-_abs_pow(shifted, theta))
        return np.einsum("bij,ib,jb->b", kern, c0[:, a:b], c1[:, a:b])

    parts = parallel_map(task, chunk_ranges(taus.size, _cross_chunk(n)), threads)
    cross = np.concatenate(parts)
    return s00 / (n0s * n0s) + s11 / (n1s * n1s) - 2.0 * cross / (n0s * n1s)


def _d_from_arrays(control: np.ndarray, treated: np.ndarray,
                   theta: float) -> float:
    return (_pair_mean(control, theta) + _pair_mean(treated, theta)
            - 2.0 * _cross_mean(control, treated, theta))


# ---------------------------------------------------------------------------
# Tests without covariates

def bootstrap_test_l(sample: ExperimentSample, theta: float = 2.0,
                     plan: ResamplingPlan | None = None,
                     threads: int | None = None) -> TestReport:
    """Recentered pair bootstrap for the nuisance-free statistic.

    Draws outcome/assignment pairs jointly with replacement, recenters
    each replicate statistic at the observed value and rejects when the
    observed statistic falls outside the central 1-alpha band of the
    recentered draws. Draws that empty one group are redrawn; after ten
    times the replicate budget the sample is declared degenerate.
    """
    plan = plan or ResamplingPlan(method="bootstrap")
    if plan.method != "bootstrap":
        raise ValueError(f"plan.method must be 'bootstrap', got {plan.method!r}")
    theta = validate_theta(theta)
    threads = resolve_threads(threads)
    rng = _rng_for(plan.seed)
    y, d, n = sample.outcomes, sample.treatments, sample.n
    B = plan.replicates

    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=B).astype(np.float64)
    treated_mask = (d == 1).astype(np.float64)
    redraws = 0
    while True:
        n1s = counts @ treated_mask
        bad = np.flatnonzero((n1s == 0) | (n1s == n))
        if bad.size == 0:
            break
        redraws += bad.size
        if redraws > 10 * B:
            raise DegenerateSampleError(
                "bootstrap draws keep emptying a treatment group"
            )
        counts[bad] = rng.multinomial(n, np.full(n, 1.0 / n), size=bad.size)

    c1 = (counts * treated_mask[None, :]).T
    c0 = counts.T - c1
    n1s = c1.sum(axis=0)
    n0s = c0.sum(axis=0)
    M = kernel_matrix(y, y, theta)
    observed = l_theta_stat(sample, theta)
    recentered = _batch_l_counts(M, c1, c0, n1s, n0s, threads) - observed

    diagnostics = _replicate_summary(recentered)
    diagnostics["redraws"] = redraws
    return TestReport(
        statistic_kind="l_theta",
        observed=observed,
        ecp=_ecp(recentered, observed),
        p_value=_p_two_sided(recentered, observed),
        reject=_decide_two_sided(recentered, observed, plan.alpha),
        B_effective=B,
        diagnostics=diagnostics,
    )


def _permutation_l_replicates(sample: ExperimentSample, theta: float,
                              tau0: float, perms: np.ndarray,
                              threads: int) -> np.ndarray:
    aligned = sample.outcomes + tau0 * (1 - sample.treatments)
    M = kernel_matrix(aligned, aligned, theta)
    c1 = perms.T.astype(np.float64)
    return _batch_l_labels(M, c1, sample.n1, sample.n0, threads)


def permutation_test_l(sample: ExperimentSample, theta: float = 2.0,
                       plan: ResamplingPlan | None = None,
                       tau_hat: float | None = None,
                       threads: int | None = None) -> TestReport:
    """Aligned permutation test for the nuisance-free statistic.

    Control outcomes are shifted up by ``tau_hat`` (difference in means
    unless supplied), treatment labels are redrawn preserving the treated
    count, and the observed statistic is compared two-sidedly against the
    permutation distribution.
    """
    plan = plan or ResamplingPlan(method="permutation")
    if plan.method != "permutation":
        raise ValueError(f"plan.method must be 'permutation', got {plan.method!r}")
    theta = validate_theta(theta)
    threads = resolve_threads(threads)
    rng = _rng_for(plan.seed)
    tau0 = diff_in_means(sample) if tau_hat is None else float(tau_hat)

    perms = _assignment_batch(rng, sample.n, sample.n1, plan.replicates)
    replicates = _permutation_l_replicates(sample, theta, tau0, perms, threads)
    observed = l_theta_stat(sample, theta)

    diagnostics = _replicate_summary(replicates)
    diagnostics["tau_hat"] = tau0
    return TestReport(
        statistic_kind="l_theta",
        observed=observed,
        ecp=_ecp(replicates, observed),
        p_value=_p_two_sided(replicates, observed),
        reject=_decide_two_sided(replicates, observed, plan.alpha),
        B_effective=plan.replicates,
        diagnostics=diagnostics,
    )


def _hkz_perm_replicates(sample: ExperimentSample, theta: float, tau0: float,
                         perms: np.ndarray, threads: int) -> np.ndarray:
    aligned = sample.outcomes + tau0 * (1 - sample.treatments)
    c1 = perms.T.astype(np.float64)
    c0 = 1.0 - c1
    n1s = np.full(perms.shape[0], float(sample.n1))
    n0s = np.full(perms.shape[0], float(sample.n0))
    return _batch_hkz(aligned, c1, c0, n1s, n0s, theta, threads)


def hkz_test(sample: ExperimentSample, theta: float = 2.0,
             plan: ResamplingPlan | None = None,
             threads: int | None = None) -> TestReport:
    """Bootstrap or permutation test for the location-shift statistic.

    Outcomes are first aligned by adding the plug-in effect estimate to
    the controls. The permutation variant redraws labels over the aligned
    outcomes; the bootstrap variant resamples aligned outcomes with
    replacement and draws fresh labels by the assignment rule. Rejection
    is one-sided in the upper tail, and each replicate statistic uses its
    own recomputed plug-in estimate.
    """
    plan = plan or ResamplingPlan(method="permutation")
    if plan.method not in ("bootstrap", "permutation"):
        raise ValueError(
            f"plan.method must be 'bootstrap' or 'permutation', got {plan.method!r}"
        )
    theta = validate_theta(theta)
    threads = resolve_threads(threads)
    rng = _rng_for(plan.seed)
    n, n1 = sample.n, sample.n1
    B = plan.replicates
    tau0 = diff_in_means(sample)
    aligned = sample.outcomes + tau0 * (1 - sample.treatments)
    observed = hkz_stat(sample, tau0, theta)

    labels = _assignment_batch(rng, n, n1, B)
    if plan.method == "permutation":
        c1 = labels.T.astype(np.float64)
        c0 = 1.0 - c1
    else:
        draws = rng.integers(0, n, size=(B, n))
        c1 = np.zeros((n, B))
        c0 = np.zeros((n, B))
        for b in range(B):
            picked = draws[b]
            treated_rows = labels[b] == 1
            c1[:, b] = np.bincount(picked[treated_rows], minlength=n)
            c0[:, b] = np.bincount(picked[~treated_rows], minlength=n)
    n1s = np.full(B, float(n1))
    n0s = np.full(B, float(n - n1))
    replicates = _batch_hkz(aligned, c1, c0, n1s, n0s, theta, threads)

    diagnostics = _replicate_summary(replicates)
    diagnostics["tau_hat"] = tau0
    return TestReport(
        statistic_kind="hkz",
        observed=observed,
        ecp=_ecp(replicates, observed),
        p_value=_p_upper(replicates, observed),
        reject=_decide_upper(replicates, observed, plan.alpha),
        B_effective=B,
        diagnostics=diagnostics,
    )


def welch_ci(sample: ExperimentSample, level: float) -> tuple[float, float]:
    """Normal-approximation confidence interval for the mean effect.

    Uses unpooled group variances. When both groups are constant the
    interval degenerates to a point.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if sample.n1 < 2 or sample.n0 < 2:
        raise DegenerateSampleError("confidence interval needs >= 2 units per group")
    t = sample.treated_outcomes
    c = sample.control_outcomes
    tau = float(t.mean() - c.mean())
    se = math.sqrt(t.var(ddof=1) / t.size + c.var(ddof=1) / c.size)
    half = float(norm.ppf(0.5 + level / 2.0)) * se
    return tau - half, tau + half


def ci_permutation_test(sample: ExperimentSample, statistic_kind: str = "l_theta",
                        theta: float = 2.0, plan: ResamplingPlan | None = None,
                        threads: int | None = None) -> TestReport:
    """Permutation test maximized over a confidence grid for the mean effect.

    Runs the aligned permutation test at each of ``grid_size`` equally
    spaced candidate effects spanning a ``ci_level`` confidence interval,
    takes the largest p-value and adds the interval's complement
    probability. A single-point grid degenerates to the plain test at the
    plug-in estimate.
    """
    plan = plan or ResamplingPlan(method="ci_permutation")
    if plan.method != "ci_permutation":
        raise ValueError(
            f"plan.method must be 'ci_permutation', got {plan.method!r}"
        )
    if statistic_kind not in ("l_theta", "hkz"):
        raise ValueError(f"unsupported statistic {statistic_kind!r}")
    theta = validate_theta(theta)
    threads = resolve_threads(threads)
    rng = _rng_for(plan.seed)

    if plan.grid_size == 1:
        grid = np.array([diff_in_means(sample)])
    else:
        lo, hi = welch_ci(sample, plan.ci_level)
        grid = np.linspace(lo, hi, plan.grid_size)

    perms = _assignment_batch(rng, sample.n, sample.n1, plan.replicates)
    if statistic_kind == "l_theta":
        observed = l_theta_stat(sample, theta)

        def p_at(tau0):
            reps = _permutation_l_replicates(sample, theta, tau0, perms, 1)
            return _p_two_sided(reps, observed), _ecp(reps, observed)
    else:
        observed = hkz_stat(sample, diff_in_means(sample), theta)

        def p_at(tau0):
            reps = _hkz_perm_replicates(sample, theta, tau0, perms, 1)
            return _p_upper(reps, observed), _ecp(reps, observed)

    results = parallel_map(p_at, list(grid), threads)
    p_values = np.array([r[0] for r in results])
    worst = int(np.argmax(p_values))
    penalty = 1.0 - plan.ci_level
    p_final = float(min(1.0, p_values[worst] + penalty))
    return TestReport(
        statistic_kind=statistic_kind,
        observed=observed,
        ecp=results[worst][1],
        p_value=p_final,
        reject=p_final <= plan.alpha,
        B_effective=plan.replicates,
        tau_grid=tuple(float(t) for t in grid),
        diagnostics={
            "per_tau_p": [float(p) for p in p_values],
            "binding_tau": float(grid[worst]),
            "penalty": penalty,
        },
    )


# ---------------------------------------------------------------------------
# Covariate test

def covariate_permutation_test(sample: ExperimentSample, theta: float = 2.0,
                               plan: ResamplingPlan | None = None,
                               residualization: str = "linear_interaction",
                               unit_shift: bool = False,
                               threads: int | None = None) -> TestReport:
    """Permutation test for the residual-ECF statistic with covariates.

    The interaction model fixes a treatment-shift from its coefficients on
    the treatment and interaction columns: by default the scalar sum of
    those coefficients, or per-unit values when ``unit_shift`` is set. Each
    replicate redraws assignments, moves outcomes by (new - old assignment)
    times the shift, refits residuals on the permuted data and recomputes
    the statistic; rejection is one-sided in the upper tail.
    """
    plan = plan or ResamplingPlan(method="covariate_permutation")
    if plan.method != "covariate_permutation":
        raise ValueError(
            f"plan.method must be 'covariate_permutation', got {plan.method!r}"
        )
    if sample.covariates is None:
        raise ValueError("covariate permutation test requires covariates")
    if residualization not in ("linear_interaction", "nadaraya_watson"):
        raise ValueError(f"unsupported residualization {residualization!r}")
    theta = validate_theta(theta)
    threads = resolve_threads(threads)
    rng = _rng_for(plan.seed)

    y, d, x = sample.outcomes, sample.treatments, sample.covariates
    q = x.shape[1]
    fit = linear_interaction_fit(sample)
    interaction_coef = fit.coefficients[2 + q:]
    if unit_shift:
        shift = fit.coefficients[1] + x @ interaction_coef
    else:
        shift = fit.coefficients[1] + float(interaction_coef.sum())

    def residuals_for(outcomes, labels):
        if residualization == "linear_interaction":
            design = interaction_design(labels, x)
            coef, _, _, _ = np.linalg.lstsq(design, outcomes, rcond=None)
            return outcomes - design @ coef
        resid_sample = ExperimentSample(outcomes, labels, x)
        return residualize_nw(resid_sample).residuals

    obs_resid = residuals_for(y, d)
    observed = _d_from_arrays(obs_resid[d == 0], obs_resid[d == 1], theta)

    perms = _assignment_batch(rng, sample.n, sample.n1, plan.replicates)

    def task(bounds):
        a, b = bounds
        out = np.empty(b - a)
        for i in range(a, b):
            dstar = perms[i].astype(np.int64)
            ystar = y + (dstar - d) * shift
            resid = residuals_for(ystar, dstar)
            out[i - a] = _d_from_arrays(resid[dstar == 0], resid[dstar == 1],
                                        theta)
        return out

    parts = parallel_map(task, chunk_ranges(plan.replicates, 64), threads)
    replicates = np.concatenate(parts)

    diagnostics = _replicate_summary(replicates)
    diagnostics["residualization"] = residualization
    diagnostics["unit_shift"] = unit_shift
    return TestReport(
        statistic_kind="d_theta",
        observed=observed,
        ecp=_ecp(replicates, observed),
        p_value=_p_upper(replicates, observed),
        reject=_decide_upper(replicates, observed, plan.alpha),
        B_effective=plan.replicates,
        diagnostics=diagnostics,
    )
