"""Data-generating processes and the Monte Carlo size/power harness."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import parallel_map, resolve_threads
from .regression import residualize_linear
from .resampling import ResamplingPlan, bootstrap_test_l, ci_permutation_test, \
    covariate_permutation_test, hkz_test, permutation_test_l
from .sample import ExperimentSample
from .stats import d_theta_stat, diff_in_means, hkz_stat, l_theta_stat, t_stat_test

NOCOV_FAMILIES = ("normal", "t5", "exponential", "lognormal")
FAMILIES = NOCOV_FAMILIES + ("covariate_linear",)


@dataclass(frozen=True)
class VariationFlags:
    """Which components of the unit-level effect vary in the covariate DGP."""

    systematic: bool = False
    idiosyncratic: bool = False


@dataclass(frozen=True)
class DGPConfig:
    """One data-generating process.

    Non-covariate families draw a baseline outcome from the named
    distribution and add a unit effect of ``1 + sigma_tau * baseline``;
    the covariate family follows a fixed linear model in four covariates
    with the variation flags switching systematic/idiosyncratic effect
    components on and off.
    """

    family: str
    n: int
    sigma_tau: float = 0.0
    treated_fraction: float | None = None
    variation: VariationFlags | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.sigma_tau < 0:
            raise ValueError("sigma_tau must be non-negative")
        if self.family == "covariate_linear":
            if self.variation is None:
                raise ValueError("covariate_linear requires variation flags")
            if self.sigma_tau != 0.0:
                raise ValueError("covariate_linear does not use sigma_tau")
        elif self.variation is not None:
            raise ValueError(f"{self.family} does not take variation flags")
        frac = self.treated_fraction
        if frac is None:
            frac = 0.6 if self.family == "covariate_linear" else 0.5
            object.__setattr__(self, "treated_fraction", frac)
        if not 0.0 < frac < 1.0:
            raise ValueError("treated_fraction must lie in (0, 1)")
        n1 = int(frac * self.n)
        if n1 < 1 or n1 >= self.n:
            raise ValueError("treated_fraction leaves an empty group")


def _dgp_rng(config: DGPConfig) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(config.seed)))


def _assign(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    n1 = int(fraction * n)
    d = np.zeros(n, dtype=np.int64)
    d[:n1] = 1
    rng.shuffle(d)
    return d


def gen_nocov(config: DGPConfig) -> ExperimentSample:
    """Draw a sample without covariates.

    Baseline outcomes follow the configured distribution; treated
    potential outcomes add ``1 + sigma_tau * baseline``; exactly
    ``floor(treated_fraction * n)`` units are treated, completely at
    random.
    """
    if config.family not in NOCOV_FAMILIES:
        raise ValueError(f"{config.family!r} is not a no-covariate family")
    rng = _dgp_rng(config)
    n = config.n
    if config.family == "normal":
        y0 = rng.standard_normal(n)
    elif config.family == "t5":
        y0 = rng.standard_t(5, size=n)
    elif config.family == "exponential":
        y0 = rng.standard_exponential(n)
    else:
        y0 = np.exp(rng.standard_normal(n))
    y1 = y0 + 1.0 + config.sigma_tau * y0
    d = _assign(rng, n, config.treated_fraction)
    observed = np.where(d == 1, y1, y0)
    return ExperimentSample(outcomes=observed, treatments=d)


def gen_cov(config: DGPConfig) -> ExperimentSample:
    """Draw a sample from the linear-in-covariates DGP.

    Covariates are two standard normals and two Bernoullis (rates 0.5 and
    0.25); the baseline outcome is a fixed linear combination plus noise
    with standard deviation 0.26. The effect is 0.3 (or a linear function
    of the first and third covariates under systematic variation), plus
    optional idiosyncratic noise with standard deviation 0.2.
    """
    if config.family != "covariate_linear":
        raise ValueError("gen_cov requires the covariate_linear family")
    rng = _dgp_rng(config)
    n = config.n
    x1 = rng.standard_normal(n)
    x2 = (rng.random(n) < 0.5).astype(np.float64)
    x3 = (rng.random(n) < 0.25).astype(np.float64)
    x4 = rng.standard_normal(n)
    u = rng.normal(0.0, 0.26, size=n)
    y0 = 0.3 + 0.2 * x1 + 0.3 * x2 - 0.4 * x3 + 0.8 * x4 + u
    flags = config.variation
    delta = 0.2 + 0.1 * x1 + 0.4 * x3 if flags.systematic else np.full(n, 0.3)
    eps = rng.normal(0.0, 0.2, size=n) if flags.idiosyncratic else 0.0
    tau = delta + eps
    d = _assign(rng, n, config.treated_fraction)
    observed = np.where(d == 1, y0 + tau, y0)
    return ExperimentSample(outcomes=observed, treatments=d,
                            covariates=np.column_stack([x1, x2, x3, x4]))


def generate(config: DGPConfig) -> ExperimentSample:
    """Draw a sample from any configured family."""
    if config.family == "covariate_linear":
        return gen_cov(config)
    return gen_nocov(config)


@dataclass(frozen=True)
class TestConfig:
    """Which test to run in a Monte Carlo cell."""

    statistic: str                    # l_theta | hkz | d_theta | tstat
    method: str                       # boot | perm | ciperm | covperm | asymptotic
    theta: float = 2.0
    B: int = 2000
    alpha: float = 0.05
    grid_size: int = 21
    ci_level: float = 0.999
    unit_shift: bool = False

    @property
    def test_id(self) -> str:
        return f"{self.statistic}/{self.method}"


def run_single_test(sample: ExperimentSample, tc: TestConfig, seed: int) -> bool:
    """Run one configured test and return the rejection decision."""
    if tc.statistic == "tstat":
        if tc.method != "asymptotic":
            raise ValueError("tstat only supports the asymptotic method")
        return t_stat_test(sample, tc.theta).p <= tc.alpha
    if tc.method == "ciperm":
        plan = ResamplingPlan(method="ci_permutation", replicates=tc.B, seed=seed,
                              grid_size=tc.grid_size, ci_level=tc.ci_level,
                              alpha=tc.alpha)
        return ci_permutation_test(sample, tc.statistic, tc.theta, plan,
                                   threads=1).reject
    if tc.method == "covperm":
        if tc.statistic != "d_theta":
            raise ValueError("covperm only applies to d_theta")
        plan = ResamplingPlan(method="covariate_permutation", replicates=tc.B,
                              seed=seed, alpha=tc.alpha)
        return covariate_permutation_test(sample, tc.theta, plan,
                                          unit_shift=tc.unit_shift,
                                          threads=1).reject
    if tc.method == "boot":
        if tc.statistic == "l_theta":
            plan = ResamplingPlan(method="bootstrap", replicates=tc.B, seed=seed,
                                  alpha=tc.alpha)
            return bootstrap_test_l(sample, tc.theta, plan, threads=1).reject
        if tc.statistic == "hkz":
            plan = ResamplingPlan(method="bootstrap", replicates=tc.B, seed=seed,
                                  alpha=tc.alpha)
            return hkz_test(sample, tc.theta, plan, threads=1).reject
    if tc.method == "perm":
        plan = ResamplingPlan(method="permutation", replicates=tc.B, seed=seed,
                              alpha=tc.alpha)
        if tc.statistic == "l_theta":
            return permutation_test_l(sample, tc.theta, plan, threads=1).reject
        if tc.statistic == "hkz":
            return hkz_test(sample, tc.theta, plan, threads=1).reject
    raise ValueError(f"unsupported test {tc.statistic!r}/{tc.method!r}")


def plain_statistic(sample: ExperimentSample, tc: TestConfig) -> float:
    """Evaluate the bare test statistic, without any resampling."""
    if tc.statistic == "l_theta":
        return l_theta_stat(sample, tc.theta)
    if tc.statistic == "hkz":
        return hkz_stat(sample, diff_in_means(sample), tc.theta)
    if tc.statistic == "d_theta":
        return d_theta_stat(residualize_linear(sample), tc.theta)
    raise ValueError(f"no plain statistic for {tc.statistic!r}")


@dataclass(frozen=True)
class MonteCarloCell:
    """Aggregated rejection record for one (DGP, test) pair."""

    test_id: str
    family: str
    n: int
    sigma_tau: float
    variation: str
    replications: int
    rejections: int
    errors: int
    elapsed_seconds: float

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.replications

    @property
    def mc_standard_error(self) -> float:
        p = self.rejection_rate
        return math.sqrt(p * (1.0 - p) / self.replications)

    def as_row(self) -> dict:
        return {
            "test_id": self.test_id,
            "family": self.family,
            "n": self.n,
            "sigma_tau": self.sigma_tau,
            "variation": self.variation,
            "replications": self.replications,
            "rejections": self.rejections,
            "rejection_rate": self.rejection_rate,
            "mc_standard_error": self.mc_standard_error,
            "errors": self.errors,
            "elapsed_seconds": self.elapsed_seconds,
        }


@dataclass(frozen=True)
class MonteCarloResult:
    cells: tuple[MonteCarloCell, ...]
    master_seed: int
    threads: int
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [cell.as_row() for cell in self.cells]


def _variation_label(dgp: DGPConfig) -> str:
    if dgp.variation is None:
        return ""
    parts = []
    if dgp.variation.systematic:
        parts.append("systematic")
    if dgp.variation.idiosyncratic:
        parts.append("idiosyncratic")
    return "+".join(parts) if parts else "none"


def _replicate_seeds(master_seed: int, spawn_key: tuple[int, ...]) -> tuple[int, int]:
    state = np.random.SeedSequence(master_seed, spawn_key=spawn_key) \
        .generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def run_size_power(cells, replications: int, master_seed: int = 0,
                   threads: int | None = None) -> MonteCarloResult:
    """Estimate rejection rates over a grid of (DGP, test) cells.

    Every replicate generates a fresh sample and runs the configured test
    at its own derived seed, so results are reproducible for a fixed
    master seed regardless of the worker count. Replicates that raise are
    counted as errors and excluded from the rate.
    """
    if replications < 100:
        raise ValueError("need at least 100 replications")
    threads = resolve_threads(threads)
    out = []
    for cell_idx, (dgp, tc) in enumerate(cells):
        start = time.perf_counter()

        def one(rep, _dgp=dgp, _tc=tc, _ci=cell_idx):
            dgp_seed, test_seed = _replicate_seeds(master_seed, (_ci, rep))
            try:
                sample = generate(replace(_dgp, seed=dgp_seed))
                return 1 if run_single_test(sample, _tc, test_seed) else 0
            except Exception:
                return -1

        decisions = parallel_map(one, range(replications), threads)
        errors = sum(1 for v in decisions if v < 0)
        rejections = sum(1 for v in decisions if v > 0)
        out.append(MonteCarloCell(
            test_id=tc.test_id, family=dgp.family, n=dgp.n,
            sigma_tau=dgp.sigma_tau, variation=_variation_label(dgp),
            replications=replications - errors, rejections=rejections,
            errors=errors, elapsed_seconds=time.perf_counter() - start,
        ))
    return MonteCarloResult(cells=tuple(out), master_seed=master_seed,
                            threads=threads,
                            metadata={"replications": replications})


def size_adjusted_power(cells, replications: int, master_seed: int = 0,
                        threads: int | None = None) -> MonteCarloResult:
    """Power against simulated null critical values.

    Phase one simulates the bare statistic under the matching zero-
    heterogeneity DGP and takes its empirical 2.5/97.5 percentiles
    (two-sided statistics) or 95th percentile (one-sided); phase two
    evaluates alternative draws against those cutoffs.
    """
    if replications < 100:
        raise ValueError("need at least 100 replications")
    threads = resolve_threads(threads)
    out = []
    for cell_idx, (dgp, tc) in enumerate(cells):
        start = time.perf_counter()
        if dgp.family == "covariate_linear":
            null_dgp = replace(dgp, variation=VariationFlags())
        else:
            null_dgp = replace(dgp, sigma_tau=0.0)

        def null_stat(rep, _dgp=null_dgp, _tc=tc, _ci=cell_idx):
            seed, _ = _replicate_seeds(master_seed, (_ci, rep, 0))
            return plain_statistic(generate(replace(_dgp, seed=seed)), _tc)

        def alt_stat(rep, _dgp=dgp, _tc=tc, _ci=cell_idx):
            seed, _ = _replicate_seeds(master_seed, (_ci, rep, 1))
            return plain_statistic(generate(replace(_dgp, seed=seed)), _tc)

        null_draws = np.sort(parallel_map(null_stat, range(replications), threads))
        alt_draws = np.asarray(parallel_map(alt_stat, range(replications), threads))
        two_sided = tc.statistic == "l_theta"
        if two_sided:
            lo = null_draws[max(1, math.ceil(0.025 * replications)) - 1]
            hi = null_draws[max(1, math.ceil(0.975 * replications)) - 1]
            rejections = int(np.count_nonzero((alt_draws < lo) | (alt_draws > hi)))
        else:
            hi = null_draws[max(1, math.ceil(0.95 * replications)) - 1]
            rejections = int(np.count_nonzero(alt_draws > hi))
        out.append(MonteCarloCell(
            test_id=f"{tc.statistic}/size-adjusted", family=dgp.family, n=dgp.n,
            sigma_tau=dgp.sigma_tau, variation=_variation_label(dgp),
            replications=replications, rejections=rejections, errors=0,
            elapsed_seconds=time.perf_counter() - start,
        ))
    return MonteCarloResult(cells=tuple(out), master_seed=master_seed,
                            threads=threads,
                            metadata={"replications": replications,
                                      "mode": "size_adjusted"})
