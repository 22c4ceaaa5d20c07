"""Residualization strategies: interaction least squares and kernel smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sample import DegenerateSampleError, ExperimentSample, ResidualizedSample


def interaction_design(treatments: np.ndarray,
                       covariates: np.ndarray | None) -> np.ndarray:
    """Design matrix with columns (1, D, X, D*X)."""
    d = treatments.astype(np.float64)
    cols = [np.ones_like(d), d]
    if covariates is not None:
        cols.append(covariates)
        cols.append(covariates * d[:, None])
    return np.column_stack(cols)


@dataclass(frozen=True)
class LinearFit:
    """Least-squares fit of the treatment-interaction model.

    ``coefficients`` follow the design order (1, D, X, D*X). Rank-deficient
    designs yield the minimum-norm solution, so collinear covariates never
    abort a fit.
    """

    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rank: int


def linear_interaction_fit(sample: ExperimentSample) -> LinearFit:
    """Fit outcomes on (1, D, X, D*X) by minimum-norm least squares."""
    design = interaction_design(sample.treatments, sample.covariates)
    coef, _, rank, _ = np.linalg.lstsq(design, sample.outcomes, rcond=None)
    fitted = design @ coef
    return LinearFit(coefficients=coef, fitted=fitted,
                     residuals=sample.outcomes - fitted, rank=int(rank))


def residualize_linear(sample: ExperimentSample) -> ResidualizedSample:
    """Residuals from the interaction model, paired with treatment labels.

    Without covariates the design collapses to (1, D) and the residuals are
    the within-group demeaned outcomes.
    """
    fit = linear_interaction_fit(sample)
    return ResidualizedSample(residuals=fit.residuals,
                              treatments=sample.treatments,
                              method="linear_interaction")


def residualize_group_mean(sample: ExperimentSample) -> ResidualizedSample:
    """Within-group demeaned outcomes."""
    y = sample.outcomes
    d = sample.treatments
    resid = y.copy()
    resid[d == 1] -= y[d == 1].mean()
    resid[d == 0] -= y[d == 0].mean()
    return ResidualizedSample(residuals=resid, treatments=d, method="group_mean")


def bandwidth_rule(x_rows: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 1.06 * sigma * n**(-1/(4+q)).

    ``sigma`` is the geometric mean of the per-dimension standard
    deviations; zero-variance dimensions are skipped, and if every
    dimension is degenerate the bandwidth falls back to 1.
    """
    x = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("bandwidth rule needs at least 2 rows")
    n, q = x.shape
    stds = x.std(axis=0)
    positive = stds[stds > 0]
    if positive.size == 0:
        return 1.0
    sigma = float(np.exp(np.log(positive).mean()))
    return 1.06 * sigma * n ** (-1.0 / (4.0 + q))


@dataclass(frozen=True)
class NWConfig:
    """Kernel-smoother settings.

    ``bandwidth`` is either a positive number or the string
    ``"rule_of_thumb"``; ``scaling`` optionally stretches the bandwidth per
    covariate dimension.
    """

    kernel: str = "gaussian"
    bandwidth: float | str = "rule_of_thumb"
    scaling: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "rule_of_thumb":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.scaling is not None:
            scaling = tuple(float(s) for s in self.scaling)
            if any(s <= 0 for s in scaling):
                raise ValueError("scaling factors must be positive")
            object.__setattr__(self, "scaling", scaling)


@dataclass(frozen=True)
class NWFit:
    """Fitted kernel regression; immutable and safe to evaluate concurrently."""

    x_train: np.ndarray
    y_train: np.ndarray
    bandwidths: np.ndarray
    kernel: str
    fallback_value: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "fallback_value", float(self.y_train.mean()))

    def evaluate(self, x_query: np.ndarray) -> tuple[np.ndarray, int]:
        """Predict at query rows; returns (predictions, fallback count).

        Query points where every kernel weight vanishes are predicted with
        the training-sample mean and counted as fallbacks.
        """
        xq = np.atleast_2d(np.asarray(x_query, dtype=np.float64))
        if xq.shape[1] != self.x_train.shape[1]:
            raise ValueError("query dimension does not match training data")
        u = (xq[:, None, :] - self.x_train[None, :, :]) / self.bandwidths
        if self.kernel == "gaussian":
            weights = np.exp(-0.5 * (u * u).sum(axis=2))
        else:
            weights = np.prod(np.maximum(1.0 - u * u, 0.0), axis=2)
        denom = weights.sum(axis=1)
        bad = denom <= 0.0
        denom[bad] = 1.0
        pred = (weights @ self.y_train) / denom
        pred[bad] = self.fallback_value
        return pred, int(bad.sum())

    def __call__(self, x_query: np.ndarray) -> np.ndarray:
        return self.evaluate(x_query)[0]


def nw_fit(x_rows: np.ndarray, y: np.ndarray, config: NWConfig = NWConfig()) -> NWFit:
    """Fit a kernel-weighted local average of y on x."""
    x = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.size or y.size == 0:
        raise ValueError("x_rows and y must have the same positive length")
    if config.bandwidth == "rule_of_thumb":
        h = bandwidth_rule(x) if x.shape[0] >= 2 else 1.0
    else:
        h = float(config.bandwidth)
    scaling = np.ones(x.shape[1]) if config.scaling is None \
        else np.asarray(config.scaling, dtype=np.float64)
    if scaling.size != x.shape[1]:
        raise ValueError("scaling length must match the covariate dimension")
    return NWFit(x_train=x, y_train=y, bandwidths=h * scaling, kernel=config.kernel)


def residualize_nw(sample: ExperimentSample,
                   config: NWConfig = NWConfig()) -> ResidualizedSample:
    """Residuals from separate kernel regressions in each treatment group."""
    if sample.covariates is None:
        raise ValueError("kernel residualization requires covariates")
    if sample.n1 < 5 or sample.n0 < 5:
        raise DegenerateSampleError(
            f"kernel residualization needs >= 5 units per group, "
            f"got n1={sample.n1}, n0={sample.n0}"
        )
    resid = np.empty(sample.n)
    fallbacks = 0
    for group in (0, 1):
        mask = sample.treatments == group
        fit = nw_fit(sample.covariates[mask], sample.outcomes[mask], config)
        pred, bad = fit.evaluate(sample.covariates[mask])
        resid[mask] = sample.outcomes[mask] - pred
        fallbacks += bad
    return ResidualizedSample(residuals=resid, treatments=sample.treatments,
                              method="nadaraya_watson",
                              diagnostics={"fallbacks": fallbacks})
