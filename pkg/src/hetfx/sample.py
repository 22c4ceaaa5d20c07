"""Experiment data containers and shared error types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VALID_RESIDUAL_METHODS = ("linear_interaction", "nadaraya_watson", "group_mean")


class HetfxError(Exception):
    """Base class for errors raised by this package."""


class DegenerateSampleError(HetfxError):
    """Raised when a sample cannot support the requested computation."""


class DegenerateVarianceError(HetfxError):
    """Raised when a variance estimate is non-positive and no test can be formed."""


class InputError(HetfxError):
    """Raised for malformed user-supplied data (files, column bindings)."""


def validate_theta(theta: float) -> float:
    """Check that the stable-weight exponent lies in (0, 2]."""
    theta = float(theta)
    if not 0.0 < theta <= 2.0:
        raise ValueError(f"theta must lie in (0, 2], got {theta}")
    return theta


@dataclass(frozen=True)
class ExperimentSample:
    """Outcomes and binary treatment assignments, with optional covariates.

    Parameters
    ----------
    outcomes : array_like, shape (n,)
        Observed outcome per unit; all values must be finite.
    treatments : array_like, shape (n,)
        Assignment indicator per unit, 0 (control) or 1 (treated). Both
        groups must be non-empty and n must be at least 2.
    covariates : array_like, shape (n, q), optional
        Pre-treatment covariate matrix.
    """

    outcomes: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=np.float64)
        d = np.asarray(self.treatments)
        if y.ndim != 1:
            raise ValueError("outcomes must be one-dimensional")
        if d.shape != y.shape:
            raise ValueError(
                f"treatments shape {d.shape} does not match outcomes shape {y.shape}"
            )
        if y.size < 2:
            raise ValueError("need at least 2 units")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcomes contain NaN or infinite values")
        if not np.isin(d, (0, 1)).all():
            raise ValueError("treatments must be 0 or 1")
        d = d.astype(np.int64)
        n1 = int(d.sum())
        if n1 == 0 or n1 == y.size:
            raise ValueError("both treatment groups must be non-empty")
        x = self.covariates
        if x is not None:
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != y.size:
                raise ValueError(
                    f"covariates have {x.shape[0]} rows, expected {y.size}"
                )
            if not np.all(np.isfinite(x)):
                raise ValueError("covariates contain NaN or infinite values")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatments", d)
        object.__setattr__(self, "covariates", x)

    @property
    def n(self) -> int:
        return self.outcomes.size

    @property
    def n1(self) -> int:
        return int(self.treatments.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def treated_outcomes(self) -> np.ndarray:
        return self.outcomes[self.treatments == 1]

    @property
    def control_outcomes(self) -> np.ndarray:
        return self.outcomes[self.treatments == 0]


@dataclass(frozen=True)
class ResidualizedSample:
    """Per-unit residuals with their treatment labels.

    ``method`` records which residualization produced the values:
    ``linear_interaction``, ``nadaraya_watson`` or ``group_mean``.
    """

    residuals: np.ndarray
    treatments: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=np.float64)
        d = np.asarray(self.treatments).astype(np.int64)
        if r.shape != d.shape or r.ndim != 1:
            raise ValueError("residuals and treatments must be equal-length vectors")
        n1 = int(d.sum())
        if n1 == 0 or n1 == r.size:
            raise ValueError("both treatment groups must be non-empty")
        if self.method not in VALID_RESIDUAL_METHODS:
            raise ValueError(f"unknown residualization method {self.method!r}")
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "treatments", d)

    @property
    def treated(self) -> np.ndarray:
        return self.residuals[self.treatments == 1]

    @property
    def control(self) -> np.ndarray:
        return self.residuals[self.treatments == 0]
