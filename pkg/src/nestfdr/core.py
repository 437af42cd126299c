"""Shared domain types and the outcome bookkeeping used to score procedures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InputError(ValueError):
    """Raised for malformed or out-of-range inputs."""


class NumericalError(ArithmeticError):
    """Raised when a computation is numerically impossible (e.g. singular matrix)."""


def as_zmatrix(values) -> np.ndarray:
    """Validate and return an ``(n, d)`` float array of test statistics.

    A 1-D input is treated as ``d = 1``.
    """
    Z = np.asarray(values, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2:
        raise InputError(f"z-values must be a 2-D matrix, got {Z.ndim} dimensions")
    if Z.shape[0] < 1 or Z.shape[1] < 1:
        raise InputError(f"z-value matrix must be non-empty, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InputError("z-value matrix contains NaN or infinite entries")
    return Z


def as_labels(theta, n: int | None = None) -> np.ndarray:
    theta = np.asarray(theta)
    if theta.ndim != 1:
        raise InputError("labels must be a vector")
    if not np.all((theta == 0) | (theta == 1)):
        raise InputError("labels must be 0 (null) or 1 (non-null)")
    if n is not None and theta.shape[0] != n:
        raise InputError(f"labels have length {theta.shape[0]}, expected {n}")
    return theta.astype(bool)


@dataclass(frozen=True)
class RejectionOutcome:
    """Per-hypothesis decisions of one procedure run.

    ``estimated_fdr_trace`` holds ``(step, estimate)`` pairs; it is empty for
    procedures without a stepwise estimate.
    """

    rejected: np.ndarray
    method_name: str
    estimated_fdr_trace: tuple[tuple[int, float], ...] = ()
    scores: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        rejected = np.asarray(self.rejected, dtype=bool)
        if rejected.ndim != 1:
            raise InputError("rejected must be a boolean vector")
        rejected.setflags(write=False)
        object.__setattr__(self, "rejected", rejected)
        for _, value in self.estimated_fdr_trace:
            if value < 0:
                raise InputError("estimated FDR trace values must be non-negative")

    @property
    def n(self) -> int:
        return self.rejected.shape[0]

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts of the 2x2 truth/decision table.

    U: true nulls accepted, V: true nulls rejected,
    T: non-nulls accepted, S: non-nulls rejected.
    """

    U: int
    V: int
    T: int
    S: int

    def __post_init__(self):
        if min(self.U, self.V, self.T, self.S) < 0:
            raise InputError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.U + self.V + self.T + self.S

    @property
    def R(self) -> int:
        return self.V + self.S

    @property
    def n0(self) -> int:
        return self.U + self.V

    @property
    def n1(self) -> int:
        return self.T + self.S


def confusion_counts(labels, outcome: RejectionOutcome | np.ndarray) -> ConfusionCounts:
    rejected = outcome.rejected if isinstance(outcome, RejectionOutcome) else np.asarray(outcome, bool)
    theta = as_labels(labels)
    if theta.shape != rejected.shape:
        raise InputError(
            f"labels have length {theta.shape[0]} but outcome has length {rejected.shape[0]}"
        )
    V = int(np.sum(~theta & rejected))
    S = int(np.sum(theta & rejected))
    U = int(np.sum(~theta)) - V
    T = int(np.sum(theta)) - S
    return ConfusionCounts(U=U, V=V, T=T, S=S)


def fdp(counts: ConfusionCounts) -> float:
    """False discovery proportion V / max(R, 1)."""
    return counts.V / max(counts.R, 1)


def fnp(counts: ConfusionCounts, n: int | None = None) -> float:
    """False non-discovery proportion T / max(n - R, 1)."""
    if n is None:
        n = counts.n
    elif n != counts.n:
        raise InputError(f"n={n} does not match the counts total {counts.n}")
    return counts.T / max(n - counts.R, 1)
