"""Gaussian product-kernel density estimation.

The estimate at ``y`` is

    f(y) = 1 / (n_ref * prod_j h_j) * sum_i prod_j phi((y_j - x_ij) / h_j)

with ``phi`` the standard normal density. ``n_ref`` is a free normalizer: with
``n_ref = m`` (the support size) the density integrates to one; the nested
rejection procedure passes the total number of hypotheses instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import InputError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _log_kernel_sums(U, X):
    # log sum_a exp(-0.5 * |U_i - X_a|^2) per row, rescaled when it underflows
    n, d = U.shape
    m = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        smin = np.inf
        for a in range(m):
            s = 0.0
            for j in range(d):
                diff = U[i, j] - X[a, j]
                s += diff * diff
            if s < smin:
                smin = s
            acc += math.exp(-0.5 * s)
        if acc > 1e-280:
            out[i] = math.log(acc)
        else:
            acc = 0.0
            for a in range(m):
                s = 0.0
                for j in range(d):
                    diff = U[i, j] - X[a, j]
                    s += diff * diff
                acc += math.exp(-0.5 * (s - smin))
            out[i] = math.log(acc) - 0.5 * smin
    return out


def bandwidth_rule(points) -> np.ndarray:
    """Per-dimension normal-reference bandwidths.

    ``h_j = sd_j * (4 / ((d + 2) * m)) ** (1 / (d + 4))`` with ``sd_j`` the
    sample standard deviation (ddof=1) of column ``j``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m, d = X.shape
    if m < 2:
        raise InputError(f"bandwidth rule needs at least 2 points, got {m}")
    sd = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise InputError(f"column {int(bad[0])} has zero variance; bandwidth undefined")
    return sd * (4.0 / ((d + 2) * m)) ** (1.0 / (d + 4))


def isotropic_bandwidth(m: int, d: int) -> np.ndarray:
    """Fallback bandwidth ``m ** (-1 / (d + 4))`` in every dimension."""
    return np.full(d, float(max(m, 1)) ** (-1.0 / (d + 4)))


@dataclass(frozen=True, eq=False)
class ProductKernelDensity:
    support: np.ndarray
    bandwidths: np.ndarray
    normalizer: float

    def __post_init__(self):
        support = np.ascontiguousarray(self.support, dtype=float)
        if support.ndim != 2 or support.shape[0] < 1:
            raise InputError("support must be a non-empty (m, d) matrix")
        h = np.asarray(self.bandwidths, dtype=float).reshape(-1)
        if h.shape[0] != support.shape[1]:
            raise InputError(f"expected {support.shape[1]} bandwidths, got {h.shape[0]}")
        if not np.all(h > 0) or not np.all(np.isfinite(h)):
            raise InputError("bandwidths must be finite and strictly positive")
        if not self.normalizer > 0:
            raise InputError("normalizer must be positive")
        support.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "bandwidths", h)
        object.__setattr__(self, "normalizer", float(self.normalizer))
        scaled = np.ascontiguousarray(support / h)
        scaled.setflags(write=False)
        object.__setattr__(self, "_scaled_support", scaled)
        object.__setattr__(
            self,
            "_log_const",
            -math.log(self.normalizer) - float(np.log(h).sum()) - support.shape[1] * _HALF_LOG_2PI,
        )

    @property
    def d(self) -> int:
        return self.support.shape[1]

    @property
    def m(self) -> int:
        return self.support.shape[0]

    def _check(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[None, :]
        if Y.ndim != 2 or Y.shape[1] != self.d:
            raise InputError(f"expected points of dimension {self.d}, got shape {Y.shape}")
        return Y

    def log_batch_eval(self, Y) -> np.ndarray:
        Y = self._check(Y)
        if Y.shape[0] == 0:
            return np.empty(0)
        U = np.ascontiguousarray(Y / self.bandwidths)
        return _log_kernel_sums(U, self._scaled_support) + self._log_const

    def batch_eval(self, Y) -> np.ndarray:
        return np.exp(self.log_batch_eval(Y))

    def eval(self, z) -> float:
        z = np.asarray(z, dtype=float).reshape(1, -1)
        return float(self.batch_eval(z)[0])

    def log_eval(self, z) -> float:
        z = np.asarray(z, dtype=float).reshape(1, -1)
        return float(self.log_batch_eval(z)[0])


def fit(points, bandwidths=None, n_ref: float | None = None) -> ProductKernelDensity:
    """Fit a product-kernel density on ``points``.

    ``bandwidths`` defaults to :func:`bandwidth_rule`, ``n_ref`` to the number
    of points.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise InputError("cannot fit a density on an empty point set")
    if bandwidths is None:
        bandwidths = bandwidth_rule(X)
    if n_ref is None:
        n_ref = X.shape[0]
    return ProductKernelDensity(X, bandwidths, n_ref)
