"""Oracle rule: true-Lfdr sublevel sets with the adaptive BH stopping index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .core import InputError, RejectionOutcome, as_zmatrix
from .null import NullSamplePool, log_f0, whiten_known

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureSpec:
    """Two-group model: ``pi0 N(0, I) + (1 - pi0) N(mu1, sigma1)``.

    A non-identity null covariance can be attached as ``null_cov``; the model
    is then ``pi0 N(0, C) + (1 - pi0) N(mu1, sigma1)`` and :meth:`whitened`
    maps it back to the identity-null form.
    """

    pi0: float
    mu1: np.ndarray
    sigma1: np.ndarray
    null_cov: np.ndarray | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu1, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma1, dtype=float).reshape(mu.shape[0], mu.shape[0])
        if not 0.0 < self.pi0 < 1.0:
            raise InputError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if not np.allclose(sigma, sigma.T):
            raise InputError("sigma1 must be symmetric")
        try:
            chol = linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError:
            raise InputError("sigma1 must be positive definite") from None
        object.__setattr__(self, "mu1", mu)
        object.__setattr__(self, "sigma1", sigma)
        object.__setattr__(self, "_chol", chol)
        if self.null_cov is not None:
            C = np.asarray(self.null_cov, dtype=float).reshape(sigma.shape)
            try:
                linalg.cholesky(C, lower=True)
            except linalg.LinAlgError:
                raise InputError("null_cov must be positive definite") from None
            object.__setattr__(self, "null_cov", C)

    def whitened(self) -> "MixtureSpec":
        """The same model after ``z -> L^{-1} z`` with ``null_cov = L L^T``."""
        if self.null_cov is None:
            return self
        L = linalg.cholesky(self.null_cov, lower=True)
        mu = linalg.solve_triangular(L, self.mu1, lower=True)
        A = linalg.solve_triangular(L, self.sigma1, lower=True)
        S = linalg.solve_triangular(L, A.T, lower=True)
        return MixtureSpec(self.pi0, mu, 0.5 * (S + S.T))

    @property
    def d(self) -> int:
        return self.mu1.shape[0]

    def log_f1(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        w = linalg.solve_triangular(self._chol, (Z - self.mu1).T, lower=True)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        return -0.5 * (self.d * _LOG_2PI + logdet) - 0.5 * np.einsum("ij,ij->j", w, w)


def true_lfdr(spec: MixtureSpec, z) -> np.ndarray | float:
    """Posterior null probability under ``spec``, computed in log space."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != spec.d:
        raise InputError(f"expected dimension {spec.d}, got {Z.shape[1]}")
    if spec.null_cov is not None:
        Z = whiten_known(Z, spec.null_cov)
        spec = spec.whitened()
    log_num = np.log(spec.pi0) + log_f0(Z)
    log_alt = np.log1p(-spec.pi0) + spec.log_f1(Z)
    out = expit(log_num - log_alt)
    return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class LfdrSublevelSet:
    """Stage predicate ``true_lfdr(z) <= level`` in whitened coordinates."""

    spec: MixtureSpec
    level: float

    def __post_init__(self):
        object.__setattr__(self, "spec", self.spec.whitened())

    @property
    def d(self) -> int:
        return self.spec.d

    def contains_many(self, Y, norms=None) -> np.ndarray:
        return true_lfdr(self.spec, np.asarray(Y, dtype=float)) <= self.level


def oracle_procedure(Z, q: float, spec: MixtureSpec, pool: NullSamplePool) -> RejectionOutcome:
    """Reject the largest true-Lfdr prefix with ``pi0 F0(Omega_k) / (k / n) <= q``.

    ``Omega_k`` is the closed sublevel set of the true Lfdr through the k-th
    smallest data value, and ``F0`` is its pool frequency.
    """
    if not 0.0 < q < 1.0:
        raise InputError(f"FDR level must lie in (0, 1), got {q}")
    Z = as_zmatrix(Z)
    n, d = Z.shape
    if d != spec.d or pool.d != d:
        raise InputError(f"dimension mismatch: data {d}, spec {spec.d}, pool {pool.d}")
    if spec.null_cov is not None:
        Z = whiten_known(Z, spec.null_cov)
        spec = spec.whitened()
    lf = true_lfdr(spec, Z)
    order = np.argsort(lf, kind="stable")
    pool_lf = np.sort(true_lfdr(spec, pool.samples))
    F0 = np.searchsorted(pool_lf, lf[order], side="right") / pool.M
    k = np.arange(1, n + 1)
    stat = spec.pi0 * F0 / (k / n)
    ok = np.flatnonzero(stat <= q)
    kstar = int(ok[-1] + 1) if ok.size else 0
    rejected = np.zeros(n, dtype=bool)
    rejected[order[:kstar]] = True
    trace = tuple((int(i), float(s)) for i, s in zip(k, stat))
    return RejectionOutcome(
        rejected, "oracle", estimated_fdr_trace=trace, scores=lf, diagnostics={"k": kstar}
    )
