"""Standard-normal null model: density, tail geometry, Monte-Carlo null mass, whitening."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .core import InputError, NumericalError, as_zmatrix

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_POOL_SIZE = 100_000


def log_f0(z) -> np.ndarray | float:
    """Log density of the standard d-variate normal.

    Accepts a single d-vector (returns a float) or an (n, d) matrix (returns
    a length-n vector).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return -0.5 * z.shape[0] * _LOG_2PI - 0.5 * float(z @ z)
    return -0.5 * z.shape[1] * _LOG_2PI - 0.5 * np.einsum("ij,ij->i", z, z)


def ball_radius_for_tail(d: int, q_prime: float) -> float:
    """Radius ``lam`` with ``P(||Z|| > lam) = q_prime`` under the d-variate null."""
    if not 0.0 < q_prime < 1.0:
        raise InputError(f"tail mass must lie in (0, 1), got {q_prime}")
    if d < 1:
        raise InputError(f"dimension must be >= 1, got {d}")
    return math.sqrt(stats.chi2.isf(q_prime, d))


@dataclass(eq=False)
class NullSamplePool:
    """An i.i.d. standard-normal sample used to estimate null mass of regions.

    ``membership`` caches which samples lie inside the most recently estimated
    region. When the next region only appends stages to that one, only the
    current non-members are tested against the new stages.
    """

    samples: np.ndarray
    seed: object = None
    membership: np.ndarray = field(init=False)
    _stages: tuple = field(init=False, default=())

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InputError("pool samples must be a non-empty (M, d) matrix")
        samples.setflags(write=False)
        self.samples = samples
        self.norms = np.sqrt(np.einsum("ij,ij->i", samples, samples))
        self.norms.setflags(write=False)
        self.reset()

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def reset(self) -> None:
        self.membership = np.zeros(self.M, dtype=bool)
        self._stages = ()


def build_null_pool(d: int, M: int = DEFAULT_POOL_SIZE, seed=None) -> NullSamplePool:
    if M < 1:
        raise InputError(f"pool size must be >= 1, got {M}")
    rng = np.random.default_rng(seed)
    return NullSamplePool(rng.standard_normal((M, d)), seed=seed)


def estimate_F0(pool: NullSamplePool, region) -> float:
    """Fraction of pool samples inside ``region`` (Monte-Carlo null mass)."""
    if region.d != pool.d:
        raise InputError(f"region dimension {region.d} does not match pool dimension {pool.d}")
    stages = tuple(region.stages)
    k = len(pool._stages)
    if len(stages) >= k and all(a is b for a, b in zip(stages, pool._stages)):
        new = stages[k:]
    else:
        pool.reset()
        new = stages
    for stage in new:
        todo = np.flatnonzero(~pool.membership)
        if todo.size == 0:
            break
        hit = stage.contains_many(pool.samples[todo], norms=pool.norms[todo])
        pool.membership[todo[hit]] = True
    pool._stages = stages
    return float(np.count_nonzero(pool.membership)) / pool.M


def recount_F0(pool: NullSamplePool, region) -> float:
    """Uncached recount of :func:`estimate_F0`; leaves the cache untouched."""
    if region.d != pool.d:
        raise InputError(f"region dimension {region.d} does not match pool dimension {pool.d}")
    return float(np.count_nonzero(region.contains_many(pool.samples))) / pool.M


def whiten(Z) -> np.ndarray:
    """Decorrelate the columns of ``Z`` while keeping each column's scale.

    With ``R = L L^T`` the Cholesky factor of the sample correlation and ``D``
    the column standard deviations, returns ``Z D^-1 L^-T D``. The result has
    identity sample correlation and the input's column standard deviations.
    """
    Z = as_zmatrix(Z)
    n, d = Z.shape
    if n <= d:
        raise InputError(f"whitening needs more rows than columns, got n={n}, d={d}")
    sd = Z.std(axis=0, ddof=1)
    if not np.all(sd > 0):
        raise NumericalError("a column has zero variance; sample correlation is singular")
    R = np.corrcoef(Z, rowvar=False).reshape(d, d)
    try:
        L = linalg.cholesky(R, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"sample correlation matrix is singular: {exc}") from None
    if np.min(np.abs(np.diag(L))) < 1e-10:
        raise NumericalError("sample correlation matrix is numerically singular")
    # X L^-T == solve(L, X^T)^T
    W = linalg.solve_triangular(L, (Z / sd).T, lower=True).T
    return W * sd


def whiten_known(Z, cov) -> np.ndarray:
    """Map z-values with null covariance ``cov`` to a standard-normal null."""
    Z = as_zmatrix(Z)
    L = linalg.cholesky(np.asarray(cov, dtype=float), lower=True)
    return linalg.solve_triangular(L, Z.T, lower=True).T


def estimate_F0_level_batch(pool: NullSamplePool, region, stages) -> list[float]:
    """Null mass of ``region`` extended by each prefix of ``stages``.

    All stages must be likelihood level sets of one density, so pool log
    ratios are computed once and compared against each threshold. Results and
    the updated cache are identical to calling :func:`estimate_F0` on each
    extended region in turn.
    """
    stages = tuple(stages)
    if not stages:
        return []
    density = stages[0].density
    if any(s.density is not density for s in stages):
        raise InputError("batched stages must share one density")
    estimate_F0(pool, region)
    todo = np.flatnonzero(~pool.membership)
    lowest = min(stages, key=lambda s: s.log_threshold)
    cand = todo[lowest._candidates(pool.norms[todo])]
    lr = lowest.log_ratio(pool.samples[cand], pool.norms[cand]) if cand.size else np.empty(0)
    out = []
    prefix = tuple(region.stages)
    for stage in stages:
        hit = cand[lr >= stage.log_threshold]
        pool.membership[hit] = True
        prefix = prefix + (stage,)
        out.append(float(np.count_nonzero(pool.membership)) / pool.M)
    pool._stages = prefix
    return out
