"""Univariate building blocks: p-values, step-down BH, Fisher combination, pi0."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import stats

from .core import InputError, RejectionOutcome

P_FLOOR = 1e-300


def z_to_p_two_sided(z):
    """Two-sided normal p-value ``2 * (1 - Phi(|z|))``; works elementwise."""
    p = 2.0 * stats.norm.sf(np.abs(np.asarray(z, dtype=float)))
    return float(p) if np.ndim(p) == 0 else p


def _as_pvalues(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if not np.all((p >= 0) & (p <= 1)):
        raise InputError("p-values must lie in [0, 1]")
    return p


def bh_step_down(p, q: float, method_name: str = "bh_step_down") -> RejectionOutcome:
    """Step-down Benjamini-Hochberg.

    Rejects the ``k`` smallest p-values where ``k`` is the length of the
    longest prefix of sorted p-values with ``p_(j) <= j q / n`` for every
    ``j`` in the prefix. Ties are ordered by original index.
    """
    if not 0.0 < q < 1.0:
        raise InputError(f"FDR level must lie in (0, 1), got {q}")
    p = _as_pvalues(p)
    n = p.shape[0]
    order = np.argsort(p, kind="stable")
    ok = p[order] <= q * np.arange(1, n + 1) / n
    k = n if ok.all() else int(np.argmin(ok))
    rejected = np.zeros(n, dtype=bool)
    rejected[order[:k]] = True
    return RejectionOutcome(rejected, method_name, scores=p, diagnostics={"k": k})


def fisher_combine(P) -> np.ndarray:
    """Combine each row of p-values with Fisher's method.

    ``T_i = -2 sum_j log p_ij`` is referred to a chi-squared law with ``2d``
    degrees of freedom. Exact zeros are clamped to ``1e-300`` with a warning.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if np.any(~np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
        raise InputError("p-values must lie in [0, 1]")
    zeros = int(np.count_nonzero(P == 0))
    if zeros:
        warnings.warn(f"clamped {zeros} zero p-values to {P_FLOOR:g}", RuntimeWarning, stacklevel=2)
        P = np.maximum(P, P_FLOOR)
    T = -2.0 * np.log(P).sum(axis=1)
    return stats.chi2.sf(T, 2 * P.shape[1])


def pi0_lowest_slope(p) -> float:
    """Lowest-slope estimate of the null proportion.

    With sorted p-values, slopes ``S_i = (1 - p_(i)) / (n + 1 - i)`` are scanned
    from ``i = 2`` until the first ``S_i < S_(i-1)``; the estimate is
    ``min(n, floor(1 / S_i) + 1) / n``. If the slopes never decrease the last
    one is used.
    """
    p = np.sort(_as_pvalues(p))
    n = p.shape[0]
    if n < 2:
        raise InputError("lowest-slope estimate needs at least 2 p-values")
    slopes = (1.0 - p) / (n + 1 - np.arange(1, n + 1))
    drops = np.flatnonzero(slopes[1:] < slopes[:-1])
    s = slopes[drops[0] + 1] if drops.size else slopes[-1]
    if s <= 0:
        return 1.0
    m0 = min(n, math.floor(1.0 / s) + 1)
    return m0 / n
