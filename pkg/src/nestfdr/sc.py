"""Local-FDR baseline: full-data KDE Lfdr thresholded by its running mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kde
from .core import InputError, RejectionOutcome, as_zmatrix
from .null import log_f0


@dataclass(frozen=True)
class LfdrVector:
    values: np.ndarray
    pi0_used: float


def lfdr_estimate(Z, pi0: float) -> LfdrVector:
    """``min(1, pi0 f0(z_i) / f_hat(z_i))`` with ``f_hat`` fit on all rows."""
    if not 0.0 <= pi0 <= 1.0:
        raise InputError(f"pi0 must lie in [0, 1], got {pi0}")
    Z = as_zmatrix(Z)
    if pi0 == 0.0:
        return LfdrVector(np.zeros(Z.shape[0]), 0.0)
    dens = kde.fit(Z, kde.bandwidth_rule(Z), n_ref=Z.shape[0])
    log_l = np.log(pi0) + log_f0(Z) - dens.log_batch_eval(Z)
    return LfdrVector(np.exp(np.minimum(log_l, 0.0)), float(pi0))


def running_mean_cutoff(lfdr, q: float) -> tuple[np.ndarray, int]:
    """Sort order and the largest ``k`` whose running mean of sorted Lfdr is ``<= q``."""
    lfdr = np.asarray(lfdr, dtype=float)
    order = np.argsort(lfdr, kind="stable")
    means = np.cumsum(lfdr[order]) / np.arange(1, lfdr.shape[0] + 1)
    ok = np.flatnonzero(means <= q)
    return order, int(ok[-1] + 1) if ok.size else 0


def sc_procedure(Z, q: float, pi0: float) -> RejectionOutcome:
    if not 0.0 < q < 1.0:
        raise InputError(f"FDR level must lie in (0, 1), got {q}")
    lf = lfdr_estimate(Z, pi0)
    order, k = running_mean_cutoff(lf.values, q)
    rejected = np.zeros(lf.values.shape[0], dtype=bool)
    rejected[order[:k]] = True
    return RejectionOutcome(rejected, "sc", scores=lf.values, diagnostics={"k": k, "pi0": lf.pi0_used})
