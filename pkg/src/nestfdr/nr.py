"""Nested rejection region (NR) procedure.

Starting from the complement of a central ball, the rejection region grows by
likelihood-ratio level sets of a kernel density fitted only to the z-values
already rejected. After every enlargement the FDR is estimated as
``F0(region) / (|R| / n)`` with ``F0`` the Monte-Carlo null mass; the run stops
at the first enlargement whose estimate exceeds ``q`` and returns the last
region that did not.

With ``warmup=True`` (default) the early steps, while the density is fitted to
very few points and the estimate is still falling, do not stop the run: the
step-down rule applies from the first step whose estimate is ``<= q``. Since
``F0`` never decreases and ``|R| <= n``, a run whose ``F0`` exceeds ``q`` can
never recover and is ended there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kde
from .core import InputError, RejectionOutcome, as_zmatrix
from .null import (
    DEFAULT_POOL_SIZE,
    NullSamplePool,
    ball_radius_for_tail,
    build_null_pool,
    estimate_F0,
    estimate_F0_level_batch,
)
from .regions import BallComplement, LikelihoodLevelSet, Region, extend


@dataclass(frozen=True)
class NRConfig:
    """Settings for :func:`nr_procedure`.

    The initial region is the complement of the ball whose null tail mass is
    ``q_prime`` (default ``q / 100``).
    """

    q: float = 0.1
    q_prime: float | None = None
    pool_size: int = DEFAULT_POOL_SIZE
    refit_batch: int = 1
    seed: int | None = 0
    max_steps: int | None = None
    warmup: bool = True

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise InputError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.tail < self.q:
            raise InputError(f"q_prime must satisfy 0 < q_prime < q, got {self.tail}")
        if self.pool_size < 1:
            raise InputError("pool_size must be >= 1")
        if self.refit_batch < 1:
            raise InputError("refit_batch must be >= 1")
        if self.max_steps is not None and self.max_steps < 0:
            raise InputError("max_steps must be >= 0")

    @property
    def tail(self) -> float:
        return self.q / 100 if self.q_prime is None else self.q_prime


@dataclass(frozen=True)
class NRStep:
    step: int
    admitted: tuple[int, ...]
    threshold: float
    estimated_fdr: float
    F0: float
    n_rejected: int


@dataclass
class NRTrace:
    steps: list[NRStep] = field(default_factory=list)
    region: Region | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def accepted_steps(self) -> list[NRStep]:
        """Steps whose region was kept (the last one is the returned region)."""
        k = self.diagnostics.get("final_step", -1)
        return self.steps[: k + 1]


def _refit(Z, rejected, n, warn_state):
    support = Z[rejected]
    m, d = support.shape
    try:
        h = kde.bandwidth_rule(support)
    except InputError:
        h = kde.isotropic_bandwidth(m, d)
        warn_state["fallback_bandwidths"] = warn_state.get("fallback_bandwidths", 0) + 1
        warnings.warn(
            f"rejected set of size {m} has no spread; using isotropic bandwidth",
            RuntimeWarning,
            stacklevel=3,
        )
    return kde.ProductKernelDensity(support, h, n)


def nr_procedure(
    Z,
    config: NRConfig | None = None,
    pool: NullSamplePool | None = None,
    on_refit=None,
) -> tuple[RejectionOutcome, NRTrace]:
    """Run the NR procedure on an ``(n, d)`` matrix of z-values.

    ``on_refit(support_indices, rejected_mask)`` is called before each density
    fit with the rows used as kernel support and a copy of the current
    rejection mask.
    """
    config = config or NRConfig()
    Z = as_zmatrix(Z)
    n, d = Z.shape
    if pool is None:
        pool = build_null_pool(d, config.pool_size, config.seed)
    elif pool.d != d:
        raise InputError(f"pool dimension {pool.d} does not match data dimension {d}")
    max_steps = n if config.max_steps is None else config.max_steps
    q = config.q

    trace = NRTrace()
    diag = trace.diagnostics
    lam = ball_radius_for_tail(d, config.tail)
    diag["initial_radius"] = lam
    region = Region(d, (BallComplement(lam),))
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    rejected = norms > lam
    step_of = np.full(n, -1)
    step_of[rejected] = 0
    F0 = estimate_F0(pool, region)
    R = int(rejected.sum())

    def finish(rej, final_region, final_step):
        diag["final_step"] = final_step
        trace.region = final_region
        scores = np.where(rej, step_of, -1)
        out = RejectionOutcome(
            rej.copy(),
            "nr",
            estimated_fdr_trace=tuple((s.step, s.estimated_fdr) for s in trace.steps),
            scores=scores,
            diagnostics=diag,
        )
        return out, trace

    if R == 0:
        diag["empty_initial_region"] = True
        return finish(np.zeros(n, dtype=bool), Region(d), -1)
    est = F0 / (R / n)
    trace.steps.append(NRStep(0, tuple(np.flatnonzero(rejected).tolist()), math.nan, est, F0, R))
    best = (rejected.copy(), region, 0) if est <= q else None
    if est > q:
        diag["initial_exceeds_q"] = True
        if not config.warmup or F0 > q:
            return finish(np.zeros(n, dtype=bool), Region(d), -1)

    step = 0
    while step < max_steps:
        if rejected.all():
            diag["stopped"] = "all_rejected"
            break
        if on_refit is not None:
            on_refit(np.flatnonzero(rejected), rejected.copy())
        density = _refit(Z, rejected, n, diag)
        open_idx = np.flatnonzero(~rejected)
        probe = LikelihoodLevelSet(density, 0.0)
        lr = probe.log_ratio(Z[open_idx], norms[open_idx])
        # descending by log ratio, ties by original index
        order = np.lexsort((open_idx, -lr))
        lr_sorted = lr[order]
        groups = np.flatnonzero(np.r_[True, lr_sorted[1:] != lr_sorted[:-1]])
        n_sub = min(config.refit_batch, groups.size, max_steps - step)
        bounds = np.r_[groups, lr_sorted.size]
        stages = [LikelihoodLevelSet(density, float(lr_sorted[groups[g]])) for g in range(n_sub)]
        F0s = estimate_F0_level_batch(pool, region, stages)
        stop = None
        for g in range(n_sub):
            step += 1
            members = open_idx[order[bounds[g] : bounds[g + 1]]]
            rejected[members] = True
            step_of[members] = step
            region = extend(region, stages[g])
            R = int(rejected.sum())
            est = F0s[g] / (R / n)
            trace.steps.append(
                NRStep(step, tuple(members.tolist()), stages[g].threshold, est, F0s[g], R)
            )
            if est <= q:
                best = (rejected.copy(), region, step)
            elif best is not None:
                stop = "exceeded_q"
                break
            if F0s[g] > q:
                stop = "F0_exceeds_q"
                break
        if stop is not None:
            diag["stopped"] = stop
            break
    else:
        diag["stopped"] = "max_steps"
        diag["max_steps_reached"] = True

    if best is None:
        diag["never_below_q"] = True
        return finish(np.zeros(n, dtype=bool), Region(d), -1)
    return finish(*best)
