"""Scenario generators, the replicate runner and the step-down martingale harness.

Scenarios:
  1. nulls ``N(0, I)``, non-nulls ``N(mu, I)``.
  2. nulls ``N(0, S)``, non-nulls ``N(mu, S)`` with ``S`` a random correlation
     matrix drawn per replicate. NR, SC and the oracle see the data whitened by
     the known ``S``; Fisher sees the raw, correlated z-values.
  3. nulls ``N(0, I)``, non-nulls ``N(mu, S)`` with ``S`` a random covariance
     per replicate (the SC-versus-oracle comparison; use ``mu_scale=1`` for
     ``|mu| = 1``). ``alt_cov="eigen"`` draws ``S = Q diag(lam) Q^T`` with
     ``lam ~ U(1, 10)`` and ``Q`` Haar-orthogonal; ``alt_cov="correlation"``
     uses :func:`random_correlation` instead.

``mu`` has every coordinate equal to ``mu_scale / sqrt(d)``.
"""

from __future__ import annotations

import csv
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import InputError, NumericalError, confusion_counts, fdp, fnp
from .null import build_null_pool, whiten_known
from .nr import NRConfig, nr_procedure
from .oracle import MixtureSpec, oracle_procedure
from .sc import sc_procedure
from .univariate import bh_step_down, fisher_combine, z_to_p_two_sided

SCENARIOS = (1, 2, 3)
ALT_COVS = ("eigen", "correlation")
METHODS = ("fisher", "sc", "nr", "oracle")
METRIC_COLUMNS = ("method", "n", "d", "scenario", "fdr", "fdr_se", "fnr", "fnr_se", "B")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    n: int = 1000
    d: int = 2
    pi0: float = 0.8
    q: float = 0.1
    mu_scale: float = 2.0
    replicates: int = 100
    seed: int = 0
    q_prime: float | None = None
    pool_size: int = 100_000
    refit_batch: int = 1
    alt_cov: str = "eigen"

    def __post_init__(self):
        if self.alt_cov not in ALT_COVS:
            raise InputError(f"alt_cov must be one of {ALT_COVS}, got {self.alt_cov!r}")
        if self.scenario not in SCENARIOS:
            raise InputError(f"scenario must be one of {SCENARIOS}, got {self.scenario}")
        if self.n < 1 or self.d < 1:
            raise InputError("n and d must be >= 1")
        if self.scenario in (2, 3) and self.d < 2:
            raise InputError(f"scenario {self.scenario} needs d >= 2")
        if not 0.0 < self.pi0 <= 1.0:
            raise InputError(f"pi0 must lie in (0, 1], got {self.pi0}")
        if not 0.0 < self.q < 1.0:
            raise InputError(f"q must lie in (0, 1), got {self.q}")
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if self.pool_size < 1 or self.refit_batch < 1:
            raise InputError("pool_size and refit_batch must be >= 1")

    @property
    def mu(self) -> np.ndarray:
        return np.full(self.d, self.mu_scale / math.sqrt(self.d))

    def nr_config(self, seed) -> NRConfig:
        return NRConfig(
            q=self.q,
            q_prime=self.q_prime,
            pool_size=self.pool_size,
            refit_batch=self.refit_batch,
            seed=seed,
        )


@dataclass(frozen=True)
class MetricsRow:
    method: str
    n: int
    d: int
    scenario: int
    fdr: float
    fdr_se: float
    fnr: float
    fnr_se: float
    B: int
    n_failed: int = 0
    degenerate: bool = False

    def __post_init__(self):
        for name in ("fdr", "fnr"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0 or math.isnan(v)):
                raise InputError(f"{name} must lie in [0, 1], got {v}")
        if self.fdr_se < 0 or self.fnr_se < 0:
            raise InputError("standard errors must be non-negative")

    def as_record(self) -> dict:
        return {c: getattr(self, c) for c in METRIC_COLUMNS}


def random_correlation(d: int, seed=None, alphad: float = 1.0) -> np.ndarray:
    """Random correlation matrix by the vine method.

    Partial correlations on level ``k`` are ``2 Beta(b_k, b_k) - 1`` with
    ``b_k = alphad + (d - 1 - k) / 2``; ``alphad = 1`` makes the matrix
    uniform over correlation matrices. Rows and columns are randomly permuted.
    """
    if d < 2:
        raise InputError("random_correlation needs d >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = np.zeros((d, d))
    S = np.eye(d)
    beta = alphad + (d - 1) / 2
    for k in range(d - 1):
        beta -= 0.5
        for i in range(k + 1, d):
            P[k, i] = 2.0 * rng.beta(beta, beta) - 1.0
            p = P[k, i]
            # climb from the partial to the full correlation
            for l in range(k - 1, -1, -1):
                p = p * math.sqrt((1 - P[l, i] ** 2) * (1 - P[l, k] ** 2)) + P[l, i] * P[l, k]
            S[k, i] = S[i, k] = p
    perm = rng.permutation(d)
    S = S[np.ix_(perm, perm)]
    np.fill_diagonal(S, 1.0)
    return S


def random_covariance(d: int, seed=None, low: float = 1.0, ratio: float = 10.0) -> np.ndarray:
    """Random covariance ``Q diag(lam) Q^T`` with ``lam ~ U(low, low * ratio)``.

    ``Q`` is Haar-distributed (QR of a Gaussian matrix with the sign of
    ``diag(R)`` folded in).
    """
    if d < 1 or not (low > 0 and ratio >= 1):
        raise InputError("random_covariance needs d >= 1, low > 0 and ratio >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    lam = rng.uniform(low, low * ratio, d)
    S = (Q * lam) @ Q.T
    return 0.5 * (S + S.T)


def replicate_seed(config: ScenarioConfig, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([config.seed, config.scenario, config.n, config.d, index])


def generate(config: ScenarioConfig, replicate_index: int):
    """Draw one replicate: ``(Z, labels, MixtureSpec)``."""
    rng = np.random.default_rng(replicate_seed(config, replicate_index))
    n, d = config.n, config.d
    labels = rng.random(n) >= config.pi0
    mu = config.mu
    eps = rng.standard_normal((n, d))
    pi0 = min(config.pi0, 1 - 1e-12)
    if config.scenario == 1:
        Z = eps + labels[:, None] * mu
        spec = MixtureSpec(pi0, mu, np.eye(d))
    elif config.scenario == 2:
        S = random_correlation(d, rng)
        Z = eps @ np.linalg.cholesky(S).T + labels[:, None] * mu
        spec = MixtureSpec(pi0, mu, S, null_cov=S)
    else:
        S = random_covariance(d, rng) if config.alt_cov == "eigen" else random_correlation(d, rng)
        alt = eps @ np.linalg.cholesky(S).T + mu
        Z = np.where(labels[:, None], alt, eps)
        spec = MixtureSpec(pi0, mu, S)
    return Z, labels.astype(np.int8), spec


def run_method(method: str, Z, spec: MixtureSpec, config: ScenarioConfig, seed):
    """Run one method on one replicate and return its rejection mask."""
    q = config.q
    if method == "fisher":
        return bh_step_down(fisher_combine(z_to_p_two_sided(Z)), q, "fisher").rejected
    Zw = Z if spec.null_cov is None else whiten_known(Z, spec.null_cov)
    if method == "sc":
        return sc_procedure(Zw, q, spec.pi0).rejected
    if method == "nr":
        pool = build_null_pool(Z.shape[1], config.pool_size, seed)
        return nr_procedure(Zw, config.nr_config(seed), pool)[0].rejected
    if method == "oracle":
        pool = build_null_pool(Z.shape[1], config.pool_size, seed)
        return oracle_procedure(Z, q, spec, pool).rejected
    raise InputError(f"unknown method {method!r}; choose from {METHODS}")


def _one_replicate(args):
    config, methods, index = args
    Z, labels, spec = generate(config, index)
    pool_seed = int(replicate_seed(config, index).generate_state(1)[0])
    out = {}
    for m in methods:
        try:
            rej = run_method(m, Z, spec, config, pool_seed)
            c = confusion_counts(labels, rej)
            out[m] = (fdp(c), fnp(c))
        except (InputError, NumericalError, ArithmeticError, ValueError) as exc:
            out[m] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return out


@dataclass
class ReplicateResults:
    config: ScenarioConfig
    methods: tuple[str, ...]
    values: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def rows(self) -> list[MetricsRow]:
        rows = []
        for m in self.methods:
            v = np.asarray(self.values.get(m, []), dtype=float).reshape(-1, 2)
            B = v.shape[0]
            nf = len(self.failures.get(m, []))
            if B == 0:
                mean = se = np.full(2, math.nan)
            else:
                mean = v.mean(axis=0)
                se = v.std(axis=0, ddof=1) / math.sqrt(B) if B > 1 else np.zeros(2)
            c = self.config
            rows.append(
                MetricsRow(
                    m, c.n, c.d, c.scenario, float(mean[0]), float(se[0]), float(mean[1]),
                    float(se[1]), B, nf, B <= 1,
                )
            )
        return rows


def run_replicates(
    config: ScenarioConfig, methods=METHODS, workers: int = 1, results: bool = False
):
    """Score each method over ``config.replicates`` replicates.

    Returns a list of :class:`MetricsRow`, or the full
    :class:`ReplicateResults` when ``results=True``. Method failures are
    recorded per replicate and excluded from the averages.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; choose from {METHODS}")
    jobs = [(config, methods, i) for i in range(config.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            per_rep = list(ex.map(_one_replicate, jobs))
    else:
        per_rep = [_one_replicate(j) for j in jobs]
    res = ReplicateResults(config, methods)
    for i, rep in enumerate(per_rep):
        for m, v in rep.items():
            if isinstance(v, str):
                res.failures.setdefault(m, []).append((i, v))
            else:
                res.values.setdefault(m, []).append(v)
    return res if results else res.rows()


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            rec = r.as_record()
            for k in ("fdr", "fdr_se", "fnr", "fnr_se"):
                rec[k] = repr(float(rec[k]))
            w.writerow(rec)


def _b_values(b_jumps, t) -> np.ndarray:
    """Right-continuous step function from ``(time, value)`` pairs; 0 before the first."""
    out = np.zeros(np.shape(t))
    for time, value in sorted(b_jumps):
        out = np.where(t >= time, value, out)
    return out


def lemma1_harness(n0: int, q: float, b_jumps=(), sims: int = 10_000, seed=0):
    """Sample mean and SE of ``a_hat(tau) / tau`` for step-down stopping.

    ``a_t`` counts ``n0`` uniform null p-values ``<= t`` and ``a_hat_t = a_t -
    n0 t``. ``b_jumps`` lists ``(time, value)`` pairs of the deterministic
    non-null count ``b_t``; ``n = n0 + b(1)``. The stopping time is evaluated
    on the grid ``t_j = j q / n``: with ``k`` the last ``j`` before the first
    ``r(t_j) < j`` (``r = a + b``), ``tau = t_k``, where ``r(tau) = n tau / q``
    holds exactly. For ``k = 0`` nothing has happened and ``a_hat / tau = -n0``.
    """
    if n0 < 0:
        raise InputError("n0 must be >= 0")
    if not 0.0 < q < 1.0:
        raise InputError(f"q must lie in (0, 1), got {q}")
    if sims < 1:
        raise InputError("sims must be >= 1")
    times = [t for t, _ in b_jumps]
    vals = [v for _, v in sorted(b_jumps)]
    if any(not 0.0 <= t <= 1.0 for t in times) or np.any(np.diff([0] + vals) < 0):
        raise InputError("b must be a non-decreasing step function on [0, 1]")
    if n0 == 0:
        return 0.0, 0.0
    n = n0 + int(_b_values(b_jumps, 1.0))
    grid = q * np.arange(1, n + 1) / n
    b_grid = _b_values(b_jumps, grid)
    rng = np.random.default_rng(seed)
    ratios = np.empty(sims)
    chunk = max(1, 2_000_000 // max(n0, 1))
    for start in range(0, sims, chunk):
        m = min(chunk, sims - start)
        P = np.sort(rng.random((m, n0)), axis=1)
        # a(t_j) for each sim and grid point
        a = np.stack([np.searchsorted(row, grid, side="right") for row in P])
        fail = (a + b_grid) < np.arange(1, n + 1)
        k = np.where(fail.any(axis=1), fail.argmax(axis=1), n)
        a_tau = np.where(k > 0, a[np.arange(m), np.maximum(k - 1, 0)], 0)
        tau = np.where(k > 0, q * k / n, 1.0)
        ratios[start : start + m] = a_tau / tau - n0
    se = ratios.std(ddof=1) / math.sqrt(sims) if sims > 1 else 0.0
    return float(ratios.mean()), float(se)
