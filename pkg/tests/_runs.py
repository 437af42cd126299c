"""Per-replicate result cache shared across the statistical test files.

Replicate seeds depend only on (seed, scenario, n, d, index), so a result
computed for one test can be reused by any other that needs the same
replicate, and a B=50 check can read the first 50 of a B=100 run.
"""
import dataclasses
import math

import numpy as np

from nestfdr import simulation
from nestfdr.simulation import ScenarioConfig

_CACHE: dict = {}
REPORT: list = []


def _key(config: ScenarioConfig):
    return dataclasses.replace(config, replicates=1)


def values(config: ScenarioConfig, method: str, B: int | None = None) -> np.ndarray:
    """(B, 2) array of per-replicate (FDP, FNP) for ``method``; failures raise."""
    B = config.replicates if B is None else B
    base = _key(config)
    out = []
    for i in range(B):
        k = (base, method, i)
        if k not in _CACHE:
            v = simulation._one_replicate((config, (method,), i))[method]
            if isinstance(v, str):
                raise AssertionError(f"{method} failed on replicate {i}: {v}")
            _CACHE[k] = v
        out.append(_CACHE[k])
    return np.asarray(out, dtype=float)


def summary(v: np.ndarray):
    """Means and standard errors of the FDP and FNP columns."""
    mean = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])
    return float(mean[0]), float(se[0]), float(mean[1]), float(se[1])


def cached_oracle_configs():
    return sorted({k[0] for k in _CACHE if k[1] == "oracle"}, key=repr)


def report(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    REPORT.append(line)
    print(line)
