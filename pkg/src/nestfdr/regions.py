"""Nested rejection regions as a growing union of stage predicates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import InputError
from .kde import ProductKernelDensity

_LOG_2PI = math.log(2.0 * math.pi)
_PRUNE_BINS = 256
_PRUNE_MIN_POINTS = 4096


def _norms(Y):
    return np.sqrt(np.einsum("ij,ij->i", Y, Y))


@dataclass(frozen=True, eq=False)
class BallComplement:
    """All points with Euclidean norm strictly greater than ``lam``."""

    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise InputError(f"ball radius must be >= 0, got {self.lam}")

    d = None

    def contains_many(self, Y, norms=None) -> np.ndarray:
        if norms is None:
            norms = _norms(Y)
        return norms > self.lam


@dataclass(frozen=True, eq=False)
class LikelihoodLevelSet:
    """Points where ``density(z) / f0(z) >= exp(log_threshold)``.

    The comparison is done in log space. The set is closed so that the point
    defining the threshold belongs to it.
    """

    density: ProductKernelDensity
    log_threshold: float

    @classmethod
    def from_threshold(cls, density, threshold: float) -> "LikelihoodLevelSet":
        if not threshold > 0:
            raise InputError(f"likelihood-ratio threshold must be positive, got {threshold}")
        return cls(density, math.log(threshold))

    @property
    def threshold(self) -> float:
        return math.exp(self.log_threshold)

    @property
    def d(self) -> int:
        return self.density.d

    def log_ratio(self, Y, norms=None) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if norms is None:
            norms = _norms(Y)
        return self.density.log_batch_eval(Y) + 0.5 * Y.shape[1] * _LOG_2PI + 0.5 * norms**2

    def contains_many(self, Y, norms=None) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if norms is None:
            norms = _norms(Y)
        out = np.zeros(Y.shape[0], dtype=bool)
        cand = self._candidates(norms)
        if cand.size:
            out[cand] = self.log_ratio(Y[cand], norms[cand]) >= self.log_threshold
        return out

    def _candidates(self, norms) -> np.ndarray:
        """Indices that can pass the threshold according to a norm-shell bound.

        For ``|y|`` in ``[lo, hi]``, ``|(y - x) / h| >= dist(|x|, [lo, hi]) / max(h)``
        and ``f0(y) >= f0`` at radius ``hi``, which bounds the log ratio from
        above. The bound is exact, so pruning never changes membership.
        """
        n = norms.shape[0]
        if n < _PRUNE_MIN_POINTS:
            return np.arange(n)
        dens = self.density
        edges = np.linspace(0.0, float(norms.max()) * (1 + 1e-12) + 1e-300, _PRUNE_BINS + 1)
        lo, hi = edges[:-1], edges[1:]
        r = np.sqrt(np.einsum("ij,ij->i", dens.support, dens.support))
        gap = np.maximum(0.0, np.maximum(lo[:, None] - r[None, :], r[None, :] - hi[:, None]))
        hmax = float(dens.bandwidths.max())
        bound = (
            logsumexp(-0.5 * (gap / hmax) ** 2, axis=1)
            + dens._log_const
            + 0.5 * dens.d * _LOG_2PI
            + 0.5 * hi**2
        )
        live = bound >= self.log_threshold - 1e-9
        bins = np.minimum(np.searchsorted(edges, norms, side="right") - 1, _PRUNE_BINS - 1)
        return np.flatnonzero(live[bins])


@dataclass(frozen=True, eq=False)
class Region:
    """Union of stages; appending a stage can only add members."""

    d: int
    stages: tuple = ()

    def __post_init__(self):
        if self.d < 1:
            raise InputError(f"region dimension must be >= 1, got {self.d}")
        object.__setattr__(self, "stages", tuple(self.stages))
        for stage in self.stages:
            _check_stage_dim(stage, self.d)

    def contains_many(self, Y, norms=None) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != self.d:
            raise InputError(f"expected points of dimension {self.d}, got shape {Y.shape}")
        if norms is None:
            norms = _norms(Y)
        out = np.zeros(Y.shape[0], dtype=bool)
        for stage in self.stages:
            todo = np.flatnonzero(~out)
            if todo.size == 0:
                break
            out[todo[stage.contains_many(Y[todo], norms[todo])]] = True
        return out

    def __len__(self):
        return len(self.stages)


def _check_stage_dim(stage, d):
    sd = getattr(stage, "d", None)
    if sd is not None and sd != d:
        raise InputError(f"stage dimension {sd} does not match region dimension {d}")


def empty_region(d: int) -> Region:
    return Region(d)


def contains(region: Region, z) -> bool:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != region.d:
        raise InputError(f"expected a {region.d}-vector, got length {z.shape[0]}")
    return bool(region.contains_many(z[None, :])[0])


def extend(region: Region, stage) -> Region:
    _check_stage_dim(stage, region.d)
    return Region(region.d, region.stages + (stage,))


# --- line-delimited serialization -------------------------------------------


def region_records(region: Region) -> list[dict]:
    """Records for a region: a header, one record per density snapshot, one per stage."""
    records = [{"kind": "region", "d": region.d, "n_stages": len(region.stages)}]
    ids: dict[int, int] = {}
    for stage in region.stages:
        if isinstance(stage, LikelihoodLevelSet) and id(stage.density) not in ids:
            dens = stage.density
            ids[id(dens)] = len(ids)
            records.append(
                {
                    "kind": "density",
                    "id": ids[id(dens)],
                    "normalizer": dens.normalizer,
                    "bandwidths": dens.bandwidths.tolist(),
                    "support": dens.support.tolist(),
                }
            )
    for step, stage in enumerate(region.stages):
        if isinstance(stage, BallComplement):
            records.append({"kind": "ball_complement", "stage": step, "lambda": stage.lam})
        elif isinstance(stage, LikelihoodLevelSet):
            records.append(
                {
                    "kind": "likelihood_level_set",
                    "stage": step,
                    "threshold": stage.threshold,
                    "log_threshold": stage.log_threshold,
                    "density_id": ids[id(stage.density)],
                }
            )
        else:
            raise InputError(f"cannot serialize stage of type {type(stage).__name__}")
    return records


def regions_from_records(records) -> Region:
    records = list(records)
    if not records or records[0].get("kind") != "region":
        raise InputError("region trace must start with a 'region' header record")
    d = int(records[0]["d"])
    densities = {}
    stages = []
    for rec in records[1:]:
        kind = rec.get("kind")
        if kind == "density":
            densities[rec["id"]] = ProductKernelDensity(
                np.asarray(rec["support"], dtype=float).reshape(-1, d),
                np.asarray(rec["bandwidths"], dtype=float),
                rec["normalizer"],
            )
        elif kind == "ball_complement":
            stages.append(BallComplement(float(rec["lambda"])))
        elif kind == "likelihood_level_set":
            try:
                dens = densities[rec["density_id"]]
            except KeyError:
                raise InputError(f"stage refers to unknown density id {rec['density_id']}") from None
            stages.append(LikelihoodLevelSet(dens, float(rec["log_threshold"])))
        else:
            raise InputError(f"unknown record kind {kind!r}")
    return Region(d, tuple(stages))


def write_region_jsonl(path, region: Region) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in region_records(region):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_region_jsonl(path) -> Region:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    records = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {i} is not valid JSON ({exc.msg})") from None
    return regions_from_records(records)
