"""Command-line entry point.

Commands: ``analyze``, ``experiment``, ``plot-regions``, ``lemma1-check`` and
``rerun`` (replay a run from its manifest). Exit codes: 0 success, 2 usage
error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import itertools
import json
import math
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from .core import InputError, NumericalError, as_zmatrix
from .null import whiten
from .nr import NRConfig, nr_procedure
from .regions import Region, read_region_jsonl, write_region_jsonl
from .sc import sc_procedure
from .simulation import METHODS, ScenarioConfig, lemma1_harness, run_replicates, write_metrics_csv
from .univariate import bh_step_down, fisher_combine, pi0_lowest_slope, z_to_p_two_sided

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
ANALYZE_METHODS = ("nr", "sc", "fisher", "bh1d")
CONFIG_REQUIRED = ("scenario", "n_grid", "d_grid", "replicates", "methods")
CONFIG_OPTIONAL = {
    "pi0": 0.8,
    "q": 0.1,
    "q_prime": None,
    "mu_scale": 2.0,
    "seed": 0,
    "pool_size": 100_000,
    "refit_batch": 1,
    "alt_cov": "eigen",
}


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- ingestion


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV; a non-numeric first row is a header."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: file is empty")
    if not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
        if not rows:
            raise InputError(f"{path}: header only, no data rows")
    width = len(rows[0][1])
    data = []
    for line, row in rows:
        if len(row) != width:
            raise InputError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        vals = []
        for j, cell in enumerate(row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise InputError(
                    f"{path}: line {line}, column {j + 1}: non-numeric value {cell.strip()!r}"
                ) from None
        data.append(vals)
    return as_zmatrix(np.array(data))


# ---------------------------------------------------------------- manifest


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, config: dict, seeds: dict, outputs, started: str) -> None:
    outputs = [str(p) for p in outputs]
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "version": _version(),
        "started": started,
        "finished": _now(),
        "outputs": [{"path": p, "sha256": _sha256(p)} for p in outputs],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- analyze


def _resolve_pi0(spec, Z) -> float | None:
    if spec is None:
        return None
    if spec == "lowest-slope":
        return min(pi0_lowest_slope(z_to_p_two_sided(Z[:, j])) for j in range(Z.shape[1]))
    try:
        v = float(spec)
    except ValueError:
        raise UsageError(f"--pi0 must be a number or 'lowest-slope', got {spec!r}") from None
    if not 0.0 < v <= 1.0:
        raise UsageError(f"--pi0 must lie in (0, 1], got {v}")
    return v


def analyze(opts: dict) -> dict:
    """Run one procedure on a data file; returns a summary dict."""
    started = _now()
    method = opts["method"]
    if method not in ANALYZE_METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {ANALYZE_METHODS}")
    Z = ingest_csv(opts["data"])
    n, d = Z.shape
    if opts.get("column") is not None:
        j = opts["column"]
        if not 0 <= j < d:
            raise UsageError(f"--column {j} out of range for {d} columns")
        Z = Z[:, [j]]
        d = 1
    if opts.get("whiten"):
        Z = whiten(Z)
    pi0 = _resolve_pi0(opts.get("pi0"), Z)
    q = opts["q"]
    out = Path(opts["out"])
    outputs = [out]
    extra = {}
    if method == "bh1d":
        if d != 1:
            raise UsageError("bh1d needs single-column data or --column")
        res = bh_step_down(z_to_p_two_sided(Z[:, 0]), q, "bh1d")
    elif method == "fisher":
        res = bh_step_down(fisher_combine(z_to_p_two_sided(Z)), q, "fisher")
    elif method == "sc":
        if pi0 is None:
            raise UsageError("sc needs --pi0 (a value or 'lowest-slope')")
        res = sc_procedure(Z, q, pi0)
    else:
        cfg = NRConfig(
            q=q,
            q_prime=opts.get("q_prime"),
            pool_size=opts.get("pool_size", 100_000),
            refit_batch=opts.get("refit_batch", 1),
            seed=opts.get("seed", 0),
        )
        res, trace = nr_procedure(Z, cfg)
        trace_path = Path(opts.get("trace") or out.with_suffix(".trace.jsonl"))
        write_region_jsonl(trace_path, trace.region)
        outputs.append(trace_path)
        extra = {"stopped": trace.diagnostics.get("stopped"), "steps": len(trace.steps)}
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "rejected", "score"])
        for i, (r, s) in enumerate(zip(res.rejected, res.scores)):
            w.writerow([i, int(r), repr(float(s))])
    manifest = Path(opts.get("manifest") or out.with_suffix(".manifest.json"))
    snapshot = dict(opts, data=str(opts["data"]), out=str(out))
    write_manifest(manifest, "analyze", snapshot, {"seed": opts.get("seed", 0)}, outputs, started)
    return {"n": n, "d": d, "rejected": res.n_rejected, "pi0": pi0, **extra}


# ---------------------------------------------------------------- experiment


def load_experiment_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not a valid config file ({exc})") from None
    return validate_experiment_config(raw)


def validate_experiment_config(raw) -> dict:
    if not isinstance(raw, dict):
        raise InputError("config must be a key/value mapping")
    unknown = sorted(set(raw) - set(CONFIG_REQUIRED) - set(CONFIG_OPTIONAL))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in CONFIG_REQUIRED if k not in raw]
    if missing:
        raise InputError(f"missing config keys: {', '.join(missing)}")
    cfg = dict(CONFIG_OPTIONAL, **raw)
    for k in ("n_grid", "d_grid", "methods"):
        if not isinstance(cfg[k], list) or not cfg[k]:
            raise InputError(f"{k} must be a non-empty list")
    bad = [m for m in cfg["methods"] if m not in METHODS]
    if bad:
        raise InputError(f"unknown methods {bad}; choose from {list(METHODS)}")
    return cfg


def experiment(opts: dict) -> dict:
    started = _now()
    cfg = opts.get("config_snapshot") or load_experiment_config(opts["config"])
    rows = []
    failures = {}
    for n, d in itertools.product(cfg["n_grid"], cfg["d_grid"]):
        sc = ScenarioConfig(
            scenario=int(cfg["scenario"]),
            n=int(n),
            d=int(d),
            pi0=float(cfg["pi0"]),
            q=float(cfg["q"]),
            mu_scale=float(cfg["mu_scale"]),
            replicates=int(cfg["replicates"]),
            seed=int(cfg["seed"]),
            q_prime=None if cfg["q_prime"] is None else float(cfg["q_prime"]),
            pool_size=int(cfg["pool_size"]),
            refit_batch=int(cfg["refit_batch"]),
            alt_cov=str(cfg["alt_cov"]),
        )
        res = run_replicates(sc, cfg["methods"], workers=opts.get("workers", 1), results=True)
        rows.extend(res.rows())
        for m, f in res.failures.items():
            failures[f"n={n},d={d},{m}"] = f
    out = Path(opts["out"])
    write_metrics_csv(out, rows)
    manifest = Path(opts.get("manifest") or out.with_suffix(".manifest.json"))
    snapshot = {"config_snapshot": cfg, "out": str(out), "workers": opts.get("workers", 1)}
    write_manifest(manifest, "experiment", snapshot, {"seed": cfg["seed"]}, [out], started)
    if failures:
        data = json.loads(manifest.read_text(encoding="utf-8"))
        data["failures"] = failures
        manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"rows": len(rows), "failures": sum(len(v) for v in failures.values())}


# ---------------------------------------------------------------- plotting


def _march(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> list[list[tuple[float, float]]]:
    """Boundary polylines of a boolean node grid (marching squares, midpoint edges)."""
    ny, nx = mask.shape
    m = mask.astype(np.uint8)
    case = m[:-1, :-1] | (m[:-1, 1:] << 1) | (m[1:, 1:] << 2) | (m[1:, :-1] << 3)
    # cell edges: 0 bottom (y=i), 1 right (x=j+1), 2 top (y=i+1), 3 left (x=j)
    table = {
        1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 5: [(3, 0), (1, 2)],
        6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(2, 0)], 10: [(0, 1), (2, 3)],
        11: [(2, 1)], 12: [(1, 3)], 13: [(1, 0)], 14: [(0, 3)],
    }

    def key(i, j, e):
        # shared edge identity: ('h', row, col) horizontal, ('v', row, col) vertical
        return {0: ("h", i, j), 2: ("h", i + 1, j), 3: ("v", i, j), 1: ("v", i, j + 1)}[e]

    adj: dict = {}
    for i, j in zip(*np.nonzero((case > 0) & (case < 15))):
        for a, b in table[int(case[i, j])]:
            ka, kb = key(i, j, a), key(i, j, b)
            adj.setdefault(ka, []).append(kb)
            adj.setdefault(kb, []).append(ka)

    def point(k):
        kind, i, j = k
        if kind == "h":
            return (0.5 * (xs[j] + xs[j + 1]), ys[i])
        return (xs[j], 0.5 * (ys[i] + ys[i + 1]))

    seen = set()
    lines = []
    # open chains start at degree-1 nodes; then the remaining cycles
    starts = sorted(k for k, v in adj.items() if len(v) == 1) + sorted(adj)
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        prev, cur = None, s
        while True:
            nxt = [k for k in adj[cur] if k != prev and k not in seen]
            if not nxt:
                if len(chain) > 2 and s in adj[cur] and prev is not None:
                    chain.append(s)
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)
        lines.append([point(k) for k in chain])
    return lines


def region_contours(region: Region, bounds, grid: int = 200):
    """Contours of every nested prefix of ``region``, over a ``grid`` x ``grid`` lattice."""
    (x0, x1), (y0, y1) = bounds
    xs = np.linspace(x0, x1, grid)
    ys = np.linspace(y0, y1, grid)
    X, Y = np.meshgrid(xs, ys)
    P = np.column_stack([X.ravel(), Y.ravel()])
    norms = np.sqrt(np.einsum("ij,ij->i", P, P))
    member = np.zeros(P.shape[0], dtype=bool)
    out = []
    for stage in region.stages:
        todo = np.flatnonzero(~member)
        if todo.size:
            member[todo[stage.contains_many(P[todo], norms[todo])]] = True
        out.append(_march(member.reshape(grid, grid), xs, ys))
    return out


def render_svg(Z, rejected, contours, bounds, size: int = 600) -> str:
    (x0, x1), (y0, y1) = bounds
    pad = 20

    def px(x, y):
        u = pad + (x - x0) / (x1 - x0) * (size - 2 * pad)
        v = size - pad - (y - y0) / (y1 - y0) * (size - 2 * pad)
        return f"{u:.2f},{v:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    n_stage = max(len(contours), 1)
    for k, lines in enumerate(contours):
        shade = int(40 + 160 * k / n_stage)
        for line in lines:
            pts = " ".join(px(x, y) for x, y in line)
            out.append(
                f'<polyline class="contour" data-stage="{k}" points="{pts}" fill="none" '
                f'stroke="rgb(0,{shade},{255 - shade})" stroke-width="1"/>'
            )
    for (x, y), r in zip(Z, rejected):
        u, v = px(x, y).split(",")
        if r:
            out.append(f'<circle class="rejected" cx="{u}" cy="{v}" r="2.5" fill="#d62728"/>')
        else:
            out.append(f'<circle class="accepted" cx="{u}" cy="{v}" r="1.5" fill="#7f7f7f"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_regions(opts: dict) -> dict:
    Z = ingest_csv(opts["data"])
    if Z.shape[1] != 2:
        raise UsageError(f"plot-regions supports d = 2 only, got d = {Z.shape[1]}")
    if opts.get("whiten"):
        Z = whiten(Z)
    region = read_region_jsonl(opts["trace"])
    if region.d != 2:
        raise UsageError(f"plot-regions supports d = 2 only, trace has d = {region.d}")
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - 0.1 * span, hi + 0.1 * span
    bounds = ((lo[0], hi[0]), (lo[1], hi[1]))
    contours = region_contours(region, bounds, opts.get("grid", 200))
    rejected = region.contains_many(Z) if len(region) else np.zeros(Z.shape[0], dtype=bool)
    Path(opts["out"]).write_text(render_svg(Z, rejected, contours, bounds), encoding="utf-8")
    return {"stages": len(region), "rejected": int(rejected.sum())}


# ---------------------------------------------------------------- martingale check


def _parse_jump(s: str):
    try:
        t, v = s.split(":")
        return float(t), int(v)
    except ValueError:
        raise UsageError(f"--b-jump expects TIME:COUNT, got {s!r}") from None


def lemma1_check(opts: dict) -> dict:
    jumps = [_parse_jump(s) for s in opts.get("b_jump") or []]
    mean, se = lemma1_harness(opts["n0"], opts["q"], jumps, opts["sims"], opts["seed"])
    return {"mean": mean, "se": se, "holds": bool(mean <= 3 * se)}


# ---------------------------------------------------------------- rerun


def rerun(opts: dict) -> dict:
    """Replay a run from its manifest, writing outputs into ``out_dir``."""
    path = Path(opts["manifest_path"])
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    man = json.loads(path.read_text(encoding="utf-8"))
    cfg = dict(man["config"])
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in ("out", "trace", "manifest"):
        if cfg.get(k):
            cfg[k] = str(out_dir / Path(cfg[k]).name)
    cfg.setdefault("manifest", str(out_dir / path.name))
    if man["command"] == "experiment":
        return experiment(cfg)
    if man["command"] == "analyze":
        return analyze(cfg)
    raise UsageError(f"cannot replay command {man['command']!r}")


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestfdr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run one FDR procedure on a CSV of z-values")
    a.add_argument("data")
    a.add_argument("--method", required=True, choices=ANALYZE_METHODS)
    a.add_argument("--q", type=float, default=0.1)
    a.add_argument("--out", required=True)
    a.add_argument("--whiten", action="store_true")
    a.add_argument("--pi0", default=None, help="value in (0, 1] or 'lowest-slope'")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--pool-size", type=int, default=100_000)
    a.add_argument("--q-prime", type=float, default=None)
    a.add_argument("--refit-batch", type=int, default=1)
    a.add_argument("--column", type=int, default=None, help="0-based column for bh1d")
    a.add_argument("--trace", default=None)
    a.add_argument("--manifest", default=None)

    e = sub.add_parser("experiment", help="run a simulation grid from a YAML config")
    e.add_argument("config")
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--manifest", default=None)

    g = sub.add_parser("plot-regions", help="SVG of a d=2 NR region trace over its data")
    g.add_argument("trace")
    g.add_argument("data")
    g.add_argument("--out", required=True)
    g.add_argument("--whiten", action="store_true")
    g.add_argument("--grid", type=int, default=200)

    m = sub.add_parser("lemma1-check", help="Monte-Carlo check of E[a_hat(tau)/tau] <= 0")
    m.add_argument("--n0", type=int, default=100)
    m.add_argument("--q", type=float, default=0.1)
    m.add_argument("--b-jump", action="append", help="TIME:COUNT step of b (repeatable)")
    m.add_argument("--sims", type=int, default=10_000)
    m.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("rerun", help="replay a run from its manifest")
    r.add_argument("manifest_path")
    r.add_argument("--out-dir", required=True)
    return p


COMMANDS = {
    "analyze": analyze,
    "experiment": experiment,
    "plot-regions": plot_regions,
    "lemma1-check": lemma1_check,
    "rerun": rerun,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    opts = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        summary = COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, sort_keys=True, default=lambda o: None if o is None else str(o)))
    if args.command == "lemma1-check" and not math.isfinite(summary["mean"]):
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
