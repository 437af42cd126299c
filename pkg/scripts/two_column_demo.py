"""Matched two-column workflow on synthetic data: whiten and combine, then plot the regions.

Mimics paired measurements per unit (two assays on the same genes, say):
correlated nulls and a shared shift for a subset.
Writes data, rejection CSVs, the NR trace and an SVG into --out-dir.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from nestfdr.cli import main as cli_main


def synth(n, pi0, rho, shift, seed):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky([[1.0, rho], [rho, 1.0]])
    Z = rng.normal(size=(n, 2)) @ L.T
    k = int(round((1 - pi0) * n))
    Z[:k] += shift
    return Z


def count(path):
    with open(path) as fh:
        return sum(int(r["rejected"]) for r in csv.DictReader(fh))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="demo")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--pi0", type=float, default=0.9)
    ap.add_argument("--rho", type=float, default=0.3)
    ap.add_argument("--shift", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--q", type=float, nargs="+", default=[0.05, 0.1])
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "pairs.csv"
    Z = synth(args.n, args.pi0, args.rho, args.shift, args.seed)
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["expr", "meth"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in Z])

    runs = {
        "bh_expr": ["--method", "bh1d", "--column", "0"],
        "bh_meth": ["--method", "bh1d", "--column", "1"],
        "fisher": ["--method", "fisher", "--whiten"],
        "sc": ["--method", "sc", "--whiten", "--pi0", "lowest-slope"],
        "nr": ["--method", "nr", "--whiten"],
    }
    table = {}
    for q in args.q:
        for name, flags in runs.items():
            res = out / f"{name}_q{q}.csv"
            code = cli_main(["analyze", str(data), *flags, "--q", str(q), "--out", str(res)])
            if code:
                return code
            table.setdefault(name, {})[q] = count(res)
    q_plot = args.q[-1]
    svg = out / f"nr_regions_q{q_plot}.svg"
    trace = out / f"nr_q{q_plot}.trace.jsonl"
    code = cli_main(["plot-regions", str(trace), str(data), "--whiten", "--out", str(svg)])
    if code:
        return code

    print(f"\nrejections (n={args.n})")
    print(f"{'method':>8} " + " ".join(f"{'q=' + str(q):>8}" for q in args.q))
    for name, by_q in table.items():
        print(f"{name:>8} " + " ".join(f"{by_q[q]:>8}" for q in args.q))
    (out / "summary.json").write_text(json.dumps(table, indent=2) + "\n")
    print(f"plot: {svg}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
