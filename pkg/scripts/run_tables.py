"""Run one or more experiment configs and print an FDR/FNR table per config.

    python scripts/run_tables.py scripts/configs/scenario1_grid.yaml --workers 4
"""
import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

from nestfdr.cli import main as cli_main


def print_table(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    cells = defaultdict(dict)
    for r in rows:
        cells[(int(r["n"]), int(r["d"]))][r["method"]] = (float(r["fdr"]), float(r["fnr"]))
    head = f"{'n':>6} {'d':>3}  " + "  ".join(f"{m:>13}" for m in methods)
    print(head)
    print(" " * 12 + "  ".join(f"{'FDR   FNR':>13}" for _ in methods))
    for (n, d), by_m in sorted(cells.items()):
        vals = "  ".join(f"{by_m[m][0]:6.3f}{by_m[m][1]:7.3f}" if m in by_m else f"{'-':>13}" for m in methods)
        print(f"{n:>6} {d:>3}  {vals}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cfg in args.configs:
        out = out_dir / (Path(cfg).stem + ".csv")
        code = cli_main(["experiment", cfg, "--out", str(out), "--workers", str(args.workers)])
        if code:
            return code
        print(f"\n== {cfg} -> {out}")
        print_table(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
