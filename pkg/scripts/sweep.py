"""Run the full configuration matrix and print one line per run plus a summary.

usage: python scripts/sweep.py [--sizes 128,128,128 ...] [--seeds 0 1 2]
"""
import argparse
import sys
from pathlib import Path

from tcgen.config import parse_triple
from tcgen.sweep import SEEDS, SIZES, run_matrix

REPO = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", nargs="*", default=None, help="problem sizes M,N,K (default: {128,256}^3)")
    ap.add_argument("--seeds", nargs="*", type=int, default=list(SEEDS))
    ap.add_argument("--dags", type=Path, default=REPO / "dags")
    a = ap.parse_args()
    sizes = [parse_triple(s) for s in a.sizes] if a.sizes else SIZES

    def show(run, dt):
        failed = [k for k, v in run.checks.items() if not v]
        vs1 = "" if run.split_k_vs_one is None else f" vs-sk1={run.split_k_vs_one:.3f}"
        print(f"{'PASS' if run.passed else 'FAIL'} {run.dag:20s} {run.config:36s} {run.sizes} "
              f"err/bound={run.worst_ratio:.3f}{vs1} {dt:.2f}s {' '.join(failed)}", flush=True)

    runs = run_matrix(a.dags, tuple(a.seeds), sizes, show)
    bad = sum(not r.passed for r in runs)
    print(f"{len(runs) - bad}/{len(runs)} runs passed")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
