"""Command line: ``tcgen generate | verify | goldens``.

Exit codes: 0 success, 1 validation rejection, 2 verification failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import LAYOUT_CODES, ConfigError, GenConfig, parse_triple
from .dag import load_dag

OK, REJECTED, FAILED, IO_ERROR = 0, 1, 2, 3


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dag", required=True, type=Path, help="DAG specification (JSON)")
    p.add_argument("--block-tile", default="128,128,64", help="block tile m,n,k")
    p.add_argument("--warp-tile", default="64,64,32", help="warp tile m,n,k")
    p.add_argument("--macro", type=int, default=16, choices=(16, 32), help="macro-MMA size")
    p.add_argument("--split-k", type=int, default=None, help="warps along k (default: block k / warp k)")
    p.add_argument("--layouts", default=None, choices=sorted(LAYOUT_CODES),
                   help="A,B operand layouts (default: as declared in the DAG)")
    p.add_argument("--no-prefetch", action="store_true", help="disable the one-tile-ahead global prefetch")


def _config(a) -> GenConfig:
    return GenConfig(parse_triple(a.block_tile), parse_triple(a.warp_tile), a.macro, a.split_k,
                     LAYOUT_CODES[a.layouts] if a.layouts else None, not a.no_prefetch).validated()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tcgen", description="Tensor-core kernel generator and simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    g = sub.add_parser("generate", help="emit <name>.cu, <name>.ir.txt and <name>.launch.json")
    _config_args(g)
    g.add_argument("--out", type=Path, default=Path("out"))
    g.add_argument("--dump-plans", action="store_true", help="also write the copy plans and the annotated tree")
    v = sub.add_parser("verify", help="generate, simulate and check against the oracles")
    _config_args(v)
    v.add_argument("--sizes", default="128,128,64", help="problem size M,N,K")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", choices=("json", "text"), default="text")
    v.add_argument("--out", type=Path, default=None, help="also write the report here")
    v.add_argument("--dump-plans", action="store_true")
    gl = sub.add_parser("goldens", help="compare or regenerate the golden corpus")
    gl.add_argument("action", choices=("check", "update"))
    gl.add_argument("--root", type=Path, default=None, help="golden directory (default: repo goldens/)")
    gl.add_argument("--dags", type=Path, default=None, help="DAG directory (default: repo dags/)")
    return ap


def _load(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"no such DAG file: {path}")
    return load_dag(path)


def cmd_generate(a) -> int:
    from .generate import generate, write_artifacts
    from .planner import dump_plans
    cfg = _config(a)
    g = generate(_load(a.dag), cfg)
    paths = write_artifacts(g, a.out, a.dag.stem, a.dump_plans)
    print(g.summary())
    if a.dump_plans:
        print(dump_plans(g.plan), end="")
    for p in paths:
        print(f"wrote {p}")
    return OK


def cmd_verify(a) -> int:
    from .generate import generate
    from .planner import dump_plans
    from .verify import evaluate
    cfg = _config(a)
    M, N, K = parse_triple(a.sizes)
    cfg.check_sizes(M, N, K)
    g = generate(_load(a.dag), cfg)
    if a.dump_plans:
        print(dump_plans(g.plan), end="")
    from .simulator import SimulationError
    try:
        rep = evaluate(g, {"M": M, "N": N, "K": K}, (a.seed,))[0]
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return FAILED
    text = rep.to_json() if a.report == "json" else rep.to_text()
    print(text, end="")
    if a.out:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(text)
    return OK if rep.passed else FAILED


def cmd_goldens(a) -> int:
    from . import goldens
    if a.action == "update":
        for p in goldens.update(a.root, a.dags):
            print(f"updated {p}")
        return OK
    bad = goldens.check(a.root, a.dags)
    for m in bad:
        print(m.describe())
    print("goldens " + ("match" if not bad else f"differ in {len(bad)} file(s)"))
    return OK if not bad else FAILED


def main(argv: list[str] | None = None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return {"generate": cmd_generate, "verify": cmd_verify, "goldens": cmd_goldens}[a.cmd](a)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return IO_ERROR
    except (ConfigError, ValueError) as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return REJECTED


if __name__ == "__main__":
    sys.exit(main())
