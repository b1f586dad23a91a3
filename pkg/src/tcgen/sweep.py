"""Configuration matrix sweep shared by the acceptance suite and ``scripts/sweep.py``."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import GenConfig
from .dag import load_dag
from .generate import generate
from .oracles import oracle_fp64, random_inputs, within_tolerance
from .verify import evaluate

# block/warp shapes giving one, two and four warps along k
SPLIT_SHAPES = {1: ((128, 128, 64), (64, 64, 64)), 2: ((128, 128, 64), (64, 64, 32)),
                4: ((128, 128, 128), (64, 64, 32))}
MACROS = (16, 32)
LAYOUTS = (("row", "row"), ("row", "col"), ("col", "row"), ("col", "col"))
SIZES = tuple(itertools.product((128, 256), repeat=3))
SEEDS = (0, 1, 2)
EPILOGUES = ("matmul_bias_relu", "matmul_bias_sigmoid", "matmul_bias_tanh")


def idiom_dags(size_index: int) -> list[str]:
    """One DAG per idiom; the epilogue activation rotates with the problem size."""
    return ["matmul", EPILOGUES[size_index % 3], "relu_matmul", "sum_of_matmuls"]


@dataclass
class Run:
    dag: str
    config: str
    split_k: int
    sizes: tuple[int, int, int]
    checks: dict[str, bool]
    worst_ratio: float
    split_k_vs_one: float | None = None  # worst error / bound against the split-K 1 output
    segments: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def run_matrix(dags: Path, seeds=SEEDS, sizes=SIZES, progress=None) -> list[Run]:
    cache = {}
    runs = []
    for si, (M, N, K) in enumerate(sizes):
        sz = {"M": M, "N": N, "K": K}
        for name, macro, lay in itertools.product(idiom_dags(si), MACROS, LAYOUTS):
            dag = load_dag(dags / f"{name}.json")
            ins = [random_inputs(dag, sz, s) for s in seeds]
            base = None
            for sk, (block, warp) in SPLIT_SHAPES.items():
                cfg = GenConfig(block, warp, macro, None, lay)
                key = (name, cfg)
                if key not in cache:
                    cache[key] = generate(dag, cfg)
                g = cache[key]
                t0 = time.perf_counter()
                rep, outs, _ = evaluate(g, sz, seeds)
                run = Run(name, cfg.tag(), sk, (M, N, K), {c.name: c.passed for c in rep.checks},
                          rep.worst_tolerance_ratio,
                          segments=rep.diagnostics["globalSegmentsPerWarpOp"])
                if sk == 1:
                    base = outs
                else:
                    worst = 0.0
                    for i, inp in enumerate(ins):
                        _, _, mag = oracle_fp64(g.dag, inp)
                        for t, o in outs.items():
                            ok, w = within_tolerance(o[i], base[t][i].astype(np.float64), mag[t])
                            worst = max(worst, w)
                    run.split_k_vs_one = worst
                runs.append(run)
                if progress:
                    progress(run, time.perf_counter() - t0)
    return runs
