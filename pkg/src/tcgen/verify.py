"""Generate, simulate, compare against both oracles and collect diagnostics into a report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import GenConfig
from .dag import ComputationDag
from .generate import Generated, generate
from .oracles import TOLERANCE, oracle_exact_order, oracle_fp64, random_inputs, within_tolerance
from .simulator import Diagnostics, run_kernel


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    dag: str
    config: str
    sizes: dict
    seeds: tuple[int, ...]
    checks: list[Check] = field(default_factory=list)
    max_abs_error: float = 0.0
    worst_tolerance_ratio: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_json(self) -> str:
        doc = {"dag": self.dag, "config": self.config, "sizes": self.sizes, "seeds": list(self.seeds),
               "passed": self.passed,
               "checks": {c.name: {"passed": c.passed, "detail": c.detail} for c in self.checks},
               "maxAbsError": self.max_abs_error, "worstToleranceRatio": self.worst_tolerance_ratio,
               "tolerance": TOLERANCE, "diagnostics": self.diagnostics}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"verify {self.dag} config={self.config} sizes={self.sizes} seeds={list(self.seeds)}"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        lines.append(f"  max |run - fp64| = {self.max_abs_error:.6g}; worst error / bound = "
                     f"{self.worst_tolerance_ratio:.4f}")
        d = self.diagnostics
        lines.append(f"  bank conflict phases = {d['bankConflictPhases']}, barriers = {d['barriers']}, "
                     f"mma issues = {d['mmaIssues']}")
        lines.append(f"  global segments per warp op = {d['globalSegmentsPerWarpOp']}")
        lines.append(f"  global writes = {d['globalWrites']}")
        lines.append("RESULT " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def min_segments(row_halves: int) -> int:
    """Fewest 128-byte segments 32 lanes x 16 contiguous tile bytes can touch for a given row length."""
    span = min(2 * row_halves, 512)
    return (512 // span) * max(1, span // 128)


def expected_load_segments(g: Generated) -> dict[str, int]:
    return {f"g2r:{c.tensor}": min_segments(c.shared.cols) for c in g.plan.of("g2r")}


def evaluate(g: Generated, sizes: dict, seeds, keep_events: bool = False
             ) -> tuple[Report, dict, Diagnostics]:
    """Run every check for one generated kernel on one input set per seed."""
    g.cfg.check_sizes(sizes["M"], sizes["N"], sizes["K"])
    seeds = tuple(seeds)
    ins = [random_inputs(g.dag, sizes, s) for s in seeds]
    outs, diag = run_kernel(g.kernel, g.launch, ins, sizes, keep_events=keep_events)
    rep = Report(g.dag.name, g.cfg.tag(), dict(sizes), seeds)
    mismatches, nan, worst, max_err, tol_ok = 0, 0, 0.0, 0.0, True
    for i, inp in enumerate(ins):
        exact = oracle_exact_order(g.dag, g.cfg, inp)
        _, ref64, mag = oracle_fp64(g.dag, inp)
        for t, ref in exact.items():
            run = outs[t][i]
            nan += int(np.isnan(run).sum())
            mismatches += int((run.view(np.uint16) != ref.view(np.uint16)).sum())
            ok, w = within_tolerance(run, ref64[t], mag[t])
            tol_ok &= ok
            worst = max(worst, w)
            max_err = max(max_err, float(np.nanmax(np.abs(run.astype(np.float64) - ref64[t]))))
    d = diag.to_dict()
    produced = {n.output for n in g.dag.nodes}
    intermediates = sorted(produced - set(g.dag.live_out))
    inter_writes = {t: diag.global_writes.get(t, 0) for t in intermediates}
    stray = {t: n for t, n in diag.global_writes.items() if t not in g.dag.live_out}
    want = expected_load_segments(g)
    loads = {k: dict(v) for k, v in diag.global_segments.items() if k.startswith("g2r:")}
    coalesced = set(loads) == set(want) and all(set(loads[k]) == {n} for k, n in want.items())
    bits = {k: v for k, v in diag.global_vector_bits.items()}
    rep.checks = [
        Check("bitExact", mismatches == 0 and nan == 0, f"{mismatches} mismatching, {nan} NaN elements"),
        Check("fp64Tolerance", tol_ok, f"worst error / (2^-8 * max(|ref|, magnitude bound)) = {worst:.4f}"),
        Check("bankConflicts", diag.total_bank_conflicts == 0, f"{diag.total_bank_conflicts} conflicted phases"),
        Check("vector128", all(b == 128 for (_, b) in bits), f"{sorted({b for (_, b) in bits})} bit accesses"),
        Check("coalescedLoads", coalesced, f"segments per warp load {loads}, minimum {want}"),
        Check("splitKStores", diag.stores_from_nonzero_z == 0,
              f"{diag.stores_from_nonzero_z} global stores from warpIdx_z != 0"),
        Check("pipelineOrder", diag.raw_violations == 0 and diag.war_violations == 0
              and diag.tile_order_violations == 0,
              f"raw={diag.raw_violations} war={diag.war_violations} tile-order={diag.tile_order_violations}"),
        Check("intermediateWrites", not stray, f"writes outside live-outs {stray or 'none'}; "
                                               f"intermediates {inter_writes or 'none'}"),
    ]
    rep.max_abs_error = max_err
    rep.worst_tolerance_ratio = worst
    d["intermediateGlobalWrites"] = inter_writes
    d["sharedBytes"] = g.plan.shared_bytes()
    d["threadsPerBlock"] = g.launch.launch_bounds
    rep.diagnostics = d
    return rep, outs, diag


def verify(dag: ComputationDag, cfg: GenConfig, sizes: dict, seed: int = 0) -> Report:
    return evaluate(generate(dag, cfg), sizes, (seed,))[0]
