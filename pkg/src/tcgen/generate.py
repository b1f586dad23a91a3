"""End-to-end generation: DAG + config -> schedule, plans, kernel IR, launch and CUDA text."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .codegen import LaunchConfig, emit_source, infer_launch_config, lower_to_ir
from .config import GenConfig
from .dag import ComputationDag, IdiomKind, classify_idiom
from .ir import Kernel, dump
from .pipeline import Stage, fused_dag, stages, with_layouts
from .planner import KernelPlan, dump_plans, insert_copies, make_plans
from .schedule import ScheduleTree, render_tree


@dataclass
class Generated:
    dag: ComputationDag  # layouts already overridden by the config
    fused: ComputationDag
    cfg: GenConfig
    idiom: IdiomKind
    stages: list[Stage]
    plan: KernelPlan
    tree: ScheduleTree  # contracted tree with copy nodes
    kernel: Kernel
    launch: LaunchConfig

    @property
    def source(self) -> str:
        return emit_source(self.kernel, self.launch)

    def summary(self) -> str:
        c = self.cfg
        return (f"{self.dag.name}: idiom={self.idiom.value} block={c.block} warp={c.warp} macro=m{c.macro}n{c.macro}k8 "
                f"split-k={c.sk} prefetch={'on' if c.prefetch else 'off'} threads={self.launch.launch_bounds} "
                f"shared={self.plan.shared_bytes()}B")


def generate(dag: ComputationDag, cfg: GenConfig, name: str = "kern0") -> Generated:
    cfg = cfg.validated()
    idiom = classify_idiom(dag)
    st = stages(dag, cfg)
    fd = fused_dag(dag, cfg)
    plan = make_plans(fd, st[-1].tree, idiom, cfg)
    tree = insert_copies(st[-1].tree, plan)
    kernel = lower_to_ir(tree, plan, fd, name)
    return Generated(with_layouts(dag, cfg.layouts), fd, cfg, idiom, st, plan, tree, kernel,
                     infer_launch_config(tree))


def write_artifacts(g: Generated, out_dir: Path, name: str, dump_plans_too: bool = False) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {f"{name}.cu": g.source, f"{name}.ir.txt": dump(g.kernel),
             f"{name}.launch.json": json.dumps(g.launch.to_json(), indent=2, sort_keys=True) + "\n"}
    if dump_plans_too:
        files[f"{name}.plans.txt"] = dump_plans(g.plan) + "\n" + render_tree(g.tree)
    paths = []
    for fn, text in files.items():
        p = out_dir / fn
        p.write_text(text)
        paths.append(p)
    return paths
