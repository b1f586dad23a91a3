"""Sanctioned decomposition pipeline: DAG -> fused, tiled, bound, contracted schedule tree."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .config import GenConfig
from .dag import (ComputationDag, IdiomKind, build_initial_schedule, classify_idiom,
                  fuse_pointwise_chain, _upstream)
from .schedule import (Band, Filter, ScheduleTree, bind_dimensions, contract_domain, dependences_of,
                       hoist_sequence, strip_mine, tile_band, walk)


@dataclass(frozen=True)
class Stage:
    name: str
    tree: ScheduleTree


def with_layouts(dag: ComputationDag, layouts: tuple[str, str] | None) -> ComputationDag:
    """Override the storage layout of every matmul's A and B operands (and their prologue inputs)."""
    if layouts is None:
        return dag
    tensors = dict(dag.tensors)
    nodes = []
    for n in dag.nodes:
        if n.is_matmul:
            for t, lay in zip(n.inputs, layouts):
                for x in {t} | {y for nid in _upstream(dag, t) for y in (dag.node(nid).output,) + dag.node(nid).inputs}:
                    tensors[x] = replace(tensors[x], layout=lay)
            n = replace(n, layouts=tuple(layouts))
        nodes.append(n)
    nodes = [replace(n, layouts=tuple(tensors[t].layout for t in n.inputs)) if not n.is_matmul else n
             for n in nodes]
    return replace(dag, tensors=tensors, nodes=tuple(nodes))


def _filter_band_paths(tree) -> dict[str, tuple[int, ...]]:
    """Statement -> path of the first band below its filter (or the top band for single statements)."""
    out = {}
    for p, n in walk(tree):
        if isinstance(n, Filter) and isinstance(n.child, Band):
            out[n.stmts[0]] = p + (0,)
    return out


def _contract_all(tree: ScheduleTree, dag: ComputationDag, names: dict[str, str], cfg: GenConfig):
    m = cfg.macro
    for n in dag.nodes:
        s = names[n.id]
        if n.is_matmul:
            tree = contract_domain(tree, s, (m, m, 8), tuple(n.layouts[:2]))
        else:
            tree = contract_domain(tree, s, (m, m))
    return tree


def stages(dag: ComputationDag, cfg: GenConfig) -> list[Stage]:
    """Every intermediate tree of the decomposition, ending with the contracted tree."""
    from .dag import statement_names

    cfg = cfg.validated()
    dag = fuse_pointwise_chain(with_layouts(dag, cfg.layouts))
    names = statement_names(dag)
    bm, bn, bk = cfg.block
    wm, wn, wk = cfg.warp
    warp_names = ("warpIdx_y", "warpIdx_x", "warpIdx_z" if cfg.sk > 1 else None)
    tree = build_initial_schedule(dag)
    out = [Stage("initial", tree)]
    tree = tile_band(tree, (0,), (bm, bn, bk))
    out.append(Stage("block_tiled", tree))
    if len(dag.nodes) == 1:
        tree = tile_band(tree, (0, 0), (wm, wn, wk))
        out.append(Stage("warp_tiled", tree))
        tree = bind_dimensions(tree, (0,), ("blockIdx.y", "blockIdx.x"))
        tree = bind_dimensions(tree, (0, 0), warp_names)
        out.append(Stage("bound", tree))
        tree = strip_mine(tree, (0, 0, 0), 2, 8)
        out.append(Stage("strip_mined", tree))
    else:
        tree = hoist_sequence(tree, dependences_of(tree))
        out.append(Stage("hoisted", tree))
        tree = bind_dimensions(tree, (0,), ("blockIdx.y", "blockIdx.x"))
        for s, p in _filter_band_paths(tree).items():
            tree = tile_band(tree, p + (0,), (wm, wn, wk))
            tree = bind_dimensions(tree, p + (0,), warp_names)
            tree = strip_mine(tree, p + (0, 0), 2, 8)
        out.append(Stage("bound", tree))
    tree = _contract_all(tree, dag, names, cfg)
    out.append(Stage("contracted", tree))
    return out


def decompose(dag: ComputationDag, cfg: GenConfig) -> ScheduleTree:
    return stages(dag, cfg)[-1].tree


def fused_dag(dag: ComputationDag, cfg: GenConfig) -> ComputationDag:
    return fuse_pointwise_chain(with_layouts(dag, cfg.layouts))


def idiom_of(dag: ComputationDag) -> IdiomKind:
    return classify_idiom(dag)
