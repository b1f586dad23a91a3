"""Schedule trees and the tiling / binding / contraction / hoisting transformations.

Trees are immutable. Every transformation takes a tree and a node path (tuple
of child indices from the root) and returns a new tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import gcd
from typing import Iterator, Mapping, Sequence as Seq, Union

import numpy as np

from .affine import Aff, divisors_of, lcm_all, value_range
from .exprtree import Access, Expr, compound_name

PAR, SEQ, RED = "par", "seq", "red"

BLOCK_NAMES = ("blockIdx.y", "blockIdx.x")
WARP_NAMES = ("warpIdx_y", "warpIdx_x", "warpIdx_z")
KERNEL_NAMES = BLOCK_NAMES + WARP_NAMES


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StmtDomain:
    name: str
    dims: tuple[str, ...]
    uppers: tuple[Union[str, int], ...]
    strides: tuple[int, ...] = ()
    expr: Expr | None = None
    write: Access | None = None

    def __post_init__(self):
        if not self.strides:
            object.__setattr__(self, "strides", (1,) * len(self.dims))

    def head(self) -> str:
        return f"{self.name}[{', '.join(self.dims)}]"

    def render(self) -> str:
        parts = [f"0 ≤ {d} < {u}" for d, u in zip(self.dims, self.uppers)]
        parts += [f"{s}⌊{d}/{s}⌋ = {d}" for d, s in zip(self.dims, self.strides) if s > 1]
        return f"{self.head()} : " + " ∧ ".join(parts)

    def points(self, params: Mapping[str, int]) -> dict[str, np.ndarray]:
        axes = []
        for u, s in zip(self.uppers, self.strides):
            hi = params[u] if isinstance(u, str) else u
            axes.append(np.arange(0, hi, s, dtype=np.int64))
        grids = np.meshgrid(*axes, indexing="ij")
        return {d: g.ravel() for d, g in zip(self.dims, grids)}


@dataclass(frozen=True)
class Band:
    sched: tuple[tuple[str, tuple[Aff, ...]], ...]
    kinds: tuple[str, ...]
    bound: tuple[str | None, ...] = ()
    child: "TreeNode | None" = None

    def __post_init__(self):
        n = len(self.kinds)
        if not self.bound:
            object.__setattr__(self, "bound", (None,) * n)
        for s, exprs in self.sched:
            if len(exprs) != n:
                raise ScheduleError(f"band vector for {s} has {len(exprs)} members, expected {n}")

    @property
    def ndim(self) -> int:
        return len(self.kinds)

    def stmts(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.sched)

    def exprs(self, stmt: str) -> tuple[Aff, ...]:
        return dict(self.sched)[stmt]


@dataclass(frozen=True)
class Sequence:
    children: tuple["TreeNode", ...]


@dataclass(frozen=True)
class Filter:
    stmts: tuple[str, ...]
    child: "TreeNode | None" = None


@dataclass(frozen=True)
class Copy:
    """Data-movement statement placed in the tree; ``payload`` is the planner's copy plan."""

    label: str
    payload: object = None
    shift: int = 0


@dataclass(frozen=True)
class Mark:
    label: str
    child: "TreeNode | None" = None


@dataclass(frozen=True)
class Domain:
    stmts: tuple[StmtDomain, ...]
    params: tuple[str, ...] = ("M", "N", "K")
    child: "TreeNode | None" = None

    def stmt(self, name: str) -> StmtDomain:
        for s in self.stmts:
            if s.name == name:
                return s
        raise KeyError(name)


TreeNode = Union[Band, Sequence, Filter, Copy, Mark, Domain]
ScheduleTree = Domain


# navigation ---------------------------------------------------------------

def children(node) -> tuple:
    if isinstance(node, Sequence):
        return node.children
    if isinstance(node, Copy) or node is None:
        return ()
    return () if node.child is None else (node.child,)


def with_children(node, kids: tuple):
    if isinstance(node, Sequence):
        return Sequence(tuple(kids))
    if isinstance(node, Copy):
        return node
    return replace(node, child=kids[0] if kids else None)


def node_at(tree, path: Seq[int]):
    node = tree
    for i in path:
        kids = children(node)
        if i >= len(kids):
            raise ScheduleError(f"invalid path {tuple(path)}")
        node = kids[i]
    return node


def replace_at(tree, path: Seq[int], new):
    if not path:
        return new
    kids = list(children(tree))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(tree, tuple(kids))


def walk(tree, path=()) -> Iterator[tuple[tuple[int, ...], object]]:
    yield path, tree
    for i, ch in enumerate(children(tree)):
        yield from walk(ch, path + (i,))


def band_paths(tree) -> list[tuple[int, ...]]:
    return [p for p, n in walk(tree) if isinstance(n, Band)]


def ancestors(tree, path) -> list:
    out = []
    node = tree
    for i in path:
        out.append(node)
        node = children(node)[i]
    return out


def innermost_band_path(tree, stmt: str) -> tuple[int, ...]:
    best = None
    for p, n in walk(tree):
        if isinstance(n, Band) and stmt in n.stmts():
            if best is None or len(p) > len(best):
                best = p
    if best is None:
        raise ScheduleError(f"no band schedules {stmt}")
    return best


def _band_at(tree, path) -> Band:
    node = node_at(tree, path)
    if not isinstance(node, Band):
        raise ScheduleError(f"node at {tuple(path)} is {type(node).__name__}, not a band")
    return node


def expr_extent(e: Aff) -> int | None:
    """Number of distinct values of a single-variable point expression over one period."""
    vs = e.variables()
    if not vs:
        return 1
    if len(vs) != 1 or not e.floors:
        return None
    (v,) = vs
    period = lcm_all(divisors_of(e))
    lo, hi, step = value_range(e, v, period)
    return (hi - lo) // step + 1 if step else 1


# transformations ----------------------------------------------------------

def tile_band(tree: ScheduleTree, path, sizes: Seq[int]) -> ScheduleTree:
    band = _band_at(tree, path)
    if len(sizes) != band.ndim:
        raise ScheduleError(f"{len(sizes)} tile sizes for a {band.ndim}-d band")
    if any(t <= 0 for t in sizes):
        raise ScheduleError(f"tile sizes must be positive: {tuple(sizes)}")
    if any(b is not None for b in band.bound):
        raise ScheduleError("cannot tile a band with bound members")
    outer, inner = [], []
    for s, exprs in band.sched:
        o = tuple(e.floordiv(t) for e, t in zip(exprs, sizes))
        outer.append((s, o))
        inner.append((s, tuple(e - q * t for e, q, t in zip(exprs, o, sizes))))
    new = Band(tuple(outer), band.kinds, (), Band(tuple(inner), band.kinds, (), band.child))
    return replace_at(tree, path, new)


def strip_mine(tree: ScheduleTree, path, dim: int, strip: int) -> ScheduleTree:
    band = _band_at(tree, path)
    if not 0 <= dim < band.ndim:
        raise ScheduleError(f"dim {dim} out of range for a {band.ndim}-d band")
    if band.kinds[dim] == PAR:
        raise ScheduleError("strip-mining applies to sequential band members")
    if strip <= 0:
        raise ScheduleError("strip size must be positive")
    zero = Aff()
    outer, inner = [], []
    for s, exprs in band.sched:
        e = exprs[dim]
        ext = expr_extent(e)
        if ext is not None and ext % strip:
            raise ScheduleError(f"strip {strip} does not divide tile extent {ext} of {e} for {s}")
        q = e.floordiv(strip)
        outer.append((s, tuple(q if d == dim else zero for d in range(band.ndim))))
        inner.append((s, tuple(e - q * strip if d == dim else x for d, x in enumerate(exprs))))
    new = Band(tuple(outer), band.kinds, (), replace(band, sched=tuple(inner)))
    return replace_at(tree, path, new)


def _names_on_paths_through(tree, path) -> set[str]:
    names: set[str] = set()
    for node in ancestors(tree, path):
        if isinstance(node, Band):
            names |= {b for b in node.bound if b}
    for p, node in walk(node_at(tree, path)):
        if p and isinstance(node, Band):
            names |= {b for b in node.bound if b}
    return names


def bind_dimensions(tree: ScheduleTree, path, names: Seq[str | None]) -> ScheduleTree:
    band = _band_at(tree, path)
    names = list(names) + [None] * (band.ndim - len(names))
    if len(names) != band.ndim:
        raise ScheduleError(f"{len(names)} names for a {band.ndim}-d band")
    if all(n is None for n in names):
        return tree
    taken = _names_on_paths_through(tree, path) | {b for b in band.bound if b}
    given = [n for n in names if n]
    if len(set(given)) != len(given):
        raise ScheduleError(f"duplicate kernel parameter in {names}")
    kinds = list(band.kinds)
    bound = list(band.bound)
    for d, n in enumerate(names):
        if n is None:
            continue
        if n not in KERNEL_NAMES:
            raise ScheduleError(f"unknown kernel parameter {n!r}")
        if n in taken:
            raise ScheduleError(f"kernel parameter {n} already bound on this path")
        if kinds[d] != PAR:
            if n != "warpIdx_z":
                raise ScheduleError(f"cannot bind sequential dim {d} to {n}")
            kinds[d] = RED
        bound[d] = n
    return replace_at(tree, path, replace(band, kinds=tuple(kinds), bound=tuple(bound)))


def contract_domain(tree: ScheduleTree, stmt: str, factors: Seq[int],
                    layouts: tuple[str, str] = ("row", "col")) -> ScheduleTree:
    sd = tree.stmt(stmt)
    if len(factors) != len(sd.dims):
        raise ScheduleError(f"{len(factors)} factors for {len(sd.dims)}-d statement {stmt}")
    if all(f == 1 for f in factors):
        return tree
    band = node_at(tree, innermost_band_path(tree, stmt))
    for d, f in zip(sd.dims, factors):
        if f <= 0:
            raise ScheduleError("contraction factors must be positive")
        if f == 1:
            continue
        for e in band.exprs(stmt):
            if d in e.variables():
                ext = expr_extent(e)
                if ext is not None and ext % f:
                    raise ScheduleError(f"extent {ext} of {e} not divisible by factor {f}")
    strides = tuple(s * f // gcd(s, f) for s, f in zip(sd.strides, factors))
    expr = sd.expr
    if expr is not None:
        if expr.op == "mul_acc":
            shape = "m{}n{}k{}".format(*factors)
            expr = Expr("macro_mma", expr.args, (shape, layouts[0], layouts[1]))
        elif expr.op not in ("macro_mma", "fragment_pointwise"):
            expr = Expr("fragment_pointwise", (expr,), (compound_name(expr) or expr.op,))
    new_sd = replace(sd, strides=strides, expr=expr)
    return replace(tree, stmts=tuple(new_sd if s.name == stmt else s for s in tree.stmts))


def _restrict(band: Band, stmts: Seq[str], child) -> Band:
    return replace(band, sched=tuple((s, e) for s, e in band.sched if s in stmts), child=child)


def hoist_sequence(tree: ScheduleTree, deps: "DependenceSet | None" = None) -> ScheduleTree:
    """Split the band chain above a sequence so only parallel dims stay above it."""
    seq_path = next((p for p, n in walk(tree) if isinstance(n, Sequence)), None)
    if seq_path is None:
        return tree
    chain = []
    p = seq_path
    while p and isinstance(node_at(tree, p[:-1]), Band):
        p = p[:-1]
        chain.insert(0, p)
    bands = [node_at(tree, q) for q in chain]
    first = next((i for i, b in enumerate(bands) if any(k != PAR for k in b.kinds)), None)
    if first is None:
        return tree
    b0 = bands[first]
    split = next(d for d, k in enumerate(b0.kinds) if k != PAR)
    pushed: list[Band] = []
    if split < b0.ndim:
        pushed.append(Band(tuple((s, e[split:]) for s, e in b0.sched), b0.kinds[split:], b0.bound[split:]))
    pushed += bands[first + 1:]
    seq = node_at(tree, seq_path)
    new_kids = []
    for ch in seq.children:
        if not isinstance(ch, Filter):
            raise ScheduleError("hoisting expects filter children under the sequence")
        sub = ch.child
        for b in reversed(pushed):
            sub = _restrict(b, ch.stmts, sub)
        new_kids.append(Filter(ch.stmts, sub))
    top: object = Sequence(tuple(new_kids))
    if split > 0:
        top = Band(tuple((s, e[:split]) for s, e in b0.sched), b0.kinds[:split], b0.bound[:split], top)
    out = replace_at(tree, chain[first], top)
    if deps is not None:
        rep = check_legality(out, deps)
        if not rep.ok:
            raise ScheduleError(f"hoisting violates dependences: {rep.violations}")
    return out


def shift_for_prefetch(tree: ScheduleTree, copy_paths: Seq[Seq[int]], shift: int) -> ScheduleTree:
    """Mark copies to run ``shift`` k-tiles ahead of the compute that consumes them.

    Only a single stage is supported: the shared tile is single-buffered, so
    register->shared copies of the shifted group are moved after the compute
    of their k-tile iteration.
    """
    if shift <= 0:
        raise ScheduleError(f"prefetch shift must be positive, got {shift}")
    if shift != 1:
        raise ScheduleError("only a one-stage prefetch is supported with a single shared buffer")
    for p in copy_paths:
        node = node_at(tree, p)
        if not isinstance(node, Copy):
            raise ScheduleError(f"node at {tuple(p)} is not a copy")
        if not any(isinstance(a, Band) and any(k == SEQ for k in a.kinds) for a in ancestors(tree, p)):
            raise ScheduleError(f"copy at {tuple(p)} is not inside a k-tile loop")
    for p in copy_paths:
        tree = replace_at(tree, p, replace(node_at(tree, p), shift=shift))
    # register->shared copies go after the compute in their sequence
    for p, node in list(walk(tree)):
        if isinstance(node, Sequence):
            kids = list(node.children)
            moved = [k for k in kids if isinstance(k, Copy) and k.shift and k.label.startswith("r2s")]
            if moved:
                rest = [k for k in kids if k not in moved]
                tree = replace_at(tree, p, Sequence(tuple(rest + moved)))
    return tree


# dependences and legality ---------------------------------------------------

@dataclass(frozen=True)
class Dependence:
    src: str
    sink: str
    kind: str  # "reduction" (carried by dim) or "raw"
    dim: str | None = None


@dataclass(frozen=True)
class DependenceSet:
    relations: tuple[Dependence, ...]


def dependences_of(tree: ScheduleTree) -> DependenceSet:
    """Intra-statement reduction dependences plus RAW edges between statements."""
    rel = []
    writers: dict[str, str] = {}
    for sd in tree.stmts:
        if sd.expr is not None and sd.expr.op in ("mul_acc", "macro_mma"):
            red = [d for d in sd.dims if d not in sd.expr.args[0].index]
            rel.append(Dependence(sd.name, sd.name, "reduction", red[0]))
        if sd.write is not None:
            writers[sd.write.tensor] = sd.name
    for sd in tree.stmts:
        if sd.expr is None:
            continue
        leaves = sd.expr.leaves() if isinstance(sd.expr, Expr) else []
        for leaf in leaves:
            w = writers.get(leaf.tensor)
            if w is not None and w != sd.name:
                rel.append(Dependence(w, sd.name, "raw"))
    return DependenceSet(tuple(rel))


@dataclass
class LegalityReport:
    checked: int = 0
    violations: list[tuple[str, str, str, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _stamp_entries(tree) -> dict[str, list[tuple]]:
    out: dict[str, list[tuple]] = {s.name: [] for s in tree.stmts}

    def rec(node, path, active):
        if node is None:
            return
        if isinstance(node, Domain):
            rec(node.child, path + (0,), active)
        elif isinstance(node, Band):
            for s in node.stmts():
                if s in active:
                    for d, (e, k) in enumerate(zip(node.exprs(s), node.kinds)):
                        out[s].append((("band", path, d), k, e))
            rec(node.child, path + (0,), active)
        elif isinstance(node, Sequence):
            for i, ch in enumerate(node.children):
                below = _stmts_below(ch, active)
                for s in below:
                    out[s].append((("seq", path), SEQ, i))
                rec(ch, path + (i,), below)
        elif isinstance(node, (Filter,)):
            rec(node.child, path + (0,), active & set(node.stmts))
        elif isinstance(node, Mark):
            rec(node.child, path + (0,), active)

    rec(tree, (), {s.name for s in tree.stmts})
    return out


def _stmts_below(node, active) -> set[str]:
    if isinstance(node, Filter):
        return active & set(node.stmts)
    if isinstance(node, Copy):
        return set()
    if isinstance(node, Sequence):
        out: set[str] = set()
        for ch in node.children:
            out |= _stmts_below(ch, active)
        return out
    return set(active)


def _eval_entries(entries, env, n):
    vals = []
    for key, kind, e in entries:
        if key[0] == "seq":
            vals.append((key, kind, np.full(n, e, dtype=np.int64)))
        else:
            v = e.evaluate(env)
            vals.append((key, kind, np.broadcast_to(np.asarray(v, dtype=np.int64), (n,))))
    return vals


def default_params(tree) -> dict[str, int]:
    """Parameter values that are multiples of every tile divisor involving them.

    An untiled dimension gets 2 rather than 1 so carried dependences have at least one instance.
    """
    per: dict[str, list[int]] = {p: [1] for p in tree.params}
    owner: dict[tuple[str, str], str] = {}
    for sd in tree.stmts:
        for d, u, st in zip(sd.dims, sd.uppers, sd.strides):
            if isinstance(u, str):
                owner[(sd.name, d)] = u
                per[u].append(st)
    for _, node in walk(tree):
        if isinstance(node, Band):
            for s, exprs in node.sched:
                for e in exprs:
                    divs = divisors_of(e)
                    for v in e.variables():
                        p = v if v in per else owner.get((s, v))
                        if p:
                            per[p].extend(divs)
    return {p: max(2, lcm_all(v)) for p, v in per.items()}


def timestamps(tree, stmt: str, params: Mapping[str, int] | None = None) -> np.ndarray:
    params = dict(params or default_params(tree))
    sd = tree.stmt(stmt)
    env = dict(params)
    pts = sd.points(params)
    env.update(pts)
    n = len(next(iter(pts.values())))
    vals = _eval_entries(_stamp_entries(tree)[stmt], env, n)
    return np.stack([v for _, _, v in vals], axis=1) if vals else np.zeros((n, 0), np.int64)


def check_legality(tree: ScheduleTree, deps: DependenceSet,
                   params: Mapping[str, int] | None = None) -> LegalityReport:
    params = dict(params or default_params(tree))
    entries = _stamp_entries(tree)
    rep = LegalityReport()
    for dep in deps.relations:
        src_sd, sink_sd = tree.stmt(dep.src), tree.stmt(dep.sink)
        pts = src_sd.points(params)
        if dep.kind == "reduction":
            d = src_sd.dims.index(dep.dim)
            step = src_sd.strides[d]
            hi = params[src_sd.uppers[d]] if isinstance(src_sd.uppers[d], str) else src_sd.uppers[d]
            keep = pts[dep.dim] + step < hi
            src_env = {k: v[keep] for k, v in pts.items()}
            sink_env = dict(src_env)
            sink_env[dep.dim] = src_env[dep.dim] + step
        else:
            src_env = pts
            sink_env = {}
            for d, st in zip(sink_sd.dims, sink_sd.strides):
                if d not in pts:
                    raise ScheduleError(f"RAW sink {dep.sink} dim {d} not shared with {dep.src}")
                sink_env[d] = (pts[d] // st) * st
        n = len(next(iter(src_env.values())))
        a = _eval_entries(entries[dep.src], {**params, **src_env}, n)
        b = _eval_entries(entries[dep.sink], {**params, **sink_env}, n)
        undecided = np.ones(n, dtype=bool)
        bad = np.zeros(n, dtype=bool)
        for (ka, kind, va), (kb, _, vb) in zip(a, b):
            if ka != kb:
                break
            diff = vb - va
            hit = undecided & (diff != 0)
            if kind == SEQ:
                bad |= hit & (diff < 0)
            elif kind == PAR:
                bad |= hit
            elif kind == RED and dep.kind != "reduction":
                bad |= hit
            undecided &= diff == 0
        bad |= undecided
        rep.checked += n
        cnt = int(bad.sum())
        if cnt:
            rep.violations.append((dep.src, dep.sink, dep.kind, cnt))
    return rep


# rendering ------------------------------------------------------------------

def _render_band(tree: Domain, band: Band) -> str:
    parts = []
    for s, exprs in band.sched:
        sd = tree.stmt(s)
        order = list(sd.dims) + list(tree.params)
        items = [b if b else e.render(order) for e, b in zip(exprs, band.bound)]
        parts.append(f"{sd.head()} → [{', '.join(items)}]")
    return "BAND: " + "; ".join(parts)


def render_tree(tree: ScheduleTree) -> str:
    lines: list[str] = []

    def rec(node, depth):
        pad = "  " * depth
        if isinstance(node, Domain):
            lines.append(pad + "DOMAIN: " + "; ".join(s.render() for s in node.stmts))
        elif isinstance(node, Band):
            lines.append(pad + _render_band(tree, node))
        elif isinstance(node, Sequence):
            lines.append(pad + "SEQUENCE")
        elif isinstance(node, Filter):
            lines.append(pad + "FILTER: " + "; ".join(tree.stmt(s).head() for s in node.stmts))
        elif isinstance(node, Copy):
            lines.append(pad + f"COPY: {node.label}" + (f" [shift {node.shift}]" if node.shift else ""))
        elif isinstance(node, Mark):
            lines.append(pad + f"MARK: {node.label}")
        for ch in children(node):
            rec(ch, depth + 1)

    rec(tree, 0)
    return "\n".join(lines) + "\n"
