"""Memory planning: access projection, shared/register promotion, swizzles and copy insertion.

Shared tiles are stored in *storage orientation*: the dimension that a
fragment load reads contiguously is innermost. That is k for A row-major and
B col-major operands, and m (resp. n) for A col-major and B row-major ones.
Every shared row is a whole number of 8-half (16-byte) vectors and a swizzle
permutes vector slots within the tile.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .affine import Aff
from .banks import conflict_phases
from .config import GenConfig
from .dag import ComputationDag, IdiomKind, statement_names
from .exprtree import Access, Expr
from .layout import WARP, macro_owner_map
from .schedule import (Band, Copy, Filter, Sequence, ScheduleTree, SEQ, node_at, replace_at,
                       shift_for_prefetch, walk)

VEC = 8  # fp16 elements per 128-bit vector
SCRATCH_HALVES_PER_WARP = 256  # 512 bytes: one 16x16 fp16 tile


class PlannerError(ValueError):
    pass


# schedule paths -------------------------------------------------------------------

@dataclass(frozen=True)
class PathDim:
    pos: int
    name: str  # bound kernel parameter or positional c<pos>
    expr: Aff
    kind: str
    bound: str | None


def path_dims(tree: ScheduleTree, stmt: str) -> list[PathDim]:
    """Band dimensions scheduling ``stmt`` from the root down, numbered positionally."""
    out: list[PathDim] = []
    node = tree.child
    while node is not None:
        if isinstance(node, Band):
            if stmt in node.stmts():
                for d, e in enumerate(node.exprs(stmt)):
                    pos = len(out)
                    b = node.bound[d]
                    out.append(PathDim(pos, b or f"c{pos}", e, node.kinds[d], b))
            node = node.child
        elif isinstance(node, Sequence):
            node = next((ch for ch in node.children if _schedules(ch, stmt)), None)
        elif isinstance(node, Filter):
            node = node.child if stmt in node.stmts else None
        elif isinstance(node, Copy):
            node = None
        else:
            node = node.child
    return out


def _schedules(node, stmt) -> bool:
    for _, n in walk(node):
        if isinstance(n, Filter) and stmt in n.stmts:
            return True
        if isinstance(n, Band) and stmt in n.stmts():
            return True
    return False


def granularity(e: Aff, var: str) -> int | None:
    """Weight of a band member in the reconstruction of ``var``; None if it does not involve it."""
    if var not in e.variables():
        return None
    if any(n == var and c for n, c in e.terms):
        return 1
    ds = [f.divisor for f, c in e.floors if c > 0 and var in f.inner.variables()]
    return min(ds)


def reconstruct(dims: list[PathDim], var: str, upto: int | None = None) -> list[tuple[int, str]]:
    """(weight, dim name) pairs whose weighted sum equals ``var`` (levels below ``upto`` only)."""
    out = []
    for d in dims:
        if upto is not None and d.pos >= upto:
            break
        g = granularity(d.expr, var)
        if g is not None:
            out.append((g, d.name))
    return out


# data tiles ---------------------------------------------------------------------

@dataclass(frozen=True)
class DataTile:
    dataspace: str
    level: str  # block | warp | fragment
    origin: tuple[Aff, ...]
    extents: tuple[int, ...]

    def render(self) -> str:
        o = ", ".join(x.render() for x in self.origin)
        return f"{self.dataspace}[{' x '.join(map(str, self.extents))}] @ ({o})"


LEVEL_KEEP = {"block": 3, "warp": 9, "fragment": 12}


def project_access(tree: ScheduleTree, stmt: str, access: Access, level: str) -> DataTile:
    """Image of ``access`` for fixed values of the outer ``level`` band dims."""
    keep = LEVEL_KEEP[level]
    dims = path_dims(tree, stmt)
    sd = tree.stmt(stmt)
    strides = dict(zip(sd.dims, sd.strides))
    origin, ext = [], []
    for v in access.index:
        kept = reconstruct(dims, v, keep)
        inner = [g for g, _ in reconstruct(dims, v) if True][len(kept):]
        o = Aff()
        for g, name in kept:
            o = o + Aff.var(name) * g
        if not kept:
            raise PlannerError(f"{access.render()} is not tiled at {level} level")
        extent = min(g for g, _ in kept)
        if level == "fragment":
            extent = strides.get(v, 1)
        elif inner and extent % min(inner):
            raise PlannerError(f"non-rectangular image for {access.render()} at {level} level")
        origin.append(o)
        ext.append(extent)
    return DataTile(access.tensor, level, tuple(origin), tuple(ext))


# shared tiles and swizzles ------------------------------------------------------------

@dataclass(frozen=True)
class SharedTile:
    name: str
    tensor: str
    role: str
    layout: str
    rows: int
    cols: int
    offset: int = 0  # halves within the arena

    @property
    def vpr(self) -> int:
        return self.cols // VEC

    @property
    def halves(self) -> int:
        return self.rows * self.cols


def storage_shape(role: str, layout: str, mn: int, kt: int) -> tuple[int, int]:
    if (role, layout) in (("A", "row"), ("B", "col")):
        return mn, kt
    return kt, mn


@dataclass(frozen=True)
class SwizzleFunction:
    """slot = row * vpr + (vcol XOR h(row)); output bit b of h copies row bit ``select[b]``."""

    rows: int
    vpr: int
    select: tuple[int | None, ...]

    def h(self, row):
        row = np.asarray(row)
        out = np.zeros_like(row)
        for b, s in enumerate(self.select):
            if s is not None:
                out = out | (((row >> s) & 1) << b)
        return out

    def __call__(self, row, vcol):
        return swizzle_offset(self, row, vcol)

    def is_identity(self) -> bool:
        return all(s is None for s in self.select)

    def c_expr(self, row: str = "row") -> str:
        parts = []
        for b, s in enumerate(self.select):
            if s is None:
                continue
            t = f"(({row} >> {s}) & 1)"
            parts.append(t if b == 0 else f"({t} << {b})")
        return " | ".join(parts) if parts else "0"

    def describe(self) -> str:
        bits = ",".join("-" if s is None else str(s) for s in self.select)
        return f"xor-swizzle rows={self.rows} vpr={self.vpr} h-bits=[{bits}]"


def swizzle_offset(f: SwizzleFunction, row, vcol):
    row = np.asarray(row)
    vcol = np.asarray(vcol)
    if np.any((row < 0) | (row >= f.rows)) or np.any((vcol < 0) | (vcol >= f.vpr)):
        raise PlannerError(f"swizzle index out of range: rows<{f.rows}, vpr<{f.vpr}")
    return row * f.vpr + (vcol ^ f.h(row))


def _log2(x: int) -> int:
    if x <= 0 or x & (x - 1):
        raise PlannerError(f"{x} is not a power of two")
    return x.bit_length() - 1


def default_swizzle(rows: int, vpr: int) -> SwizzleFunction:
    nb = _log2(vpr)
    rb = _log2(rows)
    return SwizzleFunction(rows, vpr, tuple(b if b < rb else None for b in range(nb)))


def identity_swizzle(rows: int, vpr: int) -> SwizzleFunction:
    return SwizzleFunction(rows, vpr, (None,) * _log2(vpr))


def swizzle_candidates(rows: int, vpr: int):
    """Deterministic candidate order, starting with the row-mod-vpr default."""
    nb, rb = _log2(vpr), _log2(rows)
    opts = []
    for b in range(nb):
        o = ([b] if b < rb else []) + [None] + [x for x in range(rb) if x != b]
        opts.append(o)
    for sel in itertools.product(*opts):
        used = [s for s in sel if s is not None]
        if len(used) == len(set(used)):
            yield SwizzleFunction(rows, vpr, tuple(sel))


# fragment access patterns ------------------------------------------------------------

def _storage_coords(role: str, layout: str, r, c):
    """Logical (r, c) of an operand element -> storage (row, col) of its shared tile."""
    if (role, layout) in (("A", "row"), ("B", "col")):
        return (r, c) if role == "A" else (c, r)
    return (c, r) if role == "A" else (r, c)


@lru_cache(maxsize=None)
def fragment_chunks(role: str, layout: str, macro: int) -> tuple[int, np.ndarray]:
    """Split each thread's fragment into contiguous shared reads.

    Returns (chunk length in halves, offsets of shape (32, n_chunks, 2)) where
    offsets are storage (row, col) of each chunk's first element relative to
    the fragment's storage origin. Chunk j covers slots j*len .. j*len+len-1.
    """
    om = macro_owner_map(macro, role, layout)
    r, c = om.index_tables()
    sr, sc = _storage_coords(role, layout, r, c)
    L = om.frag_len
    for n in (8, 4):
        rr = sr.reshape(WARP, L // n, n)
        cc = sc.reshape(WARP, L // n, n)
        if np.all(rr == rr[..., :1]) and np.all(cc == cc[..., :1] + np.arange(n)) and np.all(cc[..., 0] % n == 0):
            return n, np.stack([rr[..., 0], cc[..., 0]], axis=-1)
    raise PlannerError(f"fragment of {role} {layout} has no contiguous chunking")


def fragment_origins(role: str, layout: str, cfg: GenConfig) -> list[tuple[int, int]]:
    """Storage origins of every fragment load of one k-tile, over all warps."""
    wm, wn, wk = cfg.warp
    fm = cfg.macro
    span, nwarps = (wm, cfg.warps_m) if role == "A" else (wn, cfg.warps_n)
    out = []
    for w in range(nwarps):
        for z in range(cfg.sk):
            for s in range(wk // 8):
                for f in range(span // fm):
                    mn, k = w * span + fm * f, z * wk + 8 * s
                    out.append((mn, k) if (role, layout) in (("A", "row"), ("B", "col")) else (k, mn))
    return out


def store_pattern(tile: SharedTile, swz: SwizzleFunction, threads: int) -> np.ndarray:
    """Byte addresses (ops, 32) of the register->shared vector stores."""
    nv = tile.halves // VEC
    v = np.arange(nv).reshape(-1, WARP)
    row, vcol = v // tile.vpr, v % tile.vpr
    return swizzle_offset(swz, row, vcol) * 16


def load_pattern(tile: SharedTile, swz: SwizzleFunction, cfg: GenConfig) -> tuple[int, np.ndarray]:
    """(width bytes, byte addresses (ops, 32)) of the shared->fragment loads."""
    n, off = fragment_chunks(tile.role, tile.layout, cfg.macro)
    org = np.array(fragment_origins(tile.role, tile.layout, cfg))  # (F, 2)
    rows = org[:, None, None, 0] + off[None, ..., 0]  # (F, 32, nch)
    cols = org[:, None, None, 1] + off[None, ..., 1]
    addr = swizzle_offset(swz, rows, cols // VEC) * 16 + (cols % VEC) * 2
    return n * 2, np.moveaxis(addr, 2, 1).reshape(-1, WARP)


def count_conflicts(tile: SharedTile, swz: SwizzleFunction, cfg: GenConfig) -> tuple[int, int]:
    """(store conflict phases, load conflict phases) over one k-tile."""
    w, la = load_pattern(tile, swz, cfg)
    st = store_pattern(tile, swz, cfg.threads)
    return int(conflict_phases(st, 16).sum()), int(conflict_phases(la, w).sum())


@lru_cache(maxsize=None)
def _search(role, layout, rows, cols, cfg: GenConfig) -> SwizzleFunction:
    tile = SharedTile("probe", "", role, layout, rows, cols)
    for cand in swizzle_candidates(rows, tile.vpr):
        w, la = load_pattern(tile, cand, cfg)
        if conflict_phases(la, w).any():
            continue
        if conflict_phases(store_pattern(tile, cand, cfg.threads), 16).any():
            continue
        return cand
    raise PlannerError(f"no conflict-free swizzle for {role} {layout} tile {rows}x{cols}")


def choose_swizzle(tile: SharedTile, cfg: GenConfig) -> SwizzleFunction:
    _log2(tile.vpr)
    _log2(tile.rows)
    key = replace(cfg, layouts=None)
    return _search(tile.role, tile.layout, tile.rows, tile.cols, key)


# accumulator reorder through shared scratch -----------------------------------------

def scratch_slot(t):
    """16-byte scratch unit that holds reader thread ``t``'s row segment."""
    t = np.asarray(t)
    return (t & 24) | ((t + 2 * ((t >> 3) & 1)) & 7)


REORDER_OUT = (0, 1, 4, 5, 2, 3, 6, 7)  # read-back order -> contiguous columns


def reorder_store_units() -> tuple[np.ndarray, np.ndarray]:
    """For each writer lane and each of its two 4-half stores: (reader unit, half)."""
    t = np.arange(WARP)
    q, l, hi = (t // 4) % 4, t % 4, t >= 16
    unit = 4 * q + l % 2 + 16 * hi
    return np.stack([unit, unit + 2], axis=1), np.stack([l // 2, l // 2], axis=1)


def reorder_store_pattern() -> np.ndarray:
    """Byte addresses (2, 32) of the two 8-byte scratch stores."""
    unit, half = reorder_store_units()
    return (scratch_slot(unit) * 16 + half * 8).T


def reorder_load_pattern() -> np.ndarray:
    return (scratch_slot(np.arange(WARP)) * 16)[None, :]


@lru_cache(maxsize=None)
def reorder_positions(macro: int) -> np.ndarray:
    """(32, chunks, 2): (row, col) of each thread's 8 contiguous values after the reorder."""
    t = np.arange(WARP)
    q, l, hi = (t // 4) % 4, t % 4, (t >= 16).astype(int)
    row = 8 * (q % 2) + l + 4 * hi
    col = 8 * (q // 2)
    base = np.stack([row, col], axis=-1)[:, None, :]
    if macro == 16:
        return base
    subs = [(16 * ah, 16 * bh) for ah in range(2) for bh in range(2)]
    return np.concatenate([base + np.array(s) for s in subs], axis=1)


# copy plans ----------------------------------------------------------------------

@dataclass(frozen=True)
class CopyPlan:
    kind: str  # g2r | r2s | s2f | reorder | f2g | g2f
    stmt: str
    tensor: str
    role: str
    layout: str
    buffer: str  # register/fragment buffer written (g2r, s2f, reorder, g2f) or read (r2s, f2g)
    tile: DataTile | None = None
    shared: SharedTile | None = None
    vectors_per_thread: int = 1
    width_bits: int = 128
    distribution: str = "per-warp"
    swizzle: SwizzleFunction | None = None
    fused_pointwise: Expr | None = None
    sources: tuple[str, ...] = ()
    split_k: int = 1
    macro: int = 16
    ld: str = ""
    source: str = ""  # accumulator read by a reorder

    @property
    def label(self) -> str:
        return f"{self.kind} {self.tensor}"

    def describe(self) -> str:
        parts = [f"{self.kind:7s} {self.tensor:6s} stmt={self.stmt} role={self.role} layout={self.layout}",
                 f"buffer={self.buffer}", f"vector={VEC}x{self.width_bits}b",
                 f"per-thread={self.vectors_per_thread}", f"distribution={self.distribution}"]
        if self.tile is not None:
            parts.append(f"tile={self.tile.render()}")
        if self.shared is not None:
            parts.append(f"shared={self.shared.name}[{self.shared.rows}x{self.shared.cols}]")
        if self.swizzle is not None:
            parts.append(self.swizzle.describe())
        if self.fused_pointwise is not None:
            parts.append(f"fused={self.fused_pointwise.render()}")
        if self.kind in ("reorder", "f2g") and self.split_k > 1:
            parts.append(f"split-k-reduce={self.split_k}")
        return " ".join(parts)


def _ld_name(t: str) -> str:
    return f"ld{t}"


def plan_global_to_shared(tile: DataTile, shared: SharedTile, stmt: str, block_threads: int,
                          swizzle: SwizzleFunction, staging: str, sources: tuple[str, ...] = ()
                          ) -> tuple[CopyPlan, CopyPlan]:
    if shared.cols % VEC:
        raise PlannerError(f"tile row length {shared.cols} is not a multiple of {VEC}")
    nv = shared.halves // VEC
    if nv % block_threads:
        raise PlannerError(f"{nv} tile vectors do not divide evenly over {block_threads} threads")
    per = nv // block_threads
    g2r = CopyPlan("g2r", stmt, tile.dataspace, shared.role, shared.layout, staging, tile, shared, per,
                   distribution="cyclic-over-block", ld=_ld_name(tile.dataspace))
    r2s = CopyPlan("r2s", stmt, shared.name, shared.role, shared.layout, staging, tile, shared, per,
                   distribution="cyclic-over-block", swizzle=swizzle, sources=sources or (staging,))
    return g2r, r2s


def plan_shared_to_fragments(tile: DataTile, shared: SharedTile, stmt: str, macro: int,
                             swizzle: SwizzleFunction, frag: str) -> CopyPlan:
    n, off = fragment_chunks(shared.role, shared.layout, macro)
    return CopyPlan("s2f", stmt, shared.name, shared.role, shared.layout, frag, tile, shared,
                    off.shape[1], width_bits=16 * n, swizzle=swizzle, macro=macro)


def plan_store_global(tile: DataTile, stmt: str, split_k: int, macro: int, acc: str,
                      to_registers: str | None = None) -> CopyPlan:
    if to_registers is not None:
        return CopyPlan("reorder", stmt, tile.dataspace, "C", "row", to_registers, tile, None,
                        macro // 16 * macro // 16, split_k=split_k, macro=macro, source=acc)
    return CopyPlan("f2g", stmt, tile.dataspace, "C", "row", acc, tile, None, macro // 16 * macro // 16,
                    split_k=split_k, macro=macro, ld=_ld_name(tile.dataspace), source=acc)


def plan_prologue_pointwise(plan: CopyPlan, ops: Expr | None) -> CopyPlan:
    if ops is None or isinstance(ops, Access):
        return plan
    return replace(plan, fused_pointwise=ops)


def frag_name(t: str) -> str:
    return f"frag_{t}"


def plan_epilogue_fragments(tree: ScheduleTree, stmt: str, macro: int,
                            produced: set[str]) -> list[CopyPlan]:
    sd = tree.stmt(stmt)
    expr = sd.expr.args[0] if sd.expr.op == "fragment_pointwise" else sd.expr
    out = []
    chunks = (macro // 16) ** 2
    for acc in dict.fromkeys(a.tensor for a in expr.leaves()):
        if acc in produced:
            continue
        a = next(x for x in expr.leaves() if x.tensor == acc)
        tile = project_access(tree, stmt, a, "fragment")
        out.append(CopyPlan("g2f", stmt, acc, "X", "row", frag_name(acc), tile, None, chunks,
                            macro=macro, ld=_ld_name(acc)))
    tile = project_access(tree, stmt, sd.write, "fragment")
    out.append(CopyPlan("f2g", stmt, sd.write.tensor, "X", "row", frag_name(sd.write.tensor), tile, None,
                        chunks, macro=macro, ld=_ld_name(sd.write.tensor)))
    return out


# whole-kernel plan -----------------------------------------------------------------

@dataclass(frozen=True)
class KernelPlan:
    idiom: IdiomKind
    cfg: GenConfig
    copies: tuple[CopyPlan, ...]
    shared: tuple[SharedTile, ...]
    scratch_halves: int
    accumulators: tuple[tuple[str, str], ...]  # (stmt, accumulator register name)
    tensors: dict = field(default_factory=dict, compare=False, hash=False)

    def of(self, kind: str, stmt: str | None = None) -> list[CopyPlan]:
        return [c for c in self.copies if c.kind == kind and (stmt is None or c.stmt == stmt)]

    def shared_bytes(self) -> int:
        return 2 * (sum(s.halves for s in self.shared) + self.scratch_halves)

    def acc_of(self, stmt: str) -> str:
        return dict(self.accumulators)[stmt]


def acc_name(t: str) -> str:
    return f"acc_{t}"


def make_plans(dag: ComputationDag, tree: ScheduleTree, idiom: IdiomKind, cfg: GenConfig) -> KernelPlan:
    """``dag`` is the fused DAG the tree was built from."""
    cfg = cfg.validated()
    names = statement_names(dag)
    bm, bn, kt = cfg.block
    copies: list[CopyPlan] = []
    shared: list[SharedTile] = []
    accs = []
    offset = 0
    for node in dag.matmuls():
        s = names[node.id]
        sd = tree.stmt(s)
        _, la, lb = sd.expr.attrs
        c_acc, a_expr, b_expr = sd.expr.args
        mm_copies = {}
        for role, lay, opnd, mn in (("A", la, a_expr, bm), ("B", lb, b_expr, bn)):
            leaves = [opnd] if isinstance(opnd, Access) else opnd.leaves()
            key = "_".join(dict.fromkeys(leaf.tensor for leaf in leaves))
            rows, cols = storage_shape(role, lay, mn, kt)
            st = SharedTile(f"shared_{key}", key, role, lay, rows, cols, offset)
            offset += st.halves
            shared.append(st)
            swz = choose_swizzle(st, cfg)
            g2rs = []
            staging = []
            for leaf in leaves:
                tile = project_access(tree, s, leaf, "block")
                reg = f"private_{leaf.tensor}"
                g2r, r2s = plan_global_to_shared(tile, st, s, cfg.threads, swz, reg)
                g2rs.append(g2r)
                staging.append(reg)
            r2s = replace(r2s, sources=tuple(staging))
            if not isinstance(opnd, Access):
                r2s = plan_prologue_pointwise(r2s, opnd)
            wtile = project_access(tree, s, Access(key, leaves[0].index), "warp")
            s2f = plan_shared_to_fragments(wtile, st, s, cfg.macro, swz, f"hmma_{key}")
            mm_copies[role] = (g2rs, r2s, s2f)
        copies += mm_copies["A"][0] + mm_copies["B"][0]
        copies += [mm_copies["A"][1], mm_copies["B"][1], mm_copies["A"][2], mm_copies["B"][2]]
        accs.append((s, acc_name(c_acc.tensor)))
    scratch = cfg.threads // WARP * SCRATCH_HALVES_PER_WARP
    for node in dag.matmuls():
        s = names[node.id]
        out = node.output
        ctile = project_access(tree, s, Access(out, ("i", "j")), "warp")
        to_regs = frag_name(out) if idiom in (IdiomKind.EpiloguePointwise, IdiomKind.MultiMatmulEpilogue) else None
        copies.append(plan_store_global(ctile, s, cfg.sk, cfg.macro, acc_name(out), to_regs))
    if idiom in (IdiomKind.EpiloguePointwise, IdiomKind.MultiMatmulEpilogue):
        (ep,) = [n for n in dag.nodes if not n.is_matmul]
        produced = {m.output for m in dag.matmuls()}
        copies += plan_epilogue_fragments(tree, names[ep.id], cfg.macro, produced)
    return KernelPlan(idiom, cfg, tuple(copies), tuple(shared), scratch, tuple(accs), dict(dag.tensors))


def dump_plans(plan: KernelPlan) -> str:
    lines = [f"idiom {plan.idiom.value} config {plan.cfg.tag()}"]
    for s in plan.shared:
        lines.append(f"shared {s.name} {s.rows}x{s.cols} halves={s.halves} offset={s.offset}")
    lines.append(f"shared sharedBuffer halves={plan.scratch_halves} (reorder scratch)")
    lines.append(f"shared total bytes={plan.shared_bytes()}")
    for c in plan.copies:
        lines.append(c.describe())
    return "\n".join(lines) + "\n"


# copy insertion -------------------------------------------------------------------

def _k_band_path(tree, stmt) -> tuple[int, ...]:
    for p, n in walk(tree):
        if isinstance(n, Band) and stmt in n.stmts() and any(k == SEQ for k in n.kinds):
            return p
    raise PlannerError(f"no k-tile band for {stmt}")


def _split_plain(tree: ScheduleTree) -> ScheduleTree:
    """Single statement: split [by, bx, kt] so post-loop copies can sit after the k loop."""
    top = tree.child
    if not isinstance(top, Band) or top.ndim != 3:
        return tree
    s = top.stmts()
    inner = Band(tuple((x, e[2:]) for x, e in top.sched), top.kinds[2:], top.bound[2:], top.child)
    outer = Band(tuple((x, e[:2]) for x, e in top.sched), top.kinds[:2], top.bound[:2],
                 Sequence((Filter(s, inner),)))
    return replace(tree, child=outer)


def _point_band_path(tree, stmt) -> tuple[int, ...]:
    best = None
    for p, n in walk(tree):
        if isinstance(n, Band) and stmt in n.stmts():
            best = p
    return best


def insert_copies(tree: ScheduleTree, plan: KernelPlan) -> ScheduleTree:
    """Place every copy plan in the tree as a COPY node."""
    tree = _split_plain(tree)
    for s, _ in plan.accumulators:
        kp = _k_band_path(tree, s)
        kb = node_at(tree, kp)
        pre = [Copy(c.label, c) for c in plan.of("g2r", s)] + [Copy(c.label, c) for c in plan.of("r2s", s)]
        tree = replace_at(tree, kp, replace(kb, child=Sequence(tuple(pre) + (Filter((s,), kb.child),))))
        pp = _point_band_path(tree, s)
        strip = pp[:-1]
        sb = node_at(tree, strip)
        loads = tuple(Copy(c.label, c) for c in plan.of("s2f", s))
        tree = replace_at(tree, strip, replace(sb, child=Sequence(loads + (Filter((s,), sb.child),))))
    # post-loop copies follow the statement's filter in the top sequence
    top = tree.child
    seq = top.child
    kids = list(seq.children)
    for s, _ in plan.accumulators:
        idx = next(i for i, k in enumerate(kids) if isinstance(k, Filter) and s in k.stmts)
        stores = [Copy(c.label, c) for c in plan.copies if c.stmt == s and c.kind in ("reorder", "f2g")]
        kids[idx + 1:idx + 1] = stores
    tree = replace(tree, child=replace(top, child=Sequence(tuple(kids))))
    ep = [c for c in plan.copies if c.kind == "g2f"] + [c for c in plan.copies if c.kind == "f2g" and c.role == "X"]
    if ep:
        s = ep[0].stmt
        pp = _point_band_path(tree, s)
        pb = node_at(tree, pp)
        body = tuple(Copy(c.label, c) for c in ep if c.kind == "g2f") + (Filter((s,)),) + \
            tuple(Copy(c.label, c) for c in ep if c.kind == "f2g")
        tree = replace_at(tree, pp, replace(pb, child=Sequence(body)))
    if plan.cfg.prefetch:
        paths = [p for p, n in walk(tree) if isinstance(n, Copy) and n.payload.kind in ("g2r", "r2s")]
        tree = shift_for_prefetch(tree, paths, 1)
    return tree
