"""Lowering of a copy-annotated schedule tree to kernel IR, launch inference and CUDA text emission."""
from __future__ import annotations

from dataclasses import dataclass

from .affine import Aff, value_range, divisors_of, lcm_all
from .dag import ComputationDag
from .exprtree import compound_name
from .ir import (Barrier, Call, Const, E, GlobalRef, Guard, HelperSpec, Kernel, Let, Loop, Ref,
                 RegDecl, SharedDecl, Var, VectorCopy, linear, _arg_c)
from .layout import WARP, macro_owner_map
from .planner import (VEC, CopyPlan, KernelPlan, granularity, path_dims)
from .schedule import Band, Copy, Domain, Filter, Mark, Sequence, ScheduleTree

class CodegenError(ValueError):
    pass


# launch configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class LaunchConfig:
    grid: tuple  # entries are ints or (param, divisor) pairs
    block: tuple[int, int, int]
    launch_bounds: int

    def grid_for(self, sizes: dict) -> tuple[int, int, int]:
        return tuple(g if isinstance(g, int) else sizes[g[0]] // g[1] for g in self.grid)

    def to_json(self, sizes: dict | None = None) -> dict:
        doc = {"block": list(self.block), "launch_bounds": self.launch_bounds,
               "grid": [g if isinstance(g, int) else f"{g[0]} / {g[1]}" for g in self.grid]}
        if sizes:
            doc["sizes"] = dict(sizes)
            doc["grid_at_sizes"] = list(self.grid_for(sizes))
        return doc


def _bound_extent(e: Aff, dims, uppers) -> int | tuple:
    vs = [v for v in e.variables() if v in dims]
    (v,) = vs
    if not e.terms and len(e.floors) == 1 and e.floors[0][1] == 1 and e.floors[0][0].inner == Aff.var(v):
        return (uppers[dims.index(v)], e.floors[0][0].divisor)
    lo, hi, step = value_range(e, v, lcm_all(divisors_of(e)))
    return (hi - lo) // step + 1


def infer_launch_config(tree: ScheduleTree) -> LaunchConfig:
    found: dict[str, object] = {}
    for s in tree.stmts:
        for d in path_dims(tree, s.name):
            if d.bound and d.bound not in found and d.expr.variables() & set(s.dims):
                found[d.bound] = _bound_extent(d.expr, list(s.dims), list(s.uppers))
    wx = found.get("warpIdx_x", 1)
    wy = found.get("warpIdx_y", 1)
    wz = found.get("warpIdx_z", 1)
    block = (WARP * wx, wy, wz)
    threads = block[0] * block[1] * block[2]
    if threads > 1024:
        raise CodegenError(f"{threads} threads per block exceeds 1024")
    grid = (found.get("blockIdx.x", 1), found.get("blockIdx.y", 1), 1)
    return LaunchConfig(grid, block, threads)


# lowering -----------------------------------------------------------------------

def aff_to_e(a: Aff, env: dict[str, E]) -> E:
    if a.floors:
        raise CodegenError(f"cannot lower non-linear origin {a}")
    return linear([(c, env.get(n, Var(n))) for n, c in _ordered_terms(a)], a.const)


_ORDER = ("blockIdx.y", "blockIdx.x", "warpIdx_y", "warpIdx_x", "warpIdx_z")


def _ordered_terms(a: Aff):
    def key(t):
        n = t[0]
        if n in _ORDER:
            return (1, _ORDER.index(n), 0)
        if n.startswith("c") and n[1:].isdigit():
            return (0, 0, int(n[1:]))
        return (2, 0, 0)
    return sorted(a.terms, key=key)


def _is_tile_floor(e: Aff, iters) -> tuple[str, int] | None:
    if e.terms or e.const or len(e.floors) != 1:
        return None
    f, c = e.floors[0]
    if c != 1 or len(f.inner.terms) != 1 or f.inner.floors or f.inner.const:
        return None
    (v, k), = f.inner.terms
    if k != 1 or v not in iters:
        return None
    return v, f.divisor


def _regdim(role, layout, n):
    return (n, 1) if (role, layout) in (("A", "row"), ("B", "col")) else (1, n)


def _frag_index(role, layout, idx: E):
    return (idx, Const(0)) if (role, layout) in (("A", "row"), ("B", "col")) else (Const(0), idx)


class _Lowering:
    def __init__(self, tree: ScheduleTree, plan: KernelPlan):
        self.tree = tree
        self.plan = plan
        self.cfg = plan.cfg
        self.dims = {s.name: path_dims(tree, s.name) for s in tree.stmts}
        self.helpers: dict[str, HelperSpec] = {}
        self.regs: dict[str, RegDecl] = {}
        self.kt: dict[str, int] = {}
        self.kparam: dict[str, str] = {}

    # helpers and registers
    def helper(self, name, kind, **params) -> str:
        base, n = name, 1
        while True:
            spec = HelperSpec(name, kind, tuple(sorted(params.items())))
            old = self.helpers.get(name)
            if old is None or old == spec:
                break
            # same family, different semantics (e.g. two prologues): number the variants
            n += 1
            name = f"{base}_{n}"
        self.helpers[name] = spec
        return name

    def reg(self, name, shape, dtype):
        d = RegDecl(name, tuple(shape), dtype)
        if name in self.regs and self.regs[name] != d:
            raise CodegenError(f"register array {name} declared twice with different shapes")
        self.regs[name] = d

    # iterator reconstruction
    def contrib(self, stmt, var, env, lo=0, hi=99) -> E:
        terms = []
        for d in self.dims[stmt]:
            if lo <= d.pos < hi:
                g = granularity(d.expr, var)
                if g is not None:
                    terms.append((g, env.get(d.name, Var(d.name))))
        return linear(terms)

    # tree walk
    def lower(self, node, pos: int, env: dict, stmt: str | None, shifted=False) -> list:
        if node is None:
            return self.leaf(stmt, env)
        if isinstance(node, Domain):
            return self.lower(node.child, pos, env, stmt)
        if isinstance(node, Mark):
            return self.lower(node.child, pos, env, stmt)
        if isinstance(node, Filter):
            s = node.stmts[0]
            body = self.lower(node.child, pos, env, s)
            if shifted:
                kv = Var(self.kloop_var)
                return [Guard(kv.ge(0), body, "overlap compute with the prefetch of the next tile")]
            return body
        if isinstance(node, Sequence):
            out = []
            kids = list(node.children)
            while kids:
                ch = kids.pop(0)
                if isinstance(ch, Copy):
                    run = [ch]
                    while kids and isinstance(kids[0], Copy) and _same_group(kids[0], ch):
                        run.append(kids.pop(0))
                    out += self.copy_run(run, pos, env)
                else:
                    out += self.lower(ch, pos, env, stmt, shifted=self._has_shift(node))
            return out
        if isinstance(node, Band):
            return self.band(node, pos, env, stmt)
        raise CodegenError(f"cannot lower {type(node).__name__}")

    @staticmethod
    def _has_shift(seq: Sequence) -> bool:
        return any(isinstance(c, Copy) and c.shift for c in seq.children)

    def band(self, band: Band, pos: int, env: dict, stmt: str | None) -> list:
        s = stmt or band.stmts()[0]
        sd = self.tree.stmt(s)
        exprs = band.exprs(s)
        env = dict(env)
        wrappers = []  # (kind, payload) applied outside-in
        for d, e in enumerate(exprs):
            p = pos + d
            name = band.bound[d] or f"c{p}"
            iters = set(e.variables()) & set(sd.dims)
            if band.bound[d]:
                env[name] = Var(band.bound[d])
                if not iters and e.variables():
                    c = self._param_const(e, s)
                    wrappers.append(("guard", Var(band.bound[d]).eq(c)))
                continue
            if not iters:
                continue
            tile = _is_tile_floor(e, iters)
            if tile is not None:
                v, t = tile
                upper = sd.uppers[sd.dims.index(v)]
                if isinstance(upper, int):
                    raise CodegenError("tile loops need a symbolic size")
                self.kt[s], self.kparam[s] = t, upper
                self.kloop_var = name
                lo = -1 if self._child_shifted(band) else 0
                wrappers.append(("loop", Loop(name, Const(lo), Var(upper) // t, "<", 1, [], False,
                                              "k-tile loop" + (" (prefetch one tile ahead)" if lo else ""))))
                env[name] = Var(name)
                continue
            (v,) = iters
            stride = sd.strides[sd.dims.index(v)]
            lo, hi, step = value_range(e, v, lcm_all(divisors_of(e)), stride)
            if lo == hi:
                env[name] = Const(lo)
                continue
            # upper bound is the last point of the tile, as a polyhedral scanner would print it
            wrappers.append(("loop", Loop(name, Const(lo), Const(hi + step - 1), "<=", step, [], True)))
            env[name] = Var(name)
        body = self.lower(band.child, pos + band.ndim, env, s)
        for kind, w in reversed(wrappers):
            if kind == "guard":
                body = [Guard(w, body, "only split-K slice 0 finishes the tile")]
            else:
                w.body = body
                body = [w]
        return body

    def _child_shifted(self, band):
        ch = band.child
        return isinstance(ch, Sequence) and self._has_shift(ch)

    def _param_const(self, e: Aff, stmt: str) -> int:
        lin = e.exact_linear({self.kparam.get(stmt, "K"): self.cfg.block[2], "M": self.cfg.block[0],
                              "N": self.cfg.block[1]})
        if lin is None or set(lin) != {""} or lin[""].denominator != 1:
            raise CodegenError(f"bound dimension {e} is not constant")
        return int(lin[""])

    # statements
    def leaf(self, stmt: str, env: dict) -> list:
        sd = self.tree.stmt(stmt)
        fm = self.cfg.macro
        il = self.contrib(stmt, "i", env, 9) // fm
        jl = self.contrib(stmt, "j", env, 9) // fm
        if sd.expr.op == "macro_mma":
            _, la, lb = sd.expr.attrs
            c, a, b = sd.expr.args
            acc = self.plan.acc_of(stmt)
            ka = self.plan.of("s2f", stmt)
            fa = next(x for x in ka if x.role == "A").buffer
            fb = next(x for x in ka if x.role == "B").buffer
            name = ("hmma" if fm == 16 else "hmma32") + f"_{la}_{lb}"
            self.helper(name, "mma", macro=fm, la=la, lb=lb)
            aref = Ref(acc, (il, jl), 1)
            return [Call(name, (aref, Ref(fa, _frag_index("A", la, il), 1),
                                Ref(fb, _frag_index("B", lb, jl), 1), aref),
                         "macro-MMA on register fragments")]
        if sd.expr.op == "fragment_pointwise":
            inner = sd.expr.args[0]
            leaves = tuple(dict.fromkeys(x.tensor for x in inner.leaves()))
            out = sd.write.tensor
            ln = fm * fm // WARP
            self.reg(f"frag_{out}", (self.cfg.warp[0] // fm, self.cfg.warp[1] // fm, ln), "half")
            opname = compound_name(inner) or "expr"
            name = self.helper(f"hmma_pointwise_{opname}", "pointwise", expr=inner, leaves=leaves, length=ln)
            args = (Ref(f"frag_{out}", (il, jl), 1),) + tuple(Ref(f"frag_{t}", (il, jl), 1) for t in leaves)
            return [Call(name, args, "fused pointwise epilogue in registers")]
        raise CodegenError(f"no lowering for statement op {sd.expr.op}")

    # copies
    def copy_run(self, nodes: list[Copy], pos: int, env: dict) -> list:
        """Lower consecutive copies of one kind; their loops are fused as in the hand-written skeleton."""
        for n in nodes:
            if n.payload is None:
                raise CodegenError(f"copy node {n.label} has no plan")
        shift = nodes[0].shift
        body: list = []
        for n in nodes:
            body = _merge(body, getattr(self, f"copy_{n.payload.kind}")(n.payload, pos, env, shift))
        c = nodes[0].payload
        if c.kind == "r2s":
            body = [Barrier()] + body + [Barrier()]
        if c.kind in ("g2r", "r2s") and shift:
            note = "prefetch the next tile from global memory" if c.kind == "g2r" else "publish the prefetched tile"
            return [Guard(self._prefetch_cond(c.stmt, shift), body, note)]
        if c.kind == "reorder" or (c.kind == "f2g" and c.role == "C"):
            kt, kp = self.kt[c.stmt], self.kparam[c.stmt]
            return [Guard(Var(kp).ge(kt), body, "after the last k-tile")]
        return body

    def _names(self, depth, n):
        return [f"c{depth + 3 - n + i}" for i in range(n)]

    def _prefetch_cond(self, stmt, shift) -> E:
        t = self.kt[stmt]
        return Var(self.kparam[stmt]).ge(linear([(t, Var(self.kloop_var))], t * (shift + 1)))

    def _storage_origin(self, c: CopyPlan, env) -> tuple[E, E]:
        r, col = (aff_to_e(o, env) for o in c.tile.origin)
        layout = self.plan.tensors[c.tensor].layout
        return (r, col) if layout == "row" else (col, r)

    def copy_g2r(self, c: CopyPlan, pos, env, shift):
        env = dict(env)
        if shift:
            env[self.kloop_var] = Var(self.kloop_var) + shift
        (v,) = self._names(pos, 1)
        st = c.shared
        T, vpr = self.cfg.threads, st.vpr
        r0, c0 = self._storage_origin(c, env)
        lid = Var("linearId")
        if T % vpr == 0:
            row = linear([(T // vpr, Var(v)), (1, lid // vpr)])
            col = linear([(VEC, lid % vpr)])
        else:
            flat = linear([(T, Var(v)), (1, lid)])
            row, col = flat // vpr, linear([(VEC, flat % vpr)])
        self.reg(c.buffer, (c.vectors_per_thread, VEC), "half")
        body = [VectorCopy(Ref(c.buffer, (Var(v),), 1), GlobalRef(c.tensor, r0 + row, c0 + col, Var(c.ld)), VEC,
                           f"stage {c.tensor} tile in registers")]
        return [Loop(v, Const(0), Const(c.vectors_per_thread - 1), "<=", 1, body, True)]

    def copy_r2s(self, c: CopyPlan, pos, env, shift):
        (v,) = self._names(pos, 1)
        st = c.shared
        op = c.fused_pointwise
        opname = f"_{compound_name(op) or 'fused'}" if op is not None else ""
        name = self.helper(f"hmma_store_shared_{st.role.lower()}_{st.layout}{opname}_swizzled", "r2s",
                           rows=st.rows, vpr=st.vpr, select=c.swizzle.select, threads=self.cfg.threads,
                           expr=op, leaves=tuple(s.replace("private_", "") for s in c.sources) if op else ())
        args = (Ref(st.name, (), 1),) + tuple(Ref(s, (Var(v),), 1) for s in c.sources) + (Var(v),)
        tag = Var(self.kloop_var) + shift
        return [Loop(v, Const(0), Const(c.vectors_per_thread - 1), "<=", 1,
                     [Call(name, args, "registers to swizzled shared tile", tag)], True)]

    def copy_s2f(self, c: CopyPlan, pos, env, shift):
        (v,) = self._names(pos, 1)
        st = c.shared
        fm = self.cfg.macro
        var = "i" if st.role == "A" else "j"
        span = self.cfg.warp[0] if st.role == "A" else self.cfg.warp[1]
        nfrag = span // fm
        mn = self.contrib(c.stmt, var, env, 3, 9) + linear([(fm, Var(v))])
        k = self.contrib(c.stmt, "k", env, 3, 9)
        r0, c0 = (mn, k) if (st.role, st.layout) in (("A", "row"), ("B", "col")) else (k, mn)
        om = macro_owner_map(fm, st.role, st.layout)
        self.reg(c.buffer, _regdim(st.role, st.layout, nfrag) + (om.frag_len,), "half")
        name = self.helper(f"hmma_load_{st.role.lower()}_{st.layout}_swizzled", "s2f", role=st.role,
                           layout=st.layout, macro=fm, rows=st.rows, vpr=st.vpr, select=c.swizzle.select)
        call = Call(name, (Ref(c.buffer, _frag_index(st.role, st.layout, Var(v)), 1), Ref(st.name, (), 1),
                           r0, c0, Const(st.cols)), "swizzled shared tile to register fragments",
                    Var(self.kloop_var))
        return [Loop(v, Const(0), Const(nfrag - 1), "<=", 1, [call], True)]

    def _acc_loops(self, c: CopyPlan, pos, make) -> list:
        fm = self.cfg.macro
        a, b = self._names(pos + 1, 2)
        nm, nn = self.cfg.warp[0] // fm, self.cfg.warp[1] // fm
        inner = Loop(b, Const(0), Const(nn - 1), "<=", 1, [make(Var(a), Var(b))], True)
        return [Loop(a, Const(0), Const(nm - 1), "<=", 1, [inner], True)]

    def _acc_decl(self, c: CopyPlan):
        fm = self.cfg.macro
        self.reg(c.source, (self.cfg.warp[0] // fm, self.cfg.warp[1] // fm,
                            macro_owner_map(fm, "C").frag_len), "float")

    def _reorder_params(self, c: CopyPlan):
        return dict(macro=c.macro, split_k=c.split_k, warps_per_slice=self.cfg.warps_m * self.cfg.warps_n)

    def copy_reorder(self, c: CopyPlan, pos, env, shift):
        self._acc_decl(c)
        fm = self.cfg.macro
        self.reg(c.buffer, (self.cfg.warp[0] // fm, self.cfg.warp[1] // fm, fm * fm // WARP), "half")
        name = self.helper("hmma_reorder_to_registers", "reorder", **self._reorder_params(c))
        return self._acc_loops(c, pos, lambda a, b: Call(
            name, (Ref(c.buffer, (a, b), 1), Ref(c.source, (a, b), 1), Ref("sharedBuffer", (), 1)),
            "accumulator to row-contiguous fp16 registers"))

    def copy_f2g(self, c: CopyPlan, pos, env, shift):
        fm = self.cfg.macro
        if c.role == "C":
            self._acc_decl(c)
            r0, c0 = (aff_to_e(o, env) for o in c.tile.origin)
            name = self.helper("hmma_store_global_after_reordering", "f2g_reorder", **self._reorder_params(c))
            return self._acc_loops(c, pos, lambda a, b: Call(
                name, (GlobalRef(c.tensor, r0 + linear([(fm, a)]), c0 + linear([(fm, b)]), Var(c.ld)),
                       Ref(c.source, (a, b), 1), Var(c.ld), Ref("sharedBuffer", (), 1)),
                "reorder through shared memory and store to global"))
        i, j = self._point(c, env)
        name = self.helper("hmma_store_global_fragment", "f2g", macro=fm)
        return [Call(name, (GlobalRef(c.tensor, i, j, Var(c.ld)), Ref(c.buffer, self._pidx(c, env), 1),
                            Var(c.ld)), "128-bit store of the live-out fragment")]

    def _point(self, c: CopyPlan, env):
        return self.contrib(c.stmt, "i", env), self.contrib(c.stmt, "j", env)

    def _pidx(self, c, env):
        fm = self.cfg.macro
        return (self.contrib(c.stmt, "i", env, 9) // fm, self.contrib(c.stmt, "j", env, 9) // fm)

    def copy_g2f(self, c: CopyPlan, pos, env, shift):
        fm = self.cfg.macro
        self.reg(c.buffer, (self.cfg.warp[0] // fm, self.cfg.warp[1] // fm, fm * fm // WARP), "half")
        i, j = self._point(c, env)
        name = self.helper("hmma_load_global_fragment", "g2f", macro=fm)
        return [Call(name, (Ref(c.buffer, self._pidx(c, env), 1), GlobalRef(c.tensor, i, j, Var(c.ld)),
                            Var(c.ld)), "128-bit load of an epilogue operand fragment")]


def _same_group(a: Copy, b: Copy) -> bool:
    return a.payload.kind == b.payload.kind and a.shift == b.shift and a.payload.stmt == b.payload.stmt


def _same_header(a: Loop, b: Loop) -> bool:
    return (a.var, a.lo, a.hi, a.cmp, a.step, a.unroll) == (b.var, b.lo, b.hi, b.cmp, b.step, b.unroll)


def _merge(a: list, b: list) -> list:
    """Fuse two statement lists whose single loops share a header."""
    if len(a) == 1 and len(b) == 1 and isinstance(a[0], Loop) and isinstance(b[0], Loop) \
            and _same_header(a[0], b[0]):
        la, lb = a[0], b[0]
        return [Loop(la.var, la.lo, la.hi, la.cmp, la.step, _merge(la.body, lb.body), la.unroll, la.comment)]
    return a + b


def lower_to_ir(tree: ScheduleTree, plan: KernelPlan, dag: ComputationDag, name: str = "kern0") -> Kernel:
    """``tree`` must carry COPY nodes (see planner.insert_copies); ``dag`` is the fused DAG."""
    lw = _Lowering(tree, plan)
    tx, ty, tz = Var("threadIdx.x"), Var("threadIdx.y"), Var("threadIdx.z")
    bx, by = Var("blockDim.x"), Var("blockDim.y")
    lets = [Let("linearId", tx + bx * ty + bx * by * tz)]
    lets += [Let("warpIdx_x", Var("threadIdx.x") // WARP), Let("warpIdx_y", Var("threadIdx.y")),
             Let("warpIdx_z", Var("threadIdx.z"))]
    body = lets + lw.lower(tree, 0, {}, None)
    params = [("int", "M"), ("int", "N"), ("int", "K")]
    for t in dag.inputs():
        params += [("const half * __restrict__", t), ("int", f"ld{t}")]
    for t in dag.live_out:
        params += [("half * __restrict__", t), ("int", f"ld{t}")]
    shared = [SharedDecl(s.name, s.halves, s.offset) for s in plan.shared]
    off = sum(s.halves for s in plan.shared)
    shared.append(SharedDecl("sharedBuffer", plan.scratch_halves, off))
    launch = infer_launch_config(tree)
    regs = sorted(lw.regs.values(), key=lambda r: (r.dtype != "half", r.name))
    meta = {"tensors": {t: (d.dims, d.layout) for t, d in dag.tensors.items()}, "idiom": plan.idiom.value,
            "config": plan.cfg, "inputs": tuple(dag.inputs()), "outputs": tuple(dag.live_out)}
    return Kernel(name, params, shared, regs, lw.helpers, body, launch.launch_bounds, meta)


# text emission --------------------------------------------------------------------

PREAMBLE = """#include <cuda_fp16.h>

typedef struct __align__(16) { half x[8]; } half8;
typedef struct __align__(8) { half x[4]; } half4;
"""


def _cond_c(e: E) -> str:
    return e.c()


def _stmt_line(s) -> str:
    if isinstance(s, Let):
        return f"{s.ctype} {s.var} = {s.expr.c()};"
    if isinstance(s, Loop):
        line = f"for (int {s.var} = {s.lo.c()}; {s.var} {s.cmp} {s.hi.c()}; {s.var} += {s.step}) {{"
        return line + (f" // {s.comment}" if s.comment else "")
    if isinstance(s, Guard):
        return f"if ({_cond_c(s.cond)}) {{" + (f" // {s.comment}" if s.comment else "")
    if isinstance(s, Barrier):
        return "__syncthreads();"
    if isinstance(s, Call):
        line = f"{s.helper}(" + ", ".join(_arg_c(a) for a in s.args) + ");"
        return line + (f" // {s.comment}" if s.comment else "")
    if isinstance(s, VectorCopy):
        line = f"*(half8 *){s.dst.c()} = *(const half8 *){s.src.c()};"
        return line + (f" // {s.comment}" if s.comment else "")
    raise CodegenError(f"cannot print {type(s).__name__}")


def emit_body(body, depth=1):
    """Yield (text line, IR node or None) pairs; None marks decoration lines."""
    pad = "  " * depth
    for s in body:
        if isinstance(s, Loop) and s.unroll:
            yield pad + "#pragma unroll", None
        yield pad + _stmt_line(s), s
        if isinstance(s, (Loop, Guard)):
            yield from emit_body(s.body, depth + 1)
            yield pad + "}", None


def emit_kernel_source(kernel: Kernel, launch: LaunchConfig) -> str:
    sig = ", ".join(f"{t} {n}" for t, n in kernel.params)
    out = [f'extern "C" __global__ void __launch_bounds__({launch.launch_bounds}) {kernel.name}({sig}) {{']
    for s in kernel.shared:
        out.append(f"  __shared__ __align__(16) half {s.name}[{s.halves}];")
    for r in kernel.regs:
        init = " = {}" if r.dtype == "float" else ""
        out.append(f"  {r.dtype} {r.name}{''.join(f'[{d}]' for d in r.shape)}{init};")
    for line, _ in emit_body(kernel.body):
        out.append(line)
    out.append("}")
    return "\n".join(out) + "\n"


def emit_source(kernel: Kernel, launch: LaunchConfig) -> str:
    from .helpers_text import emit_helpers
    return PREAMBLE + "\n" + emit_helpers(kernel) + "\n" + emit_kernel_source(kernel, launch)
