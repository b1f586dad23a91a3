"""Deterministic execution of kernel IR.

Every block of the grid (and every input set of a batch) is simulated at
once: state arrays carry a leading block axis B and a thread axis T. Each IR
statement is applied to all active threads before the next one starts, which
is the same as running the threads in ascending id between barriers.

Numerics: fp16 storage, fp32 accumulators, m8n8k4 products in fp32 summed in
ascending k and then added to the accumulator. The real instruction's
internal order is not public; this order is fixed here and mirrored by
``oracles.oracle_exact_order``.
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .banks import conflict_phases, segments
from .exprtree import apply_pointwise
from .half import FP32_OPS, round_half, widen
from .ir import Barrier, Call, E, GlobalRef, Guard, Kernel, Let, Loop, Ref, VectorCopy
from .layout import WARP, macro_owner_map, quadrant_of
from .planner import REORDER_OUT, SCRATCH_HALVES_PER_WARP, fragment_chunks, scratch_slot

NO_TAG = -(1 << 30)


class SimulationError(RuntimeError):
    pass


class OutOfBounds(SimulationError):
    pass


class BarrierDivergence(SimulationError):
    pass


# m8n8k4 -------------------------------------------------------------------------

def mma_m8n8k4(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(..., 8, 4) fp16 x (..., 4, 8) fp16 + (..., 8, 8) fp32 -> fp32.

    Products are exact in fp32; the four are summed in ascending k and the
    sum is then added to c.
    """
    p = widen(a)[..., :, :, None] * widen(b)[..., None, :, :]  # (..., 8, 4, 8)
    s = ((p[..., 0, :] + p[..., 1, :]) + p[..., 2, :]) + p[..., 3, :]
    return np.asarray(c, dtype=np.float32) + s


@lru_cache(maxsize=None)
def _qp_tables(role: str, layout: str):
    """m8n8k4 fragment tables of quad-pair 0: lane-in-pair -> local (r, c) of each slot."""
    from .layout import mma_owner_map
    om = mma_owner_map(role, layout)
    return np.array(om.slots)  # (8, slots, 2)


def exec_mma_m8n8k4(a_frag, b_frag, c_frag, la: str = "row", lb: str = "col") -> np.ndarray:
    """Run one quad-pair mma on fragments laid out per ``mma_owner_map``.

    a_frag, b_frag: (8, 4) fp16 (the quad-pair's 8 threads in ascending id);
    c_frag: (8, 8) fp32. Returns the updated accumulator fragment.
    """
    ta, tb, tc = _qp_tables("A", la), _qp_tables("B", lb), _qp_tables("C", "row")
    a = np.zeros((8, 4), np.float16)
    b = np.zeros((4, 8), np.float16)
    c = np.zeros((8, 8), np.float32)
    a[ta[..., 0], ta[..., 1]] = a_frag
    b[tb[..., 0], tb[..., 1]] = b_frag
    c[tc[..., 0], tc[..., 1]] = c_frag
    out = mma_m8n8k4(a, b, c)
    return out[tc[..., 0], tc[..., 1]]


@lru_cache(maxsize=None)
def _macro_tables(macro: int, la: str, lb: str):
    """Gather tables (lane, slot) for each quad-pair's m8n8k4 operands within one macro-MMA.

    A: (4, nsub, 2 steps, 8, 4), B: (4, nsub, 2, 4, 8), C: (4, nsub, nsub, 8, 8), plus the
    inverse C map: for each (lane, slot) the flat index into the C gather.
    """
    subs = macro // 16
    maps = {r: macro_owner_map(macro, r, lay) for r, lay in (("A", la), ("B", lb), ("C", "row"))}
    where = {}
    for r, om in maps.items():
        for t, fr in enumerate(om.slots):
            for s, e in enumerate(fr):
                where[(r, t // 4 % 4, e)] = (t, s)  # keyed by quad-pair
    A = np.zeros((4, subs, 2, 8, 4, 2), np.int64)
    B = np.zeros((4, subs, 2, 4, 8, 2), np.int64)
    C = np.zeros((4, subs, subs, 8, 8, 2), np.int64)
    for q in range(4):
        m0, n0 = quadrant_of(q)
        for h in range(subs):
            for st in range(2):
                for i in range(8):
                    for k in range(4):
                        A[q, h, st, i, k] = where[("A", q, (16 * h + m0 + i, 4 * st + k))]
                        B[q, h, st, k, i] = where[("B", q, (4 * st + k, 16 * h + n0 + i))]
        for ah in range(subs):
            for bh in range(subs):
                for i in range(8):
                    for j in range(8):
                        C[q, ah, bh, i, j] = where[("C", q, (16 * ah + m0 + i, 16 * bh + n0 + j))]
    inv = np.zeros((WARP, maps["C"].frag_len), np.int64)
    flat = C.reshape(-1, 2)
    inv[flat[:, 0], flat[:, 1]] = np.arange(len(flat))
    return A, B, C, inv


def exec_macro_mma(fa, fb, fc, macro: int, la: str = "row", lb: str = "col") -> np.ndarray:
    """Warp-wide macro-MMA on fragments laid out per ``macro_owner_map``.

    fa, fb: (..., 32, frag_len) fp16; fc: (..., 32, frag_len) fp32. Every
    quad-pair issues one m8n8k4 per sub-tile and k-step, k-steps in order.
    """
    TA, TB, TC, inv = _macro_tables(macro, la, lb)
    fa, fb, fc = np.asarray(fa), np.asarray(fb), np.asarray(fc, dtype=np.float32)
    lead = fc.shape[:-2]
    A = fa[..., TA[..., 0], TA[..., 1]]  # (..., 4, subs, 2, 8, 4)
    B = fb[..., TB[..., 0], TB[..., 1]]
    C = fc[..., TC[..., 0], TC[..., 1]]  # (..., 4, subs, subs, 8, 8)
    for step in range(2):
        C = mma_m8n8k4(A[..., :, None, step, :, :], B[..., None, :, step, :, :], C)
    return C.reshape(lead + (-1,))[..., inv]


# diagnostics ----------------------------------------------------------------------

@dataclass
class AccessRecord:
    epoch: int
    op: str  # helper kind or "g2r"
    space: str  # global | shared
    buffer: str
    rw: str
    width: int  # bytes per thread
    block: np.ndarray
    thread: np.ndarray
    address: np.ndarray  # byte address within the buffer


@dataclass
class Diagnostics:
    bank_conflict_phases: Counter = field(default_factory=Counter)  # by op kind
    shared_ops: Counter = field(default_factory=Counter)
    global_segments: dict = field(default_factory=dict)  # "op:tensor" -> Counter(segments -> warp ops)
    global_vector_bits: Counter = field(default_factory=Counter)  # ("op:tensor", bits) -> warp ops
    global_writes: Counter = field(default_factory=Counter)  # tensor -> elements written
    global_reads: Counter = field(default_factory=Counter)
    stores_from_nonzero_z: int = 0
    raw_violations: int = 0
    war_violations: int = 0
    tile_order_violations: int = 0
    barriers: int = 0
    mma_issues: int = 0  # quad-pair m8n8k4 executions
    macro_calls: int = 0
    events: list = field(default_factory=list)

    @property
    def total_bank_conflicts(self) -> int:
        return int(sum(self.bank_conflict_phases.values()))

    def event_digest(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            h.update(f"{e.epoch}|{e.op}|{e.space}|{e.buffer}|{e.rw}|{e.width}|".encode())
            for a in (e.block, e.thread, e.address):
                h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "bankConflictPhases": self.total_bank_conflicts,
            "bankConflictsByOp": dict(sorted(self.bank_conflict_phases.items())),
            "sharedWarpOps": dict(sorted(self.shared_ops.items())),
            "globalSegmentsPerWarpOp": {k: {str(s): n for s, n in sorted(v.items())}
                                        for k, v in sorted(self.global_segments.items())},
            "globalVectorBits": {f"{k[0]}:{k[1]}": n for k, n in sorted(self.global_vector_bits.items())},
            "globalWrites": dict(sorted(self.global_writes.items())),
            "globalReads": dict(sorted(self.global_reads.items())),
            "storesFromNonzeroZ": self.stores_from_nonzero_z,
            "rawViolations": self.raw_violations,
            "warViolations": self.war_violations,
            "tileOrderViolations": self.tile_order_violations,
            "barriers": self.barriers,
            "mmaIssues": self.mma_issues,
            "macroCalls": self.macro_calls,
        }


# machine state ----------------------------------------------------------------------

class MachineState:
    """Globals, shared arenas and registers of every simulated block."""

    def __init__(self, kernel: Kernel, block: tuple[int, int, int], grid: tuple[int, int, int],
                 sizes: dict, globals_: dict[str, np.ndarray], keep_events: bool):
        self.kernel = kernel
        self.bdim = block
        self.grid = grid
        nblk = grid[0] * grid[1] * grid[2]
        self.nsets = next(iter(globals_.values())).shape[0]
        self.B = self.nsets * nblk
        self.T = block[0] * block[1] * block[2]
        self.W = self.T // WARP
        b = np.arange(self.B)
        bid = b % nblk
        self.set_of = b // nblk
        t = np.arange(self.T)
        tx, ty, tz = t % block[0], t // block[0] % block[1], t // (block[0] * block[1])
        self.tz = tz
        self.env = {"threadIdx.x": tx[None], "threadIdx.y": ty[None], "threadIdx.z": tz[None],
                    "blockIdx.x": (bid % grid[0])[:, None], "blockIdx.y": (bid // grid[0] % grid[1])[:, None],
                    "blockIdx.z": (bid // (grid[0] * grid[1]))[:, None],
                    "blockDim.x": block[0], "blockDim.y": block[1], "blockDim.z": block[2], **sizes}
        self.globals = {k: v.reshape(v.shape[0], -1) for k, v in globals_.items()}
        self.gshape = {k: v.shape[1:] for k, v in globals_.items()}
        for k, (r, c) in self.gshape.items():
            self.env[f"ld{k}"] = c
        self.shared_off = {s.name: s.offset for s in kernel.shared}
        self.shared_size = {s.name: s.halves for s in kernel.shared}
        H = sum(s.halves for s in kernel.shared)
        self.shared = np.full((self.B, H), np.nan, np.float16)
        self.w_epoch = np.full((self.B, H), -1, np.int64)
        self.w_thread = np.full((self.B, H), -1, np.int64)
        self.r_epoch = np.full((self.B, H), -1, np.int64)
        self.r_thread = np.full((self.B, H), -1, np.int64)
        self.tag = np.full((self.B, H), NO_TAG, np.int64)
        self.regs = {}
        self.reg_shape = {}
        for r in kernel.regs:
            n = int(np.prod(r.shape))
            if r.dtype == "float":
                self.regs[r.name] = np.zeros((self.B, self.T, n), np.float32)
            else:
                self.regs[r.name] = np.full((self.B, self.T, n), np.nan, np.float16)
            self.reg_shape[r.name] = r.shape
        self.epoch = 0
        self.diag = Diagnostics()
        self.keep_events = keep_events

    # addressing
    def full(self, x, dtype=np.int64) -> np.ndarray:
        return np.broadcast_to(np.asarray(x, dtype=dtype), (self.B, self.T))

    def scalar(self, e: E, env) -> int:
        v = np.asarray(e.eval(env))
        if v.ndim and not np.all(v == v.flat[0]):
            raise SimulationError(f"expression {e.c()} is not uniform across threads")
        return int(v.flat[0]) if v.ndim else int(v)

    def reg_offset(self, ref: Ref, env) -> int:
        shape = self.reg_shape[ref.buffer]
        idx = tuple(self.scalar(i, env) for i in ref.index) + (0,) * ref.trailing
        if len(idx) != len(shape) or any(not 0 <= i < d for i, d in zip(idx, shape)):
            raise OutOfBounds(f"register index {idx} outside {ref.buffer}{list(shape)}")
        return int(np.ravel_multi_index(idx, shape))

    def reg_span(self, ref: Ref, env, n: int) -> int:
        off = self.reg_offset(ref, env)
        if off + n > self.regs[ref.buffer].shape[2]:
            raise OutOfBounds(f"register span {off}+{n} outside {ref.buffer}")
        return off

    # access bookkeeping
    def _warp_view(self, a):
        return a.reshape(self.B, self.W, WARP)

    def log(self, op, space, buffer, rw, width, addr_full, act):
        """Per warp-wide access: conflicts or segments, plus the optional event record."""
        warps = self._warp_view(act).any(axis=-1)
        addr = self._warp_view(np.where(act, addr_full, 0))[warps]
        wact = self._warp_view(act)[warps]
        if space == "shared":
            self.diag.bank_conflict_phases[op] += int(conflict_phases(addr, width, wact).sum())
            self.diag.shared_ops[op] += int(warps.sum())
        else:
            segs = segments(addr, width, wact)
            hist = self.diag.global_segments.setdefault(f"{op}:{buffer}", Counter())
            for s, n in zip(*np.unique(segs, return_counts=True)):
                hist[int(s)] += int(n)
            self.diag.global_vector_bits[(f"{op}:{buffer}", width * 8)] += int(warps.sum())
        if self.keep_events:
            bi, ti = np.nonzero(act)
            self.diag.events.append(AccessRecord(self.epoch, op, space, buffer, rw, width, bi, ti,
                                                 np.asarray(addr_full)[bi, ti]))

    # global memory
    def gcheck(self, tensor, flat, width, bi, ti):
        r, c = self.gshape[tensor]
        row, col = np.divmod(flat, c)
        bad = (flat < 0) | (row >= r) | (col + width > c)
        if bad.any():
            k = int(np.argmax(bad))
            raise OutOfBounds(f"global {tensor}: block {bi[k]} thread {ti[k]} element {flat[k]} "
                              f"outside {r}x{c} (barrier phase {self.epoch})")

    def gread(self, op, tensor, flat_full, width, act):
        bi, ti = np.nonzero(act)
        flat = np.asarray(flat_full)[bi, ti]
        self.gcheck(tensor, flat, width, bi, ti)
        self.log(op, "global", tensor, "read", 2 * width, 2 * flat_full, act)
        self.diag.global_reads[tensor] += len(bi) * width
        return self.globals[tensor][self.set_of[bi][:, None], flat[:, None] + np.arange(width)]

    def gwrite(self, op, tensor, flat_full, width, act, values):
        bi, ti = np.nonzero(act)
        flat = np.asarray(flat_full)[bi, ti]
        self.gcheck(tensor, flat, width, bi, ti)
        self.log(op, "global", tensor, "write", 2 * width, 2 * flat_full, act)
        self.diag.global_writes[tensor] += len(bi) * width
        self.diag.stores_from_nonzero_z += int((self.tz[ti] != 0).sum())
        self.globals[tensor][self.set_of[bi][:, None], flat[:, None] + np.arange(width)] = values

    # shared memory (indices are halves relative to the named buffer)
    def _sidx(self, buffer, idx_full, width, act):
        bi, ti = np.nonzero(act)
        idx = np.asarray(idx_full)[bi, ti]
        size = self.shared_size[buffer]
        bad = (idx < 0) | (idx + width > size)
        if bad.any():
            k = int(np.argmax(bad))
            raise OutOfBounds(f"shared {buffer}: block {bi[k]} thread {ti[k]} half {idx[k]} outside {size} "
                              f"(barrier phase {self.epoch})")
        return bi, ti, self.shared_off[buffer] + idx[:, None] + np.arange(width)

    def sread(self, op, buffer, idx_full, width, act, tag=None):
        bi, ti, cols = self._sidx(buffer, idx_full, width, act)
        rows = bi[:, None]
        same = (self.w_epoch[rows, cols] == self.epoch) & (self.w_thread[rows, cols] != ti[:, None])
        self.diag.raw_violations += int(same.any(axis=1).sum())
        if tag is not None:
            self.diag.tile_order_violations += int((self.tag[rows, cols] != tag).any(axis=1).sum())
        self.r_epoch[rows, cols] = self.epoch
        self.r_thread[rows, cols] = ti[:, None]
        self.log(op, "shared", buffer, "read", 2 * width, 2 * (self.shared_off[buffer] + idx_full), act)
        return self.shared[rows, cols]

    def swrite(self, op, buffer, idx_full, width, act, values, tag=None):
        bi, ti, cols = self._sidx(buffer, idx_full, width, act)
        rows = bi[:, None]
        hazard = (self.r_epoch[rows, cols] == self.epoch) & (self.r_thread[rows, cols] != ti[:, None])
        self.diag.war_violations += int(hazard.any(axis=1).sum())
        self.w_epoch[rows, cols] = self.epoch
        self.w_thread[rows, cols] = ti[:, None]
        if tag is not None:
            self.tag[rows, cols] = tag
        self.log(op, "shared", buffer, "write", 2 * width, 2 * (self.shared_off[buffer] + idx_full), act)
        self.shared[rows, cols] = values

    def barrier(self, act):
        part = act.any(axis=1) & ~act.all(axis=1)
        if part.any():
            b = int(np.argmax(part))
            missing = np.nonzero(~act[b])[0]
            raise BarrierDivergence(f"block {b}: threads {missing[:8].tolist()} skip a barrier others reach "
                                    f"(barrier phase {self.epoch})")
        self.epoch += 1
        self.diag.barriers += 1


# interpreter -----------------------------------------------------------------------

class _Interpreter:
    def __init__(self, st: MachineState):
        self.st = st
        self.helpers = st.kernel.helpers

    def run(self, body, env, act):
        st = self.st
        for s in body:
            if isinstance(s, Let):
                env[s.var] = s.expr.eval(env)
            elif isinstance(s, Loop):
                lo, hi = st.scalar(s.lo, env), st.scalar(s.hi, env)
                v = lo
                while (v < hi) if s.cmp == "<" else (v <= hi):
                    env[s.var] = v
                    self.run(s.body, env, act)
                    v += s.step
                env.pop(s.var, None)
            elif isinstance(s, Guard):
                a = act & st.full(s.cond.eval(env), bool)
                if a.any():
                    self.run(s.body, env, a)
            elif isinstance(s, Barrier):
                st.barrier(act)
            elif isinstance(s, VectorCopy):
                self.vector_copy(s, env, act)
            elif isinstance(s, Call):
                h = self.helpers[s.helper]
                getattr(self, f"h_{h.kind}")(s, h.p(), env, act)
            else:
                raise SimulationError(f"unknown statement {type(s).__name__}")

    def _warp_uniform(self, act, what):
        w = act.reshape(self.st.B, self.st.W, WARP)
        if (w.any(axis=-1) & ~w.all(axis=-1)).any():
            raise SimulationError(f"{what} needs every lane of a warp active")

    def _gflat(self, g: GlobalRef, env):
        if self.st.scalar(g.ld, env) != self.st.gshape[g.tensor][1]:
            raise SimulationError(f"leading dimension of {g.tensor} does not match its storage")
        return self.st.full(g.row.eval(env)) * self.st.gshape[g.tensor][1] + self.st.full(g.col.eval(env))

    def _lanes(self, act):
        _, ti = np.nonzero(act)
        lane = ti % WARP
        return ti, lane, (lane >> 2) & 3, lane & 3, lane >> 4

    def vector_copy(self, s: VectorCopy, env, act):
        st = self.st
        vals = st.gread("g2r", s.src.tensor, self._gflat(s.src, env), s.width, act)
        off = st.reg_span(s.dst, env, s.width)
        bi, ti = np.nonzero(act)
        st.regs[s.dst.buffer][bi[:, None], ti[:, None], off + np.arange(s.width)] = vals

    # helpers keyed by HelperSpec.kind
    def h_r2s(self, s: Call, p, env, act):
        st = self.st
        tile, *srcs, pas = s.args
        lid = st.full(env["linearId"])
        v = st.scalar(pas, env) * p["threads"] + lid
        vpr = p["vpr"]
        row = v // vpr
        h = np.zeros_like(row)
        for b, sel in enumerate(p["select"]):
            if sel is not None:
                h |= ((row >> sel) & 1) << b
        slot = row * vpr + ((v % vpr) ^ h)
        if (row >= p["rows"])[act].any():
            raise OutOfBounds(f"{s.helper}: vector {int(v[act].max())} beyond a {p['rows']}-row tile")
        bi, ti = np.nonzero(act)
        vals = [st.regs[r.buffer][bi[:, None], ti[:, None], st.reg_span(r, env, 8) + np.arange(8)] for r in srcs]
        if p["expr"] is not None:
            out = round_half(apply_pointwise(p["expr"], {t: widen(x) for t, x in zip(p["leaves"], vals)}, FP32_OPS))
        else:
            out = vals[0]
        tag = st.scalar(s.tag, env) if s.tag is not None else None
        st.swrite("r2s", tile.buffer, 8 * slot, 8, act, out, tag)

    def h_s2f(self, s: Call, p, env, act):
        st = self.st
        self._warp_uniform(act, s.helper)
        frag, tile, r0e, c0e, lde = s.args
        n, off = fragment_chunks(p["role"], p["layout"], p["macro"])
        ld = st.scalar(lde, env)
        r0, c0 = st.full(r0e.eval(env)), st.full(c0e.eval(env))
        lane = st.full(np.arange(st.T) % WARP)
        fo = st.reg_span(frag, env, n * off.shape[1])
        bi, ti = np.nonzero(act)
        tag = st.scalar(s.tag, env) if s.tag is not None else None
        for j in range(off.shape[1]):
            row = r0 + off[lane, j, 0]
            col = c0 + off[lane, j, 1]
            if ((row < 0) | (row >= p["rows"]) | (col < 0) | (col >= ld))[act].any():
                raise OutOfBounds(f"{s.helper}: fragment read outside the {p['rows']}x{ld} tile")
            h = np.zeros_like(row)
            for b, sel in enumerate(p["select"]):
                if sel is not None:
                    h |= ((row >> sel) & 1) << b
            slot = row * (ld // 8) + ((col // 8) ^ h)
            vals = st.sread("s2f", tile.buffer, 8 * slot + col % 8, n, act, tag)
            st.regs[frag.buffer][bi[:, None], ti[:, None], fo + n * j + np.arange(n)] = vals

    def h_mma(self, s: Call, p, env, act):
        st = self.st
        self._warp_uniform(act, s.helper)
        d, a, b, c = s.args
        m = p["macro"]
        la, lc = macro_owner_map(m, "A", p["la"]).frag_len, macro_owner_map(m, "C").frag_len
        lb = macro_owner_map(m, "B", p["lb"]).frag_len
        oa, ob = st.reg_span(a, env, la), st.reg_span(b, env, lb)
        oc, od = st.reg_span(c, env, lc), st.reg_span(d, env, lc)
        warps = act.reshape(st.B, st.W, WARP).all(axis=-1)

        def frag(name, o, n):
            return st.regs[name][:, :, o:o + n].reshape(st.B, st.W, WARP, n)[warps]

        fa, fb, fc = frag(a.buffer, oa, la), frag(b.buffer, ob, lb), frag(c.buffer, oc, lc)
        out = exec_macro_mma(fa, fb, fc, m, p["la"], p["lb"])
        nw = fa.shape[0]
        subs = m // 16
        st.diag.mma_issues += nw * 4 * subs * subs * 2
        st.diag.macro_calls += nw
        view = st.regs[d.buffer].reshape(st.B, st.W, WARP, -1)
        view[warps, :, od:od + lc] = out

    def _exchange(self, s: Call, p, env, act, acc: Ref, scratch: Ref, emit):
        """Accumulator -> fp16 rows through per-warp scratch; ``emit(sub, values, mask)`` stores."""
        st = self.st
        if not act.all(axis=1)[act.any(axis=1)].all():
            raise BarrierDivergence(f"{s.helper} reached by part of a block")
        m, sk, wps = p["macro"], p["split_k"], p["warps_per_slice"]
        subs = (m // 16) ** 2
        lc = macro_owner_map(m, "C").frag_len
        oa = st.reg_span(acc, env, lc)
        lid = st.full(env["linearId"])
        lane, warp = lid % WARP, lid // WARP
        q, l, hi = (lane >> 2) & 3, lane & 3, lane >> 4
        unit = 4 * q + (l & 1) + 16 * hi
        mine = SCRATCH_HALVES_PER_WARP * warp
        bi, ti = np.nonzero(act)
        z0 = act & (st.full(st.tz[None]) == 0)
        for sub in range(subs):
            c = st.regs[acc.buffer][bi, ti, oa + 8 * sub:oa + 8 * sub + 8]
            lo = round_half(c[:, [0, 1, 4, 5]])
            up = round_half(c[:, [2, 3, 6, 7]])
            st.swrite("reorder", scratch.buffer, mine + 8 * scratch_slot(unit) + 4 * (l >> 1), 4, act, lo)
            st.swrite("reorder", scratch.buffer, mine + 8 * scratch_slot(unit + 2) + 4 * (l >> 1), 4, act, up)
            st.barrier(act)
            if sk > 1:
                total = np.zeros((int(z0.sum()), 8), np.float32)
                for z in range(sk):
                    part = st.sread("reorder", scratch.buffer,
                                    SCRATCH_HALVES_PER_WARP * (warp + wps * z) + 8 * scratch_slot(lane), 8, z0)
                    total = total + widen(part)
                v, mask = round_half(total), z0
            else:
                v, mask = st.sread("reorder", scratch.buffer, mine + 8 * scratch_slot(lane), 8, act), act
            emit(sub, v[:, list(REORDER_OUT)], mask)
            st.barrier(act)

    def h_reorder(self, s: Call, p, env, act):
        st = self.st
        frag, acc, scratch = s.args
        fo = st.reg_span(frag, env, 8 * (p["macro"] // 16) ** 2)

        def emit(sub, vals, mask):
            bi, ti = np.nonzero(mask)
            st.regs[frag.buffer][bi[:, None], ti[:, None], fo + 8 * sub + np.arange(8)] = vals

        self._exchange(s, p, env, act, acc, scratch, emit)

    def _row_col(self, sub):
        lane = self.st.full(np.arange(self.st.T) % WARP)
        q, l, hi = (lane >> 2) & 3, lane & 3, lane >> 4
        return 8 * (q & 1) + l + 4 * hi + (sub >> 1) * 16, 8 * (q >> 1) + (sub & 1) * 16

    def h_f2g_reorder(self, s: Call, p, env, act):
        st = self.st
        dst, acc, lde, scratch = s.args
        base = self._gflat(dst, env)
        ld = st.scalar(lde, env)

        def emit(sub, vals, mask):
            r, c = self._row_col(sub)
            st.gwrite("f2g", dst.tensor, base + r * ld + c, 8, mask, vals)

        self._exchange(s, p, env, act, acc, scratch, emit)

    def h_g2f(self, s: Call, p, env, act):
        st = self.st
        frag, src, lde = s.args
        base = self._gflat(src, env)
        ld = st.scalar(lde, env)
        subs = (p["macro"] // 16) ** 2
        fo = st.reg_span(frag, env, 8 * subs)
        bi, ti = np.nonzero(act)
        for sub in range(subs):
            r, c = self._row_col(sub)
            vals = st.gread("g2f", src.tensor, base + r * ld + c, 8, act)
            st.regs[frag.buffer][bi[:, None], ti[:, None], fo + 8 * sub + np.arange(8)] = vals

    def h_f2g(self, s: Call, p, env, act):
        st = self.st
        dst, frag, lde = s.args
        base = self._gflat(dst, env)
        ld = st.scalar(lde, env)
        subs = (p["macro"] // 16) ** 2
        fo = st.reg_span(frag, env, 8 * subs)
        bi, ti = np.nonzero(act)
        for sub in range(subs):
            r, c = self._row_col(sub)
            vals = st.regs[frag.buffer][bi[:, None], ti[:, None], fo + 8 * sub + np.arange(8)]
            st.gwrite("f2g", dst.tensor, base + r * ld + c, 8, act, vals)

    def h_pointwise(self, s: Call, p, env, act):
        st = self.st
        out, *ins = s.args
        n = p["length"]
        bi, ti = np.nonzero(act)
        vals = {t: widen(st.regs[r.buffer][bi[:, None], ti[:, None], st.reg_span(r, env, n) + np.arange(n)])
                for t, r in zip(p["leaves"], ins)}
        res = round_half(apply_pointwise(p["expr"], vals, FP32_OPS))
        st.regs[out.buffer][bi[:, None], ti[:, None], st.reg_span(out, env, n) + np.arange(n)] = res


# entry point -------------------------------------------------------------------------

def _storage(arr: np.ndarray, layout: str) -> np.ndarray:
    """Logical (..., R, C) -> storage orientation."""
    return np.ascontiguousarray(np.swapaxes(arr, -1, -2) if layout == "col" else arr)


def infer_sizes(kernel: Kernel, inputs: dict) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for t, arr in inputs.items():
        dims, _ = kernel.meta["tensors"][t]
        for d, n in zip(dims, np.shape(arr)[-2:]):
            if sizes.setdefault(d, n) != n:
                raise SimulationError(f"inconsistent size for {d}: {sizes[d]} vs {n}")
    return sizes


def run_kernel(kernel: Kernel, launch, inputs, sizes: dict | None = None, keep_events: bool = False):
    """Execute ``kernel`` on one input set (dict of logical fp16 arrays) or a list of them.

    Returns (outputs, diagnostics); outputs map each live-out tensor to its
    logical fp16 array (stacked along a leading axis when a list was given).
    Live-outs start NaN-filled, so unwritten elements stay visible.
    """
    batch = isinstance(inputs, (list, tuple))
    sets = list(inputs) if batch else [inputs]
    sizes = dict(sizes) if sizes else infer_sizes(kernel, sets[0])
    tensors = kernel.meta["tensors"]
    missing = [t for t in kernel.meta["inputs"] if t not in sets[0]]
    if missing:
        raise SimulationError(f"missing inputs: {missing}")
    glob = {}
    for t in kernel.meta["inputs"]:
        dims, lay = tensors[t]
        want = tuple(sizes[d] for d in dims)
        arrs = [np.asarray(s[t], dtype=np.float16) for s in sets]
        if any(a.shape != want for a in arrs):
            raise SimulationError(f"input {t} must have shape {want}")
        glob[t] = _storage(np.stack(arrs), lay)
    for t in kernel.meta["outputs"]:
        dims, lay = tensors[t]
        shp = tuple(sizes[d] for d in dims)
        glob[t] = np.full((len(sets),) + (shp[::-1] if lay == "col" else shp), np.nan, np.float16)
    st = MachineState(kernel, tuple(launch.block), tuple(launch.grid_for(sizes)), sizes, glob, keep_events)
    act = np.ones((st.B, st.T), bool)
    _Interpreter(st).run(kernel.body, dict(st.env), act)
    outs = {}
    for t in kernel.meta["outputs"]:
        dims, lay = tensors[t]
        shp = tuple(sizes[d] for d in dims)
        a = st.globals[t].reshape((len(sets),) + (shp[::-1] if lay == "col" else shp))
        a = np.swapaxes(a, -1, -2) if lay == "col" else a
        outs[t] = a if batch else a[0]
    return outs, st.diag
