"""CUDA text of the device helpers referenced by a kernel."""
from __future__ import annotations

from .exprtree import Access
from .ir import Kernel, HelperSpec
from .planner import REORDER_OUT, fragment_chunks

_MMA_PTX = ("mma.sync.aligned.m8n8k4.{la}.{lb}.f32.f16.f16.f32 "
            "{{%0,%1,%2,%3,%4,%5,%6,%7}}, {{%8,%9}}, {{%10,%11}}, {{%0,%1,%2,%3,%4,%5,%6,%7}};")


def _table(name: str, arr, ctype: str = "unsigned char") -> str:
    dims = "".join(f"[{d}]" for d in arr.shape)

    def rec(a):
        if a.ndim == 1:
            return "{" + ", ".join(str(int(x)) for x in a) + "}"
        return "{" + ", ".join(rec(x) for x in a) + "}"

    return f"__device__ const {ctype} {name}{dims} = {rec(arr)};"


def _mma(h: HelperSpec) -> str:
    p = h.p()
    la, lb, m = p["la"], p["lb"], p["macro"]
    lines = [f"// {m}x{m}x8 macro-MMA: each warp-wide m8n8k4 issue runs on all four quad-pairs;",
             "// quad-pair q owns the 8x8 accumulator quadrant (8*(q%2), 8*(q/2)) of each 16x16 sub-tile.",
             f"__device__ __forceinline__ void {h.name}(float *d, const half *a, const half *b, const float *c) {{",
             f"  for (int e = 0; e < {8 if m == 16 else 32}; ++e) d[e] = c[e];"]
    subs = [(0, 0)] if m == 16 else [(ah, bh) for ah in range(2) for bh in range(2)]
    for ah, bh in subs:
        for step in range(2):
            ao, bo, co = 8 * ah + 4 * step, 8 * bh + 4 * step, 8 * (2 * ah + bh)
            lines.append(f"  {{ // sub-tile ({ah},{bh}) k-step {step}")
            lines.append(f"    const unsigned *ua = (const unsigned *)(a + {ao}); "
                         f"const unsigned *ub = (const unsigned *)(b + {bo}); float *acc = d + {co};")
            lines.append(f'    asm volatile("{_MMA_PTX.format(la=la, lb=lb)}"')
            lines.append('      : "+f"(acc[0]), "+f"(acc[1]), "+f"(acc[2]), "+f"(acc[3]), '
                         '"+f"(acc[4]), "+f"(acc[5]), "+f"(acc[6]), "+f"(acc[7])')
            lines.append('      : "r"(ua[0]), "r"(ua[1]), "r"(ub[0]), "r"(ub[1]));')
            lines.append("  }")
    lines.append("}")
    return "\n".join(lines)


def _h_expr(select, row="row") -> str:
    parts = [f"((({row}) >> {s}) & 1) << {b}" for b, s in enumerate(select) if s is not None]
    return " | ".join(f"({x})" for x in parts) if parts else "0"


def _c_op(e, leaves) -> str:
    if isinstance(e, Access):
        return f"x{leaves.index(e.tensor)}"
    args = [_c_op(a, leaves) for a in e.args]
    if e.op == "relu":
        return f"fmaxf({args[0]}, 0.0f)"
    if e.op == "sigmoid":
        return f"(1.0f / (1.0f + expf(-({args[0]}))))"
    if e.op == "tanh":
        return f"tanhf({args[0]})"
    if e.op == "add":
        return f"({args[0]} + {args[1]})"
    if e.op == "sub":
        return f"({args[0]} - {args[1]})"
    raise ValueError(e.op)


def _r2s(h: HelperSpec) -> str:
    p = h.p()
    leaves = list(p["leaves"])
    srcs = ", ".join(f"const half *src{i}" for i in range(max(1, len(leaves))))
    lines = [f"__device__ __forceinline__ void {h.name}(half *tile, {srcs}, int pass) {{",
             "  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;",
             f"  int v = pass * {p['threads']} + linearId;",
             f"  int row = v / {p['vpr']};",
             f"  int slot = row * {p['vpr']} + ((v % {p['vpr']}) ^ ({_h_expr(p['select'])}));"]
    if p["expr"] is None:
        lines.append("  *(half8 *)&tile[8 * slot] = *(const half8 *)src0;")
    else:
        lines.append("  half8 out;")
        lines.append("  #pragma unroll")
        lines.append("  for (int e = 0; e < 8; ++e) {")
        for i in range(len(leaves)):
            lines.append(f"    float x{i} = __half2float(src{i}[e]);")
        lines.append(f"    out.x[e] = __float2half_rn({_c_op(p['expr'], leaves)});")
        lines.append("  }")
        lines.append("  *(half8 *)&tile[8 * slot] = out;")
    lines.append("}")
    return "\n".join(lines)


def _s2f(h: HelperSpec) -> str:
    p = h.p()
    n, off = fragment_chunks(p["role"], p["layout"], p["macro"])
    tname = f"{h.name}_offsets"
    vec = "half8" if n == 8 else "half4"
    lines = [_table(tname, off),
             f"__device__ __forceinline__ void {h.name}(half *frag, const half *tile, int row0, int col0, int ld) {{",
             "  int lane = threadIdx.x % 32;",
             "  #pragma unroll",
             f"  for (int j = 0; j < {off.shape[1]}; ++j) {{",
             f"    int row = row0 + {tname}[lane][j][0];",
             f"    int col = col0 + {tname}[lane][j][1];",
             f"    int slot = row * (ld / 8) + ((col / 8) ^ ({_h_expr(p['select'])}));",
             f"    *({vec} *)&frag[{n} * j] = *(const {vec} *)&tile[8 * slot + col % 8];",
             "  }",
             "}"]
    return "\n".join(lines)


def _exchange_lines(p, dst_kind: str) -> list[str]:
    m, sk, wps = p["macro"], p["split_k"], p["warps_per_slice"]
    subs = 1 if m == 16 else 4
    lines = [
        "  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;",
        "  int lane = linearId % 32, warp = linearId / 32;",
        "  int q = (lane >> 2) & 3, l = lane & 3, hi = lane >> 4;",
        "  int unit = 4 * q + (l & 1) + 16 * hi;",
        "  #define SCRATCH_SLOT(t) (((t) & 24) | (((t) + 2 * (((t) >> 3) & 1)) & 7))",
        "  #pragma unroll",
        f"  for (int s = 0; s < {subs}; ++s) {{",
        "    const float *c = acc + 8 * s;",
        "    half4 lo = {__float2half_rn(c[0]), __float2half_rn(c[1]), __float2half_rn(c[4]), __float2half_rn(c[5])};",
        "    half4 up = {__float2half_rn(c[2]), __float2half_rn(c[3]), __float2half_rn(c[6]), __float2half_rn(c[7])};",
        "    half *mine = scratch + 256 * warp;",
        "    *(half4 *)&mine[8 * SCRATCH_SLOT(unit) + 4 * (l >> 1)] = lo;",
        "    *(half4 *)&mine[8 * SCRATCH_SLOT(unit + 2) + 4 * (l >> 1)] = up;",
        "    __syncthreads();",
        "    half8 v;",
    ]
    if sk > 1:
        lines += [
            "    if (threadIdx.z == 0) { // split-K partials summed in ascending slice order",
            "      float sum[8] = {};",
            f"      for (int z = 0; z < {sk}; ++z) {{",
            f"        half8 part = *(const half8 *)&scratch[256 * (warp + {wps} * z) + 8 * SCRATCH_SLOT(lane)];",
            "        for (int e = 0; e < 8; ++e) sum[e] += __half2float(part.x[e]);",
            "      }",
            "      for (int e = 0; e < 8; ++e) v.x[e] = __float2half_rn(sum[e]);",
            "    }",
        ]
    else:
        lines.append("    v = *(const half8 *)&mine[8 * SCRATCH_SLOT(lane)];")
    order = ", ".join(f"v.x[{i}]" for i in REORDER_OUT)
    lines.append(f"    half8 o = {{{order}}}; // columns 0..7 of this thread's row")
    row_off = "(s >> 1) * 16" if subs > 1 else "0"
    col_off = "(s & 1) * 16" if subs > 1 else "0"
    guard = "if (threadIdx.z == 0) " if sk > 1 else ""
    if dst_kind == "global":
        lines.append(f"    {guard}*(half8 *)&dst[(8 * (q & 1) + l + 4 * hi + {row_off}) * ld + "
                     f"8 * (q >> 1) + {col_off}] = o;")
    else:
        lines.append(f"    {guard}*(half8 *)&frag[8 * s] = o;")
    lines += ["    __syncthreads();", "  }", "  #undef SCRATCH_SLOT"]
    return lines


def _f2g_reorder(h: HelperSpec) -> str:
    return "\n".join([f"__device__ __forceinline__ void {h.name}(half *dst, const float *acc, int ld, half *scratch) {{"]
                     + _exchange_lines(h.p(), "global") + ["}"])


def _reorder(h: HelperSpec) -> str:
    return "\n".join([f"__device__ __forceinline__ void {h.name}(half *frag, const float *acc, half *scratch) {{"]
                     + _exchange_lines(h.p(), "registers") + ["}"])


def _frag_rows(m) -> list[str]:
    subs = 1 if m == 16 else 4
    return ["  int lane = threadIdx.x % 32, q = (lane >> 2) & 3, l = lane & 3, hi = lane >> 4;",
            "  #pragma unroll",
            f"  for (int s = 0; s < {subs}; ++s) {{",
            "    int row = 8 * (q & 1) + l + 4 * hi + (s >> 1) * 16, col = 8 * (q >> 1) + (s & 1) * 16;"]


def _g2f(h: HelperSpec) -> str:
    return "\n".join([f"__device__ __forceinline__ void {h.name}(half *frag, const half *src, int ld) {{"]
                     + _frag_rows(h.p()["macro"])
                     + ["    *(half8 *)&frag[8 * s] = *(const half8 *)&src[row * ld + col];", "  }", "}"])


def _f2g(h: HelperSpec) -> str:
    return "\n".join([f"__device__ __forceinline__ void {h.name}(half *dst, const half *frag, int ld) {{"]
                     + _frag_rows(h.p()["macro"])
                     + ["    *(half8 *)&dst[row * ld + col] = *(const half8 *)&frag[8 * s];", "  }", "}"])


def _pointwise(h: HelperSpec) -> str:
    p = h.p()
    leaves = list(p["leaves"])
    srcs = ", ".join(f"const half *in{i}" for i in range(len(leaves)))
    lines = [f"__device__ __forceinline__ void {h.name}(half *out, {srcs}) {{",
             "  #pragma unroll",
             f"  for (int e = 0; e < {p['length']}; ++e) {{"]
    for i in range(len(leaves)):
        lines.append(f"    float x{i} = __half2float(in{i}[e]);")
    lines.append(f"    out[e] = __float2half_rn({_c_op(p['expr'], leaves)});")
    lines += ["  }", "}"]
    return "\n".join(lines)


_EMIT = {"mma": _mma, "r2s": _r2s, "s2f": _s2f, "f2g_reorder": _f2g_reorder, "reorder": _reorder,
         "g2f": _g2f, "f2g": _f2g, "pointwise": _pointwise}


def emit_helpers(kernel: Kernel) -> str:
    return "\n\n".join(_EMIT[h.kind](h) for h in sorted(kernel.helpers.values(), key=lambda h: h.name)) + "\n"
