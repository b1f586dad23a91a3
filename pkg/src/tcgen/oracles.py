"""Reference results for verification.

``oracle_exact_order`` replays the generated kernel's arithmetic with plain
array loops: same fp32 products, same summation order, same fp16 rounding
points. ``oracle_fp64`` evaluates the DAG's mathematics in fp64 and rounds
once at the live-out; it also propagates a magnitude bound used to scale the
tolerance where results cancel.
"""
from __future__ import annotations

import numpy as np

from .config import GenConfig
from .dag import ComputationDag, fuse_pointwise_chain
from .exprtree import Access, apply_pointwise
from .half import FP32_OPS, FP64_OPS, round_half, widen

TOLERANCE = 2.0 ** -8


def _sizes(dag: ComputationDag, inputs: dict) -> dict[str, int]:
    sizes: dict[str, int] = {}
    for t in dag.inputs():
        for d, n in zip(dag.tensors[t].dims, np.shape(inputs[t])[-2:]):
            sizes.setdefault(d, n)
    return sizes


def _operand32(e, vals: dict) -> np.ndarray:
    """fp16 operand tile as the kernel sees it in shared memory (a fused prologue rounds once)."""
    if isinstance(e, Access):
        return vals[e.tensor]
    return round_half(apply_pointwise(e, {t: widen(v) for t, v in vals.items()}, FP32_OPS))


def _matmul_exact(a: np.ndarray, b: np.ndarray, cfg: GenConfig) -> np.ndarray:
    """(..., M, K) x (..., K, N) fp16 -> fp16 following the kernel's accumulation order."""
    K = a.shape[-1]
    kt, wk, sk = cfg.block[2], cfg.warp[2], cfg.sk
    a32, b32 = widen(a), widen(b)
    partials = []
    for z in range(sk):
        acc = np.zeros(a.shape[:-1] + b.shape[-1:], np.float32)
        for t in range(K // kt):
            for strip in range(wk // 8):
                for step in range(2):
                    k0 = t * kt + z * wk + 8 * strip + 4 * step
                    p = [a32[..., :, k0 + i, None] * b32[..., None, k0 + i, :] for i in range(4)]
                    acc = acc + (((p[0] + p[1]) + p[2]) + p[3])
        partials.append(round_half(acc))
    if sk == 1:
        return partials[0]
    total = np.zeros(partials[0].shape, np.float32)
    for part in partials:
        total = total + widen(part)
    return round_half(total)


def oracle_exact_order(dag: ComputationDag, cfg: GenConfig, inputs: dict) -> dict[str, np.ndarray]:
    """Live-out fp16 arrays, bit-for-bit what the generated kernel computes under ``cfg``."""
    cfg = cfg.validated()
    fused = fuse_pointwise_chain(dag)
    vals = {t: np.asarray(inputs[t], dtype=np.float16) for t in fused.inputs()}
    for n in fused.nodes:
        if n.is_matmul:
            _, a_e, b_e = n.expr.args
            vals[n.output] = _matmul_exact(_operand32(a_e, vals), _operand32(b_e, vals), cfg)
        else:
            vals[n.output] = round_half(apply_pointwise(n.expr, {t: widen(v) for t, v in vals.items()}, FP32_OPS))
    return {t: vals[t] for t in fused.live_out}


def _mag_op(op: str, *m):
    # every supported unary op is 1-Lipschitz with |f(x)| <= |x| or bounded by 1
    if op in ("add", "sub"):
        return m[0] + m[1]
    if op in ("sigmoid", "tanh"):
        return np.maximum(m[0], 1.0)
    return m[0]


def oracle_fp64(dag: ComputationDag, inputs: dict) -> tuple[dict, dict, dict]:
    """(fp16 live-outs, fp64 live-outs, fp64 magnitude bounds), all keyed by live-out tensor."""
    vals = {t: np.asarray(inputs[t], dtype=np.float16).astype(np.float64) for t in dag.inputs()}
    mags = {t: np.abs(v) for t, v in vals.items()}
    mag_ops = {k: (lambda k: lambda *a: _mag_op(k, *a))(k) for k in FP64_OPS}
    for n in dag.topological():
        if n.is_matmul:
            _, a_e, b_e = n.expr.args
            a = apply_pointwise(a_e, vals, FP64_OPS)
            b = apply_pointwise(b_e, vals, FP64_OPS)
            vals[n.output] = a @ b
            mags[n.output] = apply_pointwise(a_e, mags, mag_ops) @ apply_pointwise(b_e, mags, mag_ops)
        else:
            vals[n.output] = apply_pointwise(n.expr, vals, FP64_OPS)
            mags[n.output] = apply_pointwise(n.expr, mags, mag_ops)
    out = {t: vals[t] for t in dag.live_out}
    return ({t: v.astype(np.float16) for t, v in out.items()}, out, {t: mags[t] for t in dag.live_out})


def within_tolerance(run: np.ndarray, ref64: np.ndarray, mag: np.ndarray,
                     rel: float = TOLERANCE) -> tuple[bool, float]:
    """Elementwise |run - ref| <= rel * max(|ref|, mag); returns (ok, worst ratio to the bound)."""
    run = np.asarray(run, dtype=np.float64)
    bound = rel * np.maximum(np.abs(ref64), mag)
    err = np.abs(run - ref64)
    if not np.all(np.isfinite(run)):
        return False, float("inf")
    ratio = np.where(bound > 0, err / np.where(bound > 0, bound, 1), np.where(err > 0, np.inf, 0))
    worst = float(ratio.max()) if ratio.size else 0.0
    return worst <= 1.0, worst


def random_inputs(dag: ComputationDag, sizes: dict, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1, 1) rounded to fp16, one stream per seed, tensors drawn in declaration order."""
    rng = np.random.default_rng(seed)
    out = {}
    for t in dag.inputs():
        shape = tuple(sizes[d] for d in dag.tensors[t].dims)
        out[t] = rng.uniform(-1.0, 1.0, shape).astype(np.float32).astype(np.float16)
    return out
