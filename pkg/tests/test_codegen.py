import json
import re
import shutil
import subprocess
from dataclasses import replace
from pathlib import Path

import pytest

from tcgen.codegen import emit_source
from tcgen.config import REFERENCE, GenConfig
from tcgen.generate import generate, write_artifacts
from tcgen.ir import Barrier, Call, Guard, Loop, dump, walk_stmts
from tcgen.verify import evaluate

ALL_DAGS = ["matmul", "matmul_bias_relu", "matmul_bias_sigmoid", "matmul_bias_tanh", "relu_matmul",
            "sum_of_matmuls"]
M32 = GenConfig((128, 128, 64), (64, 64, 64), 32, 1, ("row", "col"))
SHIM = Path(__file__).parent / "cuda_shim"


@pytest.mark.parametrize("cfg,threads,block", [
    (REFERENCE, 256, (64, 2, 2)),
    (GenConfig((128, 128, 32), (64, 64, 32)), 128, (64, 2, 1)),
    (GenConfig((64, 64, 64), (64, 64, 64)), 32, (32, 1, 1)),
    (GenConfig((128, 128, 128), (64, 64, 32)), 512, (64, 2, 4)),
])
def test_launch(dag, cfg, threads, block):
    g = generate(dag("matmul"), cfg)
    assert g.launch.launch_bounds == threads == g.kernel.launch_bounds
    assert tuple(g.launch.block) == block
    assert g.launch.grid_for({"M": 256, "N": 512, "K": 64}) == (512 // cfg.block[1], 256 // cfg.block[0], 1)
    assert f"__launch_bounds__({threads})" in g.source


@pytest.mark.parametrize("name", ALL_DAGS)
def test_helpers_defined_and_called(dag, name):
    g = generate(dag(name), REFERENCE)
    src = g.source
    called = {s.helper for s in walk_stmts(g.kernel.body) if isinstance(s, Call)}
    assert called == set(g.kernel.helpers)
    for h in called:
        assert re.search(rf"__device__ __forceinline__ void {h}\(", src), h
    calls_in_ir = sum(isinstance(s, Call) for s in walk_stmts(g.kernel.body))
    body = src[src.index("__global__"):]
    assert sum(body.count(f"{h}(") for h in called) == calls_in_ir


@pytest.mark.parametrize("name", ALL_DAGS)
def test_ir_and_text_agree(dag, name):
    g = generate(dag(name), REFERENCE)
    ir = dump(g.kernel)
    body = g.source[g.source.index("__global__"):]
    assert ir.count("barrier") == body.count("__syncthreads();")
    assert ir.count("vcopy") == body.count("*(const half8 *)&")
    for m in re.finditer(r"loop (c\d+) = (-?\d+); ", ir):
        assert f"for (int {m.group(1)} = {m.group(2)}; " in body


@pytest.mark.parametrize("cfg,sites,per_call", [(REFERENCE, 2, 8), (M32, 8, 32)])
def test_mma_issue_sites(dag, cfg, sites, per_call):
    g = generate(dag("matmul"), cfg)
    (mma,) = [h for h in g.kernel.helpers.values() if h.kind == "mma"]
    src = g.source
    start = src.index(f"void {mma.name}(")
    text = src[start:src.index("\n}\n", start)]
    # every warp-wide m8n8k4 issue runs on all four quad-pairs
    assert text.count("mma.sync.aligned.m8n8k4") == sites
    sizes = {"M": 128, "N": 128, "K": 128}
    _, _, diag = evaluate(g, sizes, (0,))
    assert diag.macro_calls == (128 // cfg.macro) ** 2 * (128 // 8)
    # one quad-pair execution covers 8x8x4 products
    assert diag.mma_issues == per_call * diag.macro_calls == (128 // 8) ** 2 * (128 // 4)


def test_prefetch_loop_start(dag):
    on = dump(generate(dag("matmul"), REFERENCE).kernel)
    off = dump(generate(dag("matmul"), replace(REFERENCE, prefetch=False)).kernel)
    assert "loop c2 = -1; c2 < K / 64; +1" in on
    assert "loop c2 = 0; c2 < K / 64; +1" in off
    assert "for (int c2 = -1; c2 < K / 64; c2 += 1)" in generate(dag("matmul"), REFERENCE).source


def test_prologue_footprint_equals_plain(dag):
    plain, pro = generate(dag("matmul"), REFERENCE), generate(dag("relu_matmul"), REFERENCE)
    assert plain.plan.shared_bytes() == pro.plan.shared_bytes() == plain.kernel.shared_bytes()
    assert "fmaxf" in pro.source


def test_split_k_shared_footprint(dag):
    # two operand tiles plus 256 halves of reorder scratch per warp
    assert generate(dag("matmul"), REFERENCE).plan.shared_bytes() == 2 * (2 * 128 * 64 + 8 * 256)
    # 128-deep k tiles with 16 warps exceed the 48 KB static limit of real hardware
    assert generate(dag("matmul"), GenConfig((128, 128, 128), (64, 64, 32))).plan.shared_bytes() == 73728


def _strip_barriers(body):
    out = []
    for s in body:
        if isinstance(s, Barrier):
            continue
        if isinstance(s, (Loop, Guard)):
            s = replace(s, body=_strip_barriers(s.body))
        out.append(s)
    return out


def test_barriers_are_load_bearing(dag):
    g = generate(dag("matmul"), REFERENCE)
    g.kernel = replace(g.kernel, body=_strip_barriers(g.kernel.body))
    _, _, diag = evaluate(g, {"M": 128, "N": 128, "K": 128}, (0,))
    assert diag.raw_violations + diag.war_violations > 0


def test_write_artifacts(dag, tmp_path):
    g = generate(dag("matmul_bias_relu"), REFERENCE)
    paths = write_artifacts(g, tmp_path, "ep", True)
    assert sorted(p.name for p in paths) == ["ep.cu", "ep.ir.txt", "ep.launch.json", "ep.plans.txt"]
    assert json.loads((tmp_path / "ep.launch.json").read_text())["launch_bounds"] == 256
    assert "COPY" in (tmp_path / "ep.plans.txt").read_text()


def test_emission_deterministic(dag):
    a = generate(dag("sum_of_matmuls"), REFERENCE)
    b = generate(dag("sum_of_matmuls"), REFERENCE)
    assert a.source == b.source and dump(a.kernel) == dump(b.kernel)
    assert emit_source(a.kernel, a.launch) == a.source


@pytest.mark.skipif(shutil.which("clang++") is None, reason="clang++ not installed")
@pytest.mark.parametrize("name,cfg", [("matmul", REFERENCE), ("matmul", M32), ("matmul_bias_tanh", REFERENCE),
                                      ("relu_matmul", REFERENCE), ("sum_of_matmuls", REFERENCE)])
def test_compiles_to_ptx(dag, tmp_path, name, cfg):
    cu = tmp_path / "k.cu"
    cu.write_text(generate(dag(name), cfg).source)
    cmd = ["clang++", "-x", "cuda", "--cuda-gpu-arch=sm_70", "--cuda-device-only", "-nocudainc", "-nocudalib",
           "-S", "-o", str(tmp_path / "k.ptx"), f"-I{SHIM}", str(cu)]
    r = subprocess.run(cmd, capture_output=True, text=True)
    if r.returncode and "cannot find" in r.stderr.lower() or "unsupported" in r.stderr.lower():
        pytest.skip("clang lacks CUDA support: " + r.stderr.splitlines()[0])
    assert r.returncode == 0, r.stderr
    ptx = (tmp_path / "k.ptx").read_text()
    assert "mma.sync.aligned.m8n8k4" in ptx and ".entry kern0" in ptx
