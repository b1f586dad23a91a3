import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcgen.config import REFERENCE, GenConfig
from tcgen.dag import load_dag
from tcgen.generate import generate
from tcgen.oracles import _matmul_exact, oracle_exact_order, oracle_fp64, random_inputs, within_tolerance
from tcgen.simulator import SimulationError, run_kernel
from tcgen.verify import evaluate, expected_load_segments, min_segments
from conftest import DAGS

SIZES = {"M": 128, "N": 128, "K": 128}
SK1 = GenConfig((128, 128, 64), (64, 64, 64))
SK4 = GenConfig((128, 128, 128), (64, 64, 32))


def scalar_exact(a, b, i, j, cfg):
    """One output element with scalar float32 arithmetic in the kernel's order."""
    f32 = np.float32
    kt, wk = cfg.block[2], cfg.warp[2]
    parts = []
    for z in range(cfg.sk):
        acc = f32(0)
        for t in range(a.shape[1] // kt):
            for k0 in range(t * kt + z * wk, t * kt + (z + 1) * wk, 4):
                p = [f32(a[i, k0 + d]) * f32(b[k0 + d, j]) for d in range(4)]
                acc = acc + (((p[0] + p[1]) + p[2]) + p[3])
        parts.append(np.float16(acc))
    total = f32(0)
    for p in parts:
        total = total + f32(p)
    return np.float16(total)


@pytest.mark.parametrize("cfg", [SK1, REFERENCE, SK4], ids=["sk1", "sk2", "sk4"])
def test_exact_order_oracle_against_scalar_replay(cfg):
    rng = np.random.default_rng(7)
    a = rng.uniform(-1, 1, (8, 256)).astype(np.float16)
    b = rng.uniform(-1, 1, (256, 8)).astype(np.float16)
    got = _matmul_exact(a, b, cfg.validated())
    for i, j in [(0, 0), (3, 5), (7, 7), (2, 6)]:
        assert got[i, j].view(np.uint16) == scalar_exact(a, b, i, j, cfg.validated()).view(np.uint16)


@pytest.mark.parametrize("name", ["matmul", "matmul_bias_relu", "matmul_bias_sigmoid", "relu_matmul",
                                  "sum_of_matmuls"])
def test_bit_exact_reference(dag, name):
    g = generate(dag(name), REFERENCE)
    rep, outs, diag = evaluate(g, SIZES, (0, 1))
    assert rep.passed, rep.to_text()


def test_determinism(dag):
    g = generate(dag("matmul_bias_tanh"), REFERENCE)
    ins = random_inputs(g.dag, SIZES, 4)
    o1, d1 = run_kernel(g.kernel, g.launch, ins, SIZES, keep_events=True)
    o2, d2 = run_kernel(g.kernel, g.launch, ins, SIZES, keep_events=True)
    assert d1.events and d1.event_digest() == d2.event_digest()
    assert o1["E"].tobytes() == o2["E"].tobytes()


def test_batched_equals_single(dag):
    g = generate(dag("matmul"), REFERENCE)
    ins = [random_inputs(g.dag, SIZES, s) for s in (0, 1)]
    batch, _ = run_kernel(g.kernel, g.launch, ins, SIZES)
    for k, one in enumerate(ins):
        single, _ = run_kernel(g.kernel, g.launch, one)
        assert batch["C"][k].tobytes() == single["C"].tobytes()


@pytest.mark.parametrize("cfg", [REFERENCE, SK4], ids=["sk2", "sk4"])
def test_split_k_stores_from_z0_only(dag, cfg):
    g = generate(dag("matmul"), cfg)
    sizes = {"M": 128, "N": 256, "K": 256}
    _, _, diag = evaluate(g, sizes, (0,), keep_events=True)
    assert diag.stores_from_nonzero_z == 0
    stores = [e for e in diag.events if e.space == "global" and e.rw == "write"]
    assert {e.width for e in stores} == {16}
    threads = np.concatenate([e.thread for e in stores])
    bx, by, _ = g.launch.block
    assert len(threads) == sizes["M"] * sizes["N"] // 8
    assert (threads // (bx * by) == 0).all()
    assert diag.global_writes["C"] == sizes["M"] * sizes["N"]


@pytest.mark.parametrize("name,live", [("matmul_bias_relu", {"E"}), ("sum_of_matmuls", {"Z"})])
def test_no_intermediate_global_writes(dag, name, live):
    rep, _, diag = evaluate(generate(dag(name), REFERENCE), SIZES, (0,))
    assert set(diag.global_writes) == live
    assert all(v == 0 for v in rep.diagnostics["intermediateGlobalWrites"].values())


def test_load_segments(dag):
    assert [min_segments(n) for n in (32, 64, 128, 256)] == [8, 4, 4, 4]
    g = generate(dag("matmul"), REFERENCE)
    assert expected_load_segments(g) == {"g2r:A": 4, "g2r:B": 4}
    _, _, diag = evaluate(g, SIZES, (0,))
    for k, v in diag.global_segments.items():
        if k.startswith("g2r"):
            assert set(v) == {4}
    assert {bits for (_, bits) in diag.global_vector_bits} == {128}


def test_rejects_bad_inputs(dag):
    g = generate(dag("matmul"), REFERENCE)
    ins = random_inputs(g.dag, SIZES, 0)
    with pytest.raises(SimulationError, match="missing"):
        run_kernel(g.kernel, g.launch, {"A": ins["A"]}, SIZES)
    with pytest.raises(SimulationError, match="shape"):
        run_kernel(g.kernel, g.launch, {"A": ins["A"], "B": ins["B"][:64]}, SIZES)
    with pytest.raises(SimulationError, match="inconsistent"):
        run_kernel(g.kernel, g.launch, {"A": ins["A"], "B": ins["B"][:64]})


def test_nonmultiple_sizes_rejected(dag):
    from tcgen.config import ConfigError
    with pytest.raises(ConfigError):
        evaluate(generate(dag("matmul"), REFERENCE), {"M": 128, "N": 100, "K": 128}, (0,))


def test_special_values_propagate(dag):
    g = generate(dag("matmul"), REFERENCE)
    ins = random_inputs(g.dag, SIZES, 0)
    ins["A"][5, 9] = np.inf
    ins["B"][3, 2] = np.nan
    out, _ = run_kernel(g.kernel, g.launch, ins, SIZES)
    ref = oracle_exact_order(g.dag, g.cfg, ins)["C"]
    assert out["C"].view(np.uint16).tolist() == ref.view(np.uint16).tolist()
    assert np.isnan(out["C"][:, 2]).all() and np.isinf(out["C"][5]).sum() > 0


@settings(max_examples=6)
@given(st.integers(0, 2 ** 31), st.sampled_from([0.01, 1.0, 30.0]))
def test_random_scales_bit_exact(seed, scale):
    g = generate(load_dag(DAGS / "matmul.json"), REFERENCE)
    ins = {k: (v.astype(np.float32) * scale).astype(np.float16) for k, v in random_inputs(g.dag, SIZES, seed).items()}
    out, _ = run_kernel(g.kernel, g.launch, ins, SIZES)
    ref = oracle_exact_order(g.dag, g.cfg, ins)["C"]
    assert np.array_equal(out["C"].view(np.uint16), ref.view(np.uint16))


def test_tolerance_helper():
    ref = np.array([1.0, -2.0, 0.0, 1e-3])
    mag = np.array([1.0, 2.0, 0.5, 1.0])
    assert within_tolerance(ref, ref, mag) == (True, 0.0)
    ok, worst = within_tolerance(ref + np.array([0, 0, 0.5 * 2 ** -8, 0]), ref, mag)
    assert ok and worst == pytest.approx(1.0)
    assert not within_tolerance(ref + 0.01, ref, mag)[0]
    assert not within_tolerance(np.array([np.nan]), np.array([0.0]), np.array([1.0]))[0]


def test_fp64_oracle_matches_numpy(dag):
    d = dag("matmul_bias_relu")
    ins = random_inputs(d, {"M": 16, "N": 16, "K": 16}, 1)
    h, f, mag = oracle_fp64(d, ins)
    a, b, bias = (ins[t].astype(np.float64) for t in ("A", "B", "bias"))
    want = np.maximum(a @ b + bias, 0)
    assert np.array_equal(f["E"], want) and h["E"].dtype == np.float16
    assert (mag["E"] >= np.abs(want)).all()


@pytest.mark.parametrize("cfg", [REFERENCE, GenConfig((128, 128, 64), (64, 64, 64), 32, None, ("col", "row"))],
                         ids=["m16_rc", "m32_cr"])
def test_copies_conserve_elements(dag, cfg):
    # every block reads each element of its operand panels exactly once and writes its output tile once
    g = generate(dag("matmul"), cfg)
    sizes = {"M": 256, "N": 128, "K": 128}
    _, _, diag = evaluate(g, sizes, (0,), keep_events=True)
    bm, bn, _ = cfg.block
    for tensor, rows in (("A", bm), ("B", bn)):
        reads = [e for e in diag.events if e.op == "g2r" and e.buffer == tensor]
        elems = np.concatenate([e.address // 2 + np.arange(8)[:, None] for e in reads], axis=1).ravel()
        blocks = np.concatenate([np.repeat(e.block[None], 8, axis=0) for e in reads], axis=None)
        per_block = {b: np.sort(elems[blocks == b]) for b in np.unique(blocks)}
        for b, el in per_block.items():
            assert len(el) == rows * sizes["K"] and len(np.unique(el)) == len(el)
    writes = [e for e in diag.events if e.space == "global" and e.rw == "write"]
    out = np.concatenate([e.address // 2 + np.arange(8)[:, None] for e in writes], axis=1).ravel()
    assert np.array_equal(np.sort(out), np.arange(sizes["M"] * sizes["N"]))
