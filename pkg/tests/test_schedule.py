from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcgen.affine import Aff
from tcgen.config import GenConfig
from tcgen.dag import build_initial_schedule, fuse_pointwise_chain, load_dag
from tcgen.goldens import TREE_GOLDENS, render_tree_golden
from tcgen.pipeline import stages
from tcgen.schedule import (Band, Copy, ScheduleError, Sequence, bind_dimensions, check_legality, contract_domain,
                            default_params, dependences_of, hoist_sequence, node_at, render_tree, replace_at,
                            shift_for_prefetch, strip_mine, tile_band, timestamps, walk)
from conftest import DAGS

ONE = GenConfig((128, 128, 32), (64, 64, 32), 16)


def band_line(tree, path):
    depth = len(path)
    want = "  " * depth + "BAND"
    lines = [l for l in render_tree(tree).splitlines() if l.startswith(want)]
    return lines[0].strip()


@pytest.fixture
def mm(dag):
    return build_initial_schedule(dag("matmul"))


# quasi-affine expressions ----------------------------------------------------------

affs = st.builds(lambda c, a, b: Aff.const_(c) + Aff.var("i") * a + Aff.var("k") * b,
                 st.integers(-50, 50), st.integers(-4, 4), st.integers(-4, 4))


@given(affs, st.integers(1, 64), st.integers(1, 8), st.integers(-300, 300), st.integers(-300, 300))
def test_floordiv_matches_integer_division(e, d1, d2, i, k):
    env = {"i": i, "k": k}
    v = e.evaluate(env)
    assert e.floordiv(d1).evaluate(env) == v // d1
    assert e.floordiv(d1).floordiv(d2).evaluate(env) == (v // d1) // d2
    assert (e - e.floordiv(d1) * d1).evaluate(env) == v % d1


def test_floor_nesting_stays_shallow():
    i, k = Aff.var("i"), Aff.var("k")
    e = k.floordiv(8) - k.floordiv(32) * 4
    assert e.depth() <= 2
    assert e.render(["k"]) == "⌊k/8⌋ - 4⌊k/32⌋"
    assert (i.floordiv(64) - i.floordiv(128) * 2).render(["i"]) == "⌊i/64⌋ - 2⌊i/128⌋"


def test_structural_equality():
    i = Aff.var("i")
    assert i.floordiv(16) * 16 == Aff.var("i").floordiv(16) * 16
    assert i.floordiv(16) != i.floordiv(8)


# transformations ---------------------------------------------------------------------

def test_block_tiling(mm):
    t = tile_band(mm, (0,), (128, 128, 32))
    assert render_tree(t).splitlines()[1:] == [
        "  BAND: S[i, j, k] → [⌊i/128⌋, ⌊j/128⌋, ⌊k/32⌋]",
        "    BAND: S[i, j, k] → [i - 128⌊i/128⌋, j - 128⌊j/128⌋, k - 32⌊k/32⌋]"]


def test_unit_tiling(mm):
    t = tile_band(mm, (0,), (1, 1, 1))
    outer, inner = node_at(t, (0,)), node_at(t, (0, 0))
    assert outer.sched == node_at(mm, (0,)).sched
    assert all(e.is_zero() for e in inner.exprs("S"))


def test_warp_tiling(mm):
    t = tile_band(tile_band(mm, (0,), (128, 128, 32)), (0, 0), (64, 64, 32))
    assert band_line(t, (0, 0)) == "BAND: S[i, j, k] → [⌊i/64⌋ - 2⌊i/128⌋, ⌊j/64⌋ - 2⌊j/128⌋, 0]"


@pytest.mark.parametrize("sizes", [(128, 128), (0, 128, 32), (128, -1, 32)])
def test_tiling_rejects(mm, sizes):
    with pytest.raises(ScheduleError):
        tile_band(mm, (0,), sizes)


def _bound(mm):
    t = tile_band(tile_band(mm, (0,), (128, 128, 32)), (0, 0), (64, 64, 32))
    t = bind_dimensions(t, (0,), ("blockIdx.y", "blockIdx.x"))
    return bind_dimensions(t, (0, 0), ("warpIdx_y", "warpIdx_x"))


def test_bind(mm):
    t = _bound(mm)
    assert band_line(t, (0,)) == "BAND: S[i, j, k] → [blockIdx.y, blockIdx.x, ⌊k/32⌋]"
    assert bind_dimensions(t, (0, 0, 0), ()) == t
    with pytest.raises(ScheduleError, match="sequential"):
        bind_dimensions(tile_band(mm, (0,), (128, 128, 32)), (0,), (None, None, "blockIdx.y"))
    with pytest.raises(ScheduleError, match="already bound"):
        bind_dimensions(t, (0, 0, 0), ("blockIdx.y",))


def test_strip_mine(mm):
    t = strip_mine(_bound(mm), (0, 0, 0), 2, 8)
    assert band_line(t, (0, 0, 0)) == "BAND: S[i, j, k] → [0, 0, ⌊k/8⌋ - 4⌊k/32⌋]"
    assert band_line(t, (0, 0, 0, 0)).endswith("k - 8⌊k/8⌋]")
    whole = strip_mine(_bound(mm), (0, 0, 0), 2, 32)
    assert all(e.is_zero() for e in node_at(whole, (0, 0, 0)).exprs("S"))
    with pytest.raises(ScheduleError, match="does not divide"):
        strip_mine(_bound(mm), (0, 0, 0), 2, 12)
    with pytest.raises(ScheduleError, match="sequential"):
        strip_mine(_bound(mm), (0, 0, 0), 0, 8)


def test_contract(mm):
    t = strip_mine(_bound(mm), (0, 0, 0), 2, 8)
    c = contract_domain(t, "S", (16, 16, 8))
    assert "16⌊i/16⌋ = i ∧ 16⌊j/16⌋ = j ∧ 8⌊k/8⌋ = k" in render_tree(c).splitlines()[0]
    assert c.stmt("S").expr.op == "macro_mma" and c.stmt("S").expr.attrs == ("m16n16k8", "row", "col")
    assert contract_domain(t, "S", (1, 1, 1)) == t
    pts = c.stmt("S").points({"M": 64, "N": 64, "K": 32})
    assert len(pts["i"]) == 64
    with pytest.raises(ScheduleError):
        contract_domain(t, "S", (16, 16, 16))


def test_hoist(dag):
    fused = fuse_pointwise_chain(dag("matmul_bias_relu"))
    t = tile_band(build_initial_schedule(fused), (0,), (128, 128, 32))
    h = hoist_sequence(t, dependences_of(t))
    assert band_line(h, (0,)) == "BAND: S1[i, j, k] → [⌊i/128⌋, ⌊j/128⌋]; S2[i, j] → [⌊i/128⌋, ⌊j/128⌋]"
    assert "BAND: S2[i, j] → [⌊K/32⌋]" in render_tree(h)
    assert check_legality(h, dependences_of(h)).ok
    flat = tile_band(build_initial_schedule(dag("matmul")), (0,), (128, 128, 32))
    assert hoist_sequence(flat) == flat


def test_hoist_three_statements(dag):
    fused = fuse_pointwise_chain(dag("sum_of_matmuls"))
    t = tile_band(build_initial_schedule(fused), (0,), (128, 128, 32))
    h = hoist_sequence(t, dependences_of(t))
    seq = node_at(h, (0, 0))
    assert isinstance(seq, Sequence) and len(seq.children) == 3
    for f in seq.children:
        assert isinstance(f.child, Band) and f.child.ndim == 1
    assert check_legality(h, dependences_of(h)).ok


def test_shift_for_prefetch(mm):
    t = mm
    with pytest.raises(ScheduleError):
        shift_for_prefetch(t, [], 0)
    t2 = replace_at(t, (0,), replace(node_at(t, (0,)), child=Copy("g2r")))
    with pytest.raises(ScheduleError, match="not inside a k-tile loop"):
        shift_for_prefetch(replace_at(t, (0,), Copy("g2r")), [(0,)], 1)
    assert node_at(shift_for_prefetch(t2, [(0, 0)], 1), (0, 0)).shift == 1


# legality -------------------------------------------------------------------------

@pytest.mark.parametrize("name,cfg", [("matmul", ONE), ("matmul_bias_relu", ONE), ("sum_of_matmuls", ONE),
                                      ("relu_matmul", ONE), ("matmul", GenConfig((128, 128, 64), (64, 64, 32)))])
def test_sanctioned_pipelines_are_legal(dag, name, cfg):
    for s in stages(dag(name), cfg):
        rep = check_legality(s.tree, dependences_of(s.tree))
        assert rep.ok, (s.name, rep.violations)
        assert rep.checked > 0


def test_reversed_sequence_is_illegal(dag):
    t = stages(dag("matmul_bias_relu"), ONE)[-1].tree
    seq_path = next(p for p, n in walk(t) if isinstance(n, Sequence))
    seq = node_at(t, seq_path)
    bad = replace_at(t, seq_path, Sequence(tuple(reversed(seq.children))))
    rep = check_legality(bad, dependences_of(bad))
    assert not rep.ok and rep.violations[0][2] == "raw"


def test_contracted_matmul_legal_at_small_size(dag):
    t = stages(dag("matmul"), ONE)[-1].tree
    assert default_params(t) == {"M": 128, "N": 128, "K": 32}
    assert check_legality(t, dependences_of(t), {"M": 128, "N": 128, "K": 32}).ok


@pytest.mark.parametrize("name", ["matmul", "matmul_bias_relu", "sum_of_matmuls"])
@pytest.mark.parametrize("cfg", [ONE, GenConfig((128, 128, 64), (64, 64, 32)),
                                 GenConfig((64, 64, 64), (32, 32, 32), 32)])
def test_schedule_injective(dag, name, cfg):
    t = stages(dag(name), cfg)[-1].tree
    for sd in t.stmts:
        ts = timestamps(t, sd.name)
        assert len(np.unique(ts, axis=0)) == len(ts)


# instance preservation under random tilings ------------------------------------------

@settings(max_examples=40)
@given(st.sampled_from([1, 2, 4, 8, 16]), st.sampled_from([1, 2, 4, 8, 16]), st.sampled_from([1, 2, 4, 8]))
def test_tiling_preserves_instances(bm, bn, bk):
    t0 = build_initial_schedule(load_dag(DAGS / "matmul.json"))
    t1 = tile_band(t0, (0,), (bm, bn, bk))
    params = {"M": 16, "N": 16, "K": 8}
    pts = t0.stmt("S").points(params)
    outer, inner = node_at(t1, (0,)).exprs("S"), node_at(t1, (0, 0)).exprs("S")
    env = {**params, **pts}
    for d, size, o, i in zip("ijk", (bm, bn, bk), outer, inner):
        assert np.array_equal(o.evaluate(env) * size + i.evaluate(env), pts[d])
    ts = timestamps(t1, "S", params)
    assert len(np.unique(ts, axis=0)) == len(ts) == 16 * 16 * 8
    assert check_legality(t1, dependences_of(t1), params).ok


# rendering ----------------------------------------------------------------------------

def test_render_is_injective_on_goldens():
    texts = [render_tree_golden(n, DAGS) for n in TREE_GOLDENS]
    assert len(set(texts)) == len(texts)


def test_split_k_render_names_warp_z():
    assert "warpIdx_z" in render_tree_golden("matmul_splitk2_bound", DAGS)


def test_initial_render_is_two_lines():
    assert len(render_tree_golden("matmul_initial", DAGS).splitlines()) == 2
