import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcgen.half import ulp32
from tcgen.layout import (LayoutError, OwnerMap, fragment_array_shape, macro_owner_map, mma_owner_map,
                          quad_pair_of, quad_pair_threads, quadrant_of, swap_quad_pairs)
from tcgen.simulator import exec_macro_mma, exec_mma_m8n8k4

ROLES = [("A", "row"), ("A", "col"), ("B", "row"), ("B", "col"), ("C", "row")]

# m8n8k4 accumulator owners of quad-pair 0, with row 6 reading 16 16 18 18 (see ledger)
ACC_GRID = """\
 0  0  2  2  0  0  2  2
 1  1  3  3  1  1  3  3
 0  0  2  2  0  0  2  2
 1  1  3  3  1  1  3  3
16 16 18 18 16 16 18 18
17 17 19 19 17 17 19 19
16 16 18 18 16 16 18 18
17 17 19 19 17 17 19 19"""


@pytest.mark.parametrize("t,q", [(0, 0), (3, 0), (19, 0), (7, 1), (20, 1), (8, 2), (31, 3)])
def test_quad_pair_of(t, q):
    assert quad_pair_of(t) == q


def test_quad_pairs_partition_the_warp():
    groups = [quad_pair_threads(j) for j in range(4)]
    assert sorted(itertools.chain(*groups)) == list(range(32))
    for j, g in enumerate(groups):
        assert len(g) == 8 and {quad_pair_of(t) for t in g} == {j}
    with pytest.raises(LayoutError):
        quad_pair_of(32)


@pytest.mark.parametrize("r", range(8))
def test_a_row_major_rows(r):
    om = mma_owner_map("A", "row")
    t = (r // 4) * 12 + r
    assert om.fragment(t) == tuple((r, k) for k in range(4))


@pytest.mark.parametrize("c", range(8))
def test_b_col_major_columns(c):
    om = mma_owner_map("B", "col")
    t = (c // 4) * 12 + c
    assert om.fragment(t) == tuple((k, c) for k in range(4))


def test_accumulator_grid():
    om = mma_owner_map("C")
    assert om.grid() == ACC_GRID
    assert {t for t, _ in om.owners(1, 2)} == {3}
    assert {t for t, _ in om.owners(0, 0)} == {0}
    assert {t for t, _ in om.owners(4, 0)} == {16}
    assert ACC_GRID.splitlines()[1].split() == "1 1 3 3 1 1 3 3".split()


def _check_coverage(om: OwnerMap):
    ent = om.entries()
    assert set(ent) == {(r, c) for r in range(om.shape[0]) for c in range(om.shape[1])}
    for fr in om.slots:
        assert len(fr) == om.frag_len
    owners_per = {len(v) for v in ent.values()}
    return owners_per


@pytest.mark.parametrize("role,layout", ROLES)
def test_mma_maps_cover_and_stay_in_quad_pair(role, layout):
    om = mma_owner_map(role, layout)
    owners = _check_coverage(om)
    assert om.frag_len == (8 if role == "C" else 4)
    assert owners == {1}
    assert set(om.threads) == set(quad_pair_threads(0))


@pytest.mark.parametrize("macro,la,lc", [(16, 8, 8), (32, 16, 32)])
@pytest.mark.parametrize("role,layout", ROLES)
def test_macro_fragment_lengths(macro, la, lc, role, layout):
    om = macro_owner_map(macro, role, layout)
    _check_coverage(om)
    assert om.frag_len == (lc if role == "C" else la)
    if role == "C":
        assert all(len(v) == 1 for v in om.entries().values())


def test_macro_text_facts():
    a = macro_owner_map(16, "A", "row")
    b = macro_owner_map(16, "B", "col")
    c = macro_owner_map(16, "C")
    assert {t for t, _ in a.entries()[(0, 0)]} >= {0, 8}
    assert {t for t, _ in b.entries()[(0, 0)]} >= {0, 4}
    assert {(0, 0), (0, 1), (0, 4), (0, 5)} <= set(c.fragment(0))
    assert {(0, 2), (0, 3), (0, 6), (0, 7)} <= set(c.fragment(2))
    assert all(e[0] == 0 for e in a.fragment(0)) and len(a.fragment(0)) == 8


def _assignment_ok(quads):
    """Text facts under a candidate quad-pair -> quadrant assignment, built from the m8n8k4 maps alone."""
    a8, b8 = mma_owner_map("A", "row"), mma_owner_map("B", "col")
    a_row0, b_col0 = set(), set()
    for q, (m0, n0) in enumerate(quads):
        for i, t in enumerate(quad_pair_threads(q)):
            if any(r + m0 == 0 for r, _ in a8.slots[i]):
                a_row0.add(t)
            if any(c + n0 == 0 for _, c in b8.slots[i]):
                b_col0.add(t)
    c0 = {(r + quads[0][0], c + quads[0][1]) for r, c in mma_owner_map("C").slots[0]}
    return {0, 8} <= a_row0 and {0, 4} <= b_col0 and {(0, 0), (0, 1), (0, 4), (0, 5)} <= c0


def test_quadrant_assignment_is_forced():
    quadrants = [(0, 0), (0, 8), (8, 0), (8, 8)]
    survivors = [p for p in itertools.permutations(quadrants) if _assignment_ok(p)]
    assert survivors == [tuple(quadrant_of(q) for q in range(4))]
    assert [quadrant_of(q) for q in range(4)] == [(0, 0), (8, 0), (0, 8), (8, 8)]


@pytest.mark.parametrize("layout", ["row", "col"])
@pytest.mark.parametrize("macro", [16, 32])
def test_row_col_duality(macro, layout):
    # A in one layout is B in the other, transposed, once quad-pairs 1 and 2 trade quadrants
    a = macro_owner_map(macro, "A", layout)
    b = macro_owner_map(macro, "B", "col" if layout == "row" else "row")
    swapped = tuple(tuple((c, r) for r, c in fr) for fr in a.slots)
    assert tuple(swapped[swap_quad_pairs(t)] for t in range(32)) == b.slots


@pytest.mark.parametrize("role,layout,tile,macro,dims", [
    ("A", "row", (64, 8), 16, (4, 1)),
    ("A", "col", (8, 64), 16, (1, 4)),
    ("B", "col", (64, 8), 16, (4, 1)),
    ("C", "row", (64, 64), 16, (4, 4)),
    ("A", "row", (16, 8), 16, (1, 1)),
    ("A", "row", (64, 8), 32, (2, 1)),
    ("C", "row", (64, 64), 32, (2, 2)),
])
def test_fragment_array_shape(role, layout, tile, macro, dims):
    fa = fragment_array_shape(role, layout, tile, macro)
    assert fa.dims == dims
    assert tuple(d * f for d, f in zip(fa.dims, fa.factors)) == tile


def test_fragment_array_shape_rejects_ragged_tile():
    with pytest.raises(LayoutError):
        fragment_array_shape("A", "row", (24, 8), 16)


# executing through the maps -------------------------------------------------------

def _scatter(om: OwnerMap, mat: np.ndarray) -> np.ndarray:
    r, c = om.index_tables()
    return mat[r, c]


def _gather(om: OwnerMap, frags: np.ndarray) -> np.ndarray:
    out = np.full(om.shape, np.nan, dtype=np.float64)
    r, c = om.index_tables()
    out[r, c] = frags
    return out


def _scale(a, b, c):
    # fp32 rounding happens at the size of the partial sums, not of the (possibly cancelled) result
    return np.abs(a.astype(np.float64)) @ np.abs(b.astype(np.float64)) + np.abs(c)


def test_exec_mma_identity_rows():
    rng = np.random.default_rng(0)
    a = np.zeros((8, 4), np.float16)
    a[:4, :4] = np.eye(4)
    b = rng.uniform(-1, 1, (4, 8)).astype(np.float16)
    fa, fb = _scatter(mma_owner_map("A", "row"), a), _scatter(mma_owner_map("B", "col"), b)
    fc = np.zeros((8, 8), np.float32)
    c = _gather(mma_owner_map("C"), exec_mma_m8n8k4(fa, fb, fc))
    assert np.array_equal(c[:4], b.astype(np.float64))
    assert np.all(c[4:] == 0)


@pytest.mark.parametrize("la,lb", [("row", "col"), ("col", "row"), ("row", "row"), ("col", "col")])
def test_exec_mma_all_ones(la, lb):
    ones_a, ones_b = np.ones((8, 4), np.float16), np.ones((4, 8), np.float16)
    fa, fb = _scatter(mma_owner_map("A", la), ones_a), _scatter(mma_owner_map("B", lb), ones_b)
    fc = np.full((8, 8), 1.5, np.float32)
    assert np.all(exec_mma_m8n8k4(fa, fb, fc, la, lb) == 5.5)


def test_exec_mma_random_within_4_ulp():
    rng = np.random.default_rng(1)
    om_a, om_b, om_c = mma_owner_map("A", "row"), mma_owner_map("B", "col"), mma_owner_map("C")
    for _ in range(1000):
        a = rng.uniform(-1, 1, (8, 4)).astype(np.float16)
        b = rng.uniform(-1, 1, (4, 8)).astype(np.float16)
        c = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
        out = exec_mma_m8n8k4(_scatter(om_a, a), _scatter(om_b, b), _scatter(om_c, c))
        ref = a.astype(np.float64) @ b.astype(np.float64) + c
        got = _gather(om_c, out)
        assert np.all(np.abs(got - ref) <= 4 * ulp32(_scale(a, b, c)))


def _compose(macro, la, lb, fa, fb, fc):
    """Macro-MMA from per-quad-pair m8n8k4 issues, using only the owner maps' slot order."""
    subs = macro // 16
    out = fc.copy()
    for q in range(4):
        ts = quad_pair_threads(q)
        for ah in range(subs):
            for bh in range(subs):
                cs = slice(8 * (ah * subs + bh), 8 * (ah * subs + bh) + 8)
                for step in range(2):
                    sa = slice(8 * ah + 4 * step, 8 * ah + 4 * step + 4)
                    sb = slice(8 * bh + 4 * step, 8 * bh + 4 * step + 4)
                    out[ts, cs] = exec_mma_m8n8k4(fa[ts, sa], fb[ts, sb], out[ts, cs], la, lb)
    return out


@pytest.mark.parametrize("macro", [16, 32])
@pytest.mark.parametrize("la,lb", [("row", "col"), ("col", "row"), ("row", "row"), ("col", "col")])
def test_macro_composition_matches_fp64(macro, la, lb):
    rng = np.random.default_rng(macro)
    oa, ob, oc = (macro_owner_map(macro, "A", la), macro_owner_map(macro, "B", lb), macro_owner_map(macro, "C"))
    for _ in range(1000 if (la, lb) == ("row", "col") else 100):
        a = rng.uniform(-1, 1, (macro, 8)).astype(np.float16)
        b = rng.uniform(-1, 1, (8, macro)).astype(np.float16)
        c = rng.uniform(-1, 1, (macro, macro)).astype(np.float32)
        fa, fb, fc = _scatter(oa, a), _scatter(ob, b), _scatter(oc, c)
        out = _compose(macro, la, lb, fa, fb, fc)
        got = _gather(oc, out)
        ref = a.astype(np.float64) @ b.astype(np.float64) + c
        assert np.all(np.abs(got - ref) <= 4 * ulp32(_scale(a, b, c)))
        assert np.array_equal(exec_macro_mma(fa, fb, fc, macro, la, lb), out)


@settings(max_examples=25)
@given(st.sampled_from([16, 32]), st.integers(0, 2 ** 32 - 1))
def test_simulator_macro_matches_composition(macro, seed):
    rng = np.random.default_rng(seed)
    oa, ob, oc = macro_owner_map(macro, "A", "row"), macro_owner_map(macro, "B", "col"), macro_owner_map(macro, "C")
    fa = _scatter(oa, rng.uniform(-4, 4, (macro, 8)).astype(np.float16))
    fb = _scatter(ob, rng.uniform(-4, 4, (8, macro)).astype(np.float16))
    fc = _scatter(oc, rng.uniform(-4, 4, (macro, macro)).astype(np.float32))
    assert np.array_equal(exec_macro_mma(fa, fb, fc, macro), _compose(macro, "row", "col", fa, fb, fc))
