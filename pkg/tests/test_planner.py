import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tcgen.banks import conflict_phases, segments
from tcgen.config import GenConfig
from tcgen.dag import load_dag
from tcgen.generate import generate
from tcgen.planner import (PlannerError, REORDER_OUT, SharedTile, choose_swizzle, count_conflicts, default_swizzle,
                           fragment_chunks, identity_swizzle, reorder_load_pattern, reorder_positions,
                           reorder_store_pattern, reorder_store_units, scratch_slot, storage_shape, swizzle_offset)
from conftest import DAGS

LAYOUTS = [("row", "row"), ("row", "col"), ("col", "row"), ("col", "col")]
SHAPES = [((128, 128, 64), (64, 64, 64)), ((128, 128, 64), (64, 64, 32)), ((128, 128, 128), (64, 64, 32))]
CONFIGS = [GenConfig(b, w, m, None, lay) for (b, w), m, lay in itertools.product(SHAPES, (16, 32), LAYOUTS)]


def ident(cfg):
    return cfg.tag()


# bank model against a direct per-phase count --------------------------------------

def phases_brute(addr, width):
    lanes = 128 // width
    bad = 0
    for p in range(0, 32, lanes):
        banks = {}
        for a in addr[p:p + lanes]:
            for w in range(a // 4, (a + width) // 4):
                banks.setdefault(w % 32, set()).add(w)
        bad += any(len(v) > 1 for v in banks.values())
    return bad


@given(st.sampled_from([4, 8, 16]), st.lists(st.integers(0, 511), min_size=32, max_size=32))
def test_conflict_phases_match_brute_force(width, slots):
    addr = np.array(slots) * width
    assert conflict_phases(addr, width) == phases_brute(list(addr), width)


@pytest.mark.parametrize("addr,width,want", [
    (np.arange(32) * 4, 4, 0),
    (np.zeros(32, int), 4, 0),  # broadcast
    (np.arange(32) * 128, 4, 1),
    (np.arange(32) * 16, 16, 0),
    (np.arange(32) * 32, 16, 4),
    (np.arange(32) * 8, 8, 0),
])
def test_conflict_examples(addr, width, want):
    assert conflict_phases(addr, width) == want


@pytest.mark.parametrize("addr,width,want", [(np.arange(32) * 16, 16, 4), (np.arange(32) * 64, 16, 16),
                                             (np.arange(32) * 8 + 4, 4, 2), (np.arange(32) * 16 + 8, 16, 5)])
def test_segments(addr, width, want):
    assert segments(addr, width) == want


def test_width_rejected():
    with pytest.raises(ValueError):
        conflict_phases(np.zeros(32, int), 2)


# swizzle ---------------------------------------------------------------------------

def emitted_tiles():
    seen = {}
    for cfg in CONFIGS:
        g = generate(load_dag(DAGS / "matmul.json"), cfg)
        for c in g.plan.copies:
            if c.swizzle is not None:
                seen[(c.shared.rows, c.shared.cols, c.swizzle.select)] = (c.shared, c.swizzle, cfg)
    return list(seen.values())


TILES = emitted_tiles()


@pytest.mark.parametrize("tile,swz,cfg", TILES, ids=[f"{t.role}{t.layout}{t.rows}x{t.cols}_{s.select}"
                                                   for t, s, _ in TILES])
def test_swizzle_bijective(tile, swz, cfg):
    r, v = np.meshgrid(np.arange(tile.rows), np.arange(tile.vpr), indexing="ij")
    slots = swizzle_offset(swz, r, v)
    assert np.array_equal(np.sort(slots.ravel()), np.arange(tile.rows * tile.vpr))
    # rows stay in place: XOR only permutes vectors within a row
    assert np.array_equal(slots // tile.vpr, r)


@pytest.mark.parametrize("cfg", CONFIGS, ids=ident)
def test_zero_conflicts(cfg):
    g = generate(load_dag(DAGS / "matmul.json"), cfg)
    for c in g.plan.of("r2s"):
        assert count_conflicts(c.shared, c.swizzle, cfg) == (0, 0)


def test_reorder_conflict_free():
    assert conflict_phases(reorder_store_pattern(), 8).sum() == 0
    assert conflict_phases(reorder_load_pattern(), 16).sum() == 0


@pytest.mark.parametrize("cfg", CONFIGS, ids=ident)
def test_unswizzled_control_conflicts(cfg):
    g = generate(load_dag(DAGS / "matmul.json"), cfg)
    total = 0
    for c in g.plan.of("r2s"):
        total += sum(count_conflicts(c.shared, identity_swizzle(c.shared.rows, c.shared.vpr), cfg))
    assert total > 0


def test_identity_control_reaches_simulator(monkeypatch, dag):
    import tcgen.planner as planner
    from tcgen.verify import evaluate
    monkeypatch.setattr(planner, "choose_swizzle", lambda tile, cfg: identity_swizzle(tile.rows, tile.vpr))
    cfg = GenConfig((128, 128, 64), (64, 64, 32), 16, None, ("row", "col"))
    rep = evaluate(generate(dag("matmul"), cfg), {"M": 128, "N": 128, "K": 64}, (0,))[0]
    assert rep.check("bitExact").passed
    assert not rep.check("bankConflicts").passed
    assert rep.diagnostics["bankConflictPhases"] > 0


def test_default_row_mod_swizzle_is_not_enough():
    # the textbook row-mod-vpr XOR conflicts on the m16 A fragment loads of a 64-wide k tile
    cfg = GenConfig((128, 128, 64), (64, 64, 32), 16, None, ("row", "col"))
    tile = SharedTile("s", "A", "A", "row", 128, 64)
    assert sum(count_conflicts(tile, default_swizzle(128, 8), cfg)) > 0
    assert count_conflicts(tile, choose_swizzle(tile, cfg), cfg) == (0, 0)


def test_swizzle_rejects():
    f = identity_swizzle(8, 4)
    with pytest.raises(PlannerError):
        swizzle_offset(f, 8, 0)
    with pytest.raises(PlannerError):
        identity_swizzle(8, 3)


def test_c_expr_matches_h():
    f = choose_swizzle(SharedTile("s", "A", "A", "row", 128, 64), CONFIGS[4])
    rows = np.arange(128)
    got = eval(f.c_expr("rows"), {"rows": rows})
    assert np.array_equal(got, f.h(rows))


@pytest.mark.parametrize("role,layout", [(r, l) for r in "AB" for l in ("row", "col")])
def test_storage_shape(role, layout):
    rows, cols = storage_shape(role, layout, 128, 32)
    k_contig = (role, layout) in (("A", "row"), ("B", "col"))
    assert (rows, cols) == ((128, 32) if k_contig else (32, 128))


@pytest.mark.parametrize("macro", [16, 32])
@pytest.mark.parametrize("role,layout", [(r, l) for r in "AB" for l in ("row", "col")])
def test_fragment_chunks_contiguous(macro, role, layout):
    n, off = fragment_chunks(role, layout, macro)
    assert n in (4, 8)
    assert off.shape[0] == 32 and (off[..., 1] % n == 0).all()


# reorder ---------------------------------------------------------------------------

def test_scratch_slot_is_permutation():
    assert sorted(scratch_slot(np.arange(32)).tolist()) == list(range(32))
    assert scratch_slot(np.arange(8)).tolist() == [0, 1, 2, 3, 4, 5, 6, 7]
    assert scratch_slot(np.arange(8, 16)).tolist() == [10, 11, 12, 13, 14, 15, 8, 9]


def test_reorder_units_cover_every_half_once():
    unit, half = reorder_store_units()
    cells = {(u, h) for u, h in zip(unit.ravel().tolist(), half.ravel().tolist())}
    assert cells == {(u, h) for u in range(32) for h in range(2)}


@pytest.mark.parametrize("macro", [16, 32])
def test_reorder_positions_tile_the_macro(macro):
    pos = reorder_positions(macro)
    cover = np.zeros((macro, macro), int)
    for r, c in pos.reshape(-1, 2):
        cover[r, c:c + 8] += 1
    assert (cover == 1).all()
    assert REORDER_OUT == (0, 1, 4, 5, 2, 3, 6, 7)
