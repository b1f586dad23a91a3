"""Thread-to-element maps for mma.sync.m8n8k4 and the warp-wide macro-MMAs built from it.

Coordinates are always logical: A is (m, k), B is (k, n), the accumulator is
(m, n). Layout only changes which elements land in a thread's fragment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

WARP = 32
MACRO_SHAPES = {16: (16, 16, 8), 32: (32, 32, 8)}


class LayoutError(ValueError):
    pass


def quad_pair_of(t: int) -> int:
    if not 0 <= t < WARP:
        raise LayoutError(f"thread id {t} outside the warp")
    return (t // 4) % 4


def quad_pair_threads(j: int) -> list[int]:
    return [4 * j + x for x in range(4)] + [4 * j + 16 + x for x in range(4)]


def _lane(t: int) -> tuple[int, int]:
    return t % 4, int(t >= 16)


# m8n8k4 within one quad-pair ---------------------------------------------------

def _mma_slots(role: str, layout: str, t: int) -> list[tuple[int, int]]:
    l, hi = _lane(t)
    if role == "A":
        if layout == "row":
            return [(l + 4 * hi, k) for k in range(4)]
        return [(4 * hi + i, l) for i in range(4)]
    if role == "B":
        if layout == "col":
            return [(k, l + 4 * hi) for k in range(4)]
        return [(l, 4 * hi + j) for j in range(4)]
    if role == "C":
        return [((i & 2) + (l % 2) + 4 * hi, (i & 4) + (l & 2) + (i & 1)) for i in range(8)]
    raise LayoutError(f"unknown role {role!r}")


# macro composition -------------------------------------------------------------

def quadrant_of(q: int) -> tuple[int, int]:
    """Quad-pair q computes accumulator rows 8*(q%2).. and cols 8*(q//2).. of a 16x16 tile."""
    return 8 * (q % 2), 8 * (q // 2)


def _m16_slots(role: str, layout: str, t: int) -> list[tuple[int, int]]:
    q = quad_pair_of(t)
    m0, n0 = quadrant_of(q)
    out = []
    if role == "C":
        return [(r + m0, c + n0) for r, c in _mma_slots("C", "", t)]
    for step in range(2):
        for r, c in _mma_slots(role, layout, t):
            if role == "A":
                out.append((r + m0, c + 4 * step))
            else:
                out.append((r + 4 * step, c + n0))
    return out


def _m32_slots(role: str, layout: str, t: int) -> list[tuple[int, int]]:
    base = _m16_slots(role, layout, t)
    out = []
    if role == "A":
        for ah in range(2):
            out += [(r + 16 * ah, c) for r, c in base]
    elif role == "B":
        for bh in range(2):
            out += [(r, c + 16 * bh) for r, c in base]
    else:
        for ah in range(2):
            for bh in range(2):
                out += [(r + 16 * ah, c + 16 * bh) for r, c in base]
    return out


@dataclass(frozen=True)
class OwnerMap:
    role: str
    shape: tuple[int, int]
    layout: str
    threads: tuple[int, ...]
    slots: tuple[tuple[tuple[int, int], ...], ...]  # per listed thread, element of each slot

    @property
    def frag_len(self) -> int:
        return len(self.slots[0])

    def fragment(self, t: int) -> tuple[tuple[int, int], ...]:
        return self.slots[self.threads.index(t)]

    def owners(self, r: int, c: int) -> set[tuple[int, int]]:
        return {(t, s) for t, fr in zip(self.threads, self.slots) for s, e in enumerate(fr) if e == (r, c)}

    def entries(self) -> dict[tuple[int, int], set[tuple[int, int]]]:
        out: dict[tuple[int, int], set[tuple[int, int]]] = {}
        for t, fr in zip(self.threads, self.slots):
            for s, e in enumerate(fr):
                out.setdefault(e, set()).add((t, s))
        return out

    def index_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, cols) arrays of shape (threads, frag_len)."""
        arr = np.array(self.slots, dtype=np.int64)
        return arr[..., 0], arr[..., 1]

    def grid(self) -> str:
        """Text grid of owning thread ids, one matrix row per line."""
        ent = self.entries()
        lines = []
        for r in range(self.shape[0]):
            cells = []
            for c in range(self.shape[1]):
                ts = sorted({t for t, _ in ent.get((r, c), ())})
                cells.append("/".join(str(t) for t in ts) or ".")
            lines.append(" ".join(f"{x:>2}" for x in cells))
        return "\n".join(lines)


_ROLE_SHAPE = {"A": (0, 2), "B": (2, 1), "C": (0, 1)}


def _shape_for(role, mnk):
    a, b = _ROLE_SHAPE[role]
    return mnk[a], mnk[b]


def _check(role, layout):
    if role not in ("A", "B", "C"):
        raise LayoutError(f"unknown role {role!r}")
    if role != "C" and layout not in ("row", "col"):
        raise LayoutError(f"unknown layout {layout!r}")


@lru_cache(maxsize=None)
def mma_owner_map(role: str, layout: str = "row") -> OwnerMap:
    """m8n8k4 map for quad-pair 0 (threads 0-3 and 16-19)."""
    _check(role, layout)
    ts = tuple(quad_pair_threads(0))
    lay = "" if role == "C" else layout
    return OwnerMap(role, _shape_for(role, (8, 8, 4)), lay, ts,
                    tuple(tuple(_mma_slots(role, layout, t)) for t in ts))


@lru_cache(maxsize=None)
def macro_owner_map(macro: int, role: str, layout: str = "row") -> OwnerMap:
    _check(role, layout)
    if macro not in MACRO_SHAPES:
        raise LayoutError(f"unsupported macro shape {macro}")
    fn = _m16_slots if macro == 16 else _m32_slots
    lay = "" if role == "C" else layout
    ts = tuple(range(WARP))
    return OwnerMap(role, _shape_for(role, MACRO_SHAPES[macro]), lay, ts,
                    tuple(tuple(fn(role, layout, t)) for t in ts))


def contraction_factors(role: str, layout: str, macro: int) -> tuple[int, int]:
    """Fragment footprint in storage orientation (rows x cols of the stored tile)."""
    m = MACRO_SHAPES[macro][0]
    if role == "C":
        return (m, m)
    if (role, layout) in (("A", "row"), ("B", "col")):
        return (m, 8)
    return (8, m)


@dataclass(frozen=True)
class FragmentArrayShape:
    role: str
    layout: str
    dims: tuple[int, int]
    factors: tuple[int, int]


def fragment_array_shape(role: str, layout: str, warp_tile: tuple[int, int], macro: int) -> FragmentArrayShape:
    """``warp_tile`` is given in storage orientation, as are the returned dims."""
    f = contraction_factors(role, layout, macro)
    if warp_tile[0] % f[0] or warp_tile[1] % f[1]:
        raise LayoutError(f"{role} tile {warp_tile} not divisible by contraction factors {f}")
    return FragmentArrayShape(role, layout, (warp_tile[0] // f[0], warp_tile[1] // f[1]), f)


def swap_quad_pairs(t: int) -> int:
    """Thread relabeling that exchanges quad-pairs 1 and 2 (transposes the quadrant grid)."""
    q = quad_pair_of(t)
    q2 = (q % 2) * 2 + q // 2
    return t + 4 * (q2 - q)
