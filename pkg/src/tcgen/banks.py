"""Shared-memory bank model and global segment counting for one warp access."""
from __future__ import annotations

import numpy as np

N_BANKS = 32
BANK_BYTES = 4
SEGMENT = 128


def lanes_per_phase(width: int) -> int:
    if width not in (4, 8, 16):
        raise ValueError(f"unsupported access width {width}")
    return N_BANKS * BANK_BYTES // width


def conflict_phases(addr: np.ndarray, width: int, active: np.ndarray | None = None) -> np.ndarray:
    """Count conflicted phases per warp access.

    ``addr`` has shape (..., 32): byte address of each lane's access in one warp
    instruction. A phase of 128/width lanes conflicts when some bank is asked
    for more than one distinct 4-byte word; equal addresses broadcast.
    Returns an integer array of shape ``addr.shape[:-1]``.
    """
    addr = np.asarray(addr, dtype=np.int64)
    if active is None:
        active = np.ones(addr.shape, dtype=bool)
    lp = lanes_per_phase(width)
    words_per = width // BANK_BYTES
    lead = addr.shape[:-1]
    a = addr.reshape(lead + (32 // lp, lp))
    act = np.broadcast_to(active, addr.shape).reshape(lead + (32 // lp, lp))
    words = (a // BANK_BYTES)[..., None] + np.arange(words_per)  # (..., ph, lp, wpl)
    words = words.reshape(lead + (32 // lp, lp * words_per))
    wact = np.repeat(act, words_per, axis=-1)
    # distinct words per bank: sort words, drop duplicates, count per bank
    big = np.iinfo(np.int64).max
    w = np.where(wact, words, big)
    w = np.sort(w, axis=-1)
    first = np.ones(w.shape, dtype=bool)
    first[..., 1:] = w[..., 1:] != w[..., :-1]
    valid = first & (w != big)
    bank = np.where(valid, w % N_BANKS, -1)
    per_bank = (bank[..., None] == np.arange(N_BANKS)).sum(axis=-2)
    return (per_bank.max(axis=-1) > 1).sum(axis=-1)


def segments(addr: np.ndarray, width: int, active: np.ndarray | None = None) -> np.ndarray:
    """Distinct 128-byte segments touched per warp access; shape ``addr.shape[:-1]``."""
    addr = np.asarray(addr, dtype=np.int64)
    if active is None:
        active = np.ones(addr.shape, dtype=bool)
    act = np.broadcast_to(active, addr.shape)
    lo = addr // SEGMENT
    hi = (addr + width - 1) // SEGMENT
    big = np.iinfo(np.int64).max
    segs = np.concatenate([np.where(act, lo, big), np.where(act, hi, big)], axis=-1)
    segs = np.sort(segs, axis=-1)
    first = np.ones(segs.shape, dtype=bool)
    first[..., 1:] = segs[..., 1:] != segs[..., :-1]
    return (first & (segs != big)).sum(axis=-1)
