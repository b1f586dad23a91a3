"""IEEE binary16 conversions. numpy's float32->float16 cast rounds to nearest even."""
from __future__ import annotations

import numpy as np

CANONICAL_NAN = 0x7E00


def f32_to_f16(x) -> np.ndarray:
    """fp32 values -> binary16 bit patterns (uint16), NaNs canonicalized."""
    with np.errstate(over="ignore"):  # overflow to inf is the IEEE result
        h = np.asarray(x, dtype=np.float32).astype(np.float16)
    bits = h.view(np.uint16).copy()
    bits[np.isnan(h)] = CANONICAL_NAN
    return bits


def f16_to_f32(bits) -> np.ndarray:
    """binary16 bit patterns -> fp32 (exact widening)."""
    return np.asarray(bits, dtype=np.uint16).view(np.float16).astype(np.float32)


def round_half(x) -> np.ndarray:
    """Round fp32 values to fp16 and return them as float16 (canonical NaN)."""
    return f32_to_f16(x).view(np.float16)


def widen(h) -> np.ndarray:
    return np.asarray(h, dtype=np.float16).astype(np.float32)


def ulp32(x) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float32))
    return np.spacing(x).astype(np.float64)


def _sigmoid32(x):
    return np.float32(1) / (np.float32(1) + np.exp(-x))


# pointwise ops evaluated in fp32 (kernel numerics) and fp64 (tolerance reference)
FP32_OPS = {"relu": lambda x: np.fmax(x, np.float32(0)), "sigmoid": _sigmoid32, "tanh": np.tanh,
            "add": np.add, "sub": np.subtract}
FP64_OPS = {"relu": lambda x: np.fmax(x, 0.0), "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)), "tanh": np.tanh,
            "add": np.add, "sub": np.subtract}
