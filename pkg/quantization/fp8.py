# quantization/fp8.py
"""
E4M3 emulation: 1 sign bit, 4 exponent bits (bias 7), 3 mantissa bits, no
infinities, NaN only at S.1111.111. Largest finite value 448, smallest
subnormal 2**-9. Values are rounded to the nearest grid point with ties to an
even mantissa and saturate at +-448.
"""
from typing import Union

import numpy as np

import settings
from utils.exceptions import LabErrorReason, require

EXP_BITS = 4
MANT_BITS = 3
BIAS = 7
FP8_MAX = settings.QUANTIZATION["FP8_MAX"]
MIN_NORMAL_EXP = 1 - BIAS
MIN_SUBNORMAL = 2.0 ** (MIN_NORMAL_EXP - MANT_BITS)


def decode(code: int) -> float:
    """Value of one 8-bit E4M3 code."""
    sign = -1.0 if (code >> 7) & 0x1 else 1.0
    exponent = (code >> MANT_BITS) & 0xF
    mantissa = code & 0x7
    if exponent == 0xF and mantissa == 0x7:
        return float("nan")
    if exponent == 0:
        return sign * mantissa * MIN_SUBNORMAL
    return sign * (1.0 + mantissa / 8.0) * 2.0 ** (exponent - BIAS)


def enumerate_grid() -> np.ndarray:
    """All 256 code values in code order (two of them NaN)."""
    return np.array([decode(code) for code in range(256)])


def round_to_e4m3(x: np.ndarray) -> np.ndarray:
    """Nearest E4M3 value of every element, ties to even, saturating at +-448."""
    x = np.asarray(x, dtype=np.float64)
    magnitude = np.minimum(np.abs(x), FP8_MAX)
    _, exponent = np.frexp(magnitude)
    # grid spacing of the binade holding |x|; the subnormal range shares the lowest normal spacing
    quantum = np.ldexp(1.0, np.maximum(exponent - 1, MIN_NORMAL_EXP) - MANT_BITS)
    return np.copysign(np.rint(magnitude / quantum) * quantum, x)


def fp8_qdq(x: Union[np.ndarray, float], scale: Union[np.ndarray, float]) -> np.ndarray:
    """dequant(round_to_e4m3(x / scale)) * scale, returned in the dtype of ``x``."""
    x_arr = np.asarray(x)
    scale = np.asarray(scale, dtype=np.float64)
    require(np.all(scale > 0), LabErrorReason.INVALID_ARGUMENT, "quantization scale must be positive")
    require(np.all(np.isfinite(x_arr)), LabErrorReason.NON_FINITE, "cannot quantize a non-finite value")
    out_dtype = x_arr.dtype if np.issubdtype(x_arr.dtype, np.floating) else np.float64
    return (round_to_e4m3(x_arr.astype(np.float64) / scale) * scale).astype(out_dtype)


def identity_qdq(x: Union[np.ndarray, float], scale: Union[np.ndarray, float]) -> np.ndarray:
    """Infinite-precision stand-in with the same signature."""
    return np.asarray(x)


def absmax_scale(absmax: Union[np.ndarray, float]) -> np.ndarray:
    """absmax / 448, with 1 where the maximum is zero."""
    absmax = np.asarray(absmax, dtype=np.float64)
    return np.where(absmax > 0, absmax / FP8_MAX, 1.0)
