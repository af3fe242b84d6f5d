"""Immutable N-d tensors and per-tensor affine int8 quantization.

Real values and int8 quanta are related by one affine map per tensor:

    real = scale * (quantum - zero_point)
    quantum = clamp(round(real / scale) + zero_point, -128, 127)

Quantization is asymmetric over the full [-128, 127] range, and rounding
is always half-away-from-zero so results are bit-identical across hosts.
Images and feature maps use row-major NHWC layout throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RegolithError

QMIN = -128
QMAX = 127

_DTYPE_NAMES = {
    np.dtype(np.float32): "float32",
    np.dtype(np.int8): "int8",
    np.dtype(np.int32): "int32",
}
DTYPE_WIDTHS = {"float32": 4, "int8": 1, "int32": 4}


class InvalidRangeError(RegolithError):
    """Non-finite or inverted calibration range."""


class TensorError(RegolithError):
    """Malformed tensor construction or dtype misuse."""


def round_half_away(x):
    """Round to nearest integer with halves away from zero.

    numpy's ``round`` is half-to-even; the toolkit pins the tie rule
    instead so quantized results never depend on the host's rounding.
    Returns a float array (or scalar) of rounded values.
    """
    x = np.asarray(x)
    out = np.copysign(np.floor(np.abs(x) + 0.5), x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class QuantParams:
    """One (scale, zero_point) pair covering a whole tensor."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidRangeError(f"scale must be positive and finite, got {self.scale!r}")
        if not QMIN <= int(self.zero_point) <= QMAX:
            raise InvalidRangeError(
                f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]"
            )


@dataclass(frozen=True)
class Tensor:
    """A read-only numeric array plus optional quantization parameters.

    Construction freezes the backing array (``writeable=False``), so
    tensors are safe to share across threads. int8 tensors must carry
    qparams; float32 tensors must not.
    """

    data: np.ndarray
    qparams: QuantParams | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.dtype not in _DTYPE_NAMES:
            raise TensorError(f"unsupported dtype {arr.dtype}; want float32, int8 or int32")
        if arr.dtype == np.int8 and self.qparams is None:
            raise TensorError("int8 tensors require qparams")
        if arr.dtype == np.float32 and self.qparams is not None:
            raise TensorError("float32 tensors must not carry qparams")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def nbytes(self) -> int:
        return self.size * DTYPE_WIDTHS[self.dtype]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self.qparams == other.qparams
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def compute_qparams(min_val: float, max_val: float) -> QuantParams:
    """Derive quantization parameters from an observed value range.

    The range is widened to include 0.0 before solving the affine
    constraints, which guarantees real zero quantizes with no rounding
    error. Constant ranges (min == max) get a fallback scale so constant
    tensors still round-trip: 1.0 for an all-zero range, otherwise
    max(|max_val|, 1) / 127 with zero_point 0.
    """
    min_val = float(min_val)
    max_val = float(max_val)
    if not (math.isfinite(min_val) and math.isfinite(max_val)):
        raise InvalidRangeError(f"non-finite range ({min_val}, {max_val})")
    if min_val > max_val:
        raise InvalidRangeError(f"min {min_val} exceeds max {max_val}")
    if min_val == max_val:
        if max_val == 0.0:
            return QuantParams(1.0, 0)
        return QuantParams(max(abs(max_val), 1.0) / QMAX, 0)
    lo = min(min_val, 0.0)
    hi = max(max_val, 0.0)
    scale = (hi - lo) / (QMAX - QMIN)
    zero_point = int(QMIN - round_half_away(lo / scale))
    zero_point = max(QMIN, min(QMAX, zero_point))
    return QuantParams(scale, zero_point)


def quantize_array(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """float array -> int8 array under ``qp`` (saturating, half-away rounding)."""
    q = round_half_away(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, QMIN, QMAX).astype(np.int8)


def dequantize_array(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    """int8 array -> float32 array under ``qp``."""
    return ((np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale).astype(np.float32)


def quantize(t: Tensor, qp: QuantParams) -> Tensor:
    """Quantize a float32 tensor to int8 with the given parameters."""
    if t.dtype != "float32":
        raise TensorError(f"quantize expects a float32 tensor, got {t.dtype}")
    return Tensor(quantize_array(t.data, qp), qparams=qp)


def dequantize(t: Tensor, qp: QuantParams | None = None) -> Tensor:
    """Dequantize an int8 tensor back to float32.

    ``qp`` defaults to the tensor's own parameters.
    """
    if t.dtype != "int8":
        raise TensorError(f"dequantize expects an int8 tensor, got {t.dtype}")
    qp = qp if qp is not None else t.qparams
    return Tensor(dequantize_array(t.data, qp))
