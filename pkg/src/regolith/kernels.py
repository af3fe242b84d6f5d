"""Layer kernels: float32 reference arithmetic and integer-only int8 arithmetic.

Float path
    Accumulation happens in IEEE double and results are narrowed to
    float32 at each layer boundary.

Int8 path
    Fully integer: int8 operands, int32 accumulators (saturating), and a
    fixed-point requantization step instead of float rescaling. The
    requantization recipe, used everywhere an int32 value re-enters the
    int8 domain:

        M = in_scale * w_scale / out_scale            (real multiplier)
        M is normalized as  M = mult / 2**shift  with mult an int32 in
        [2**30, 2**31), via frexp and rounding of the 31-bit mantissa.

        requant(acc) = clamp(round_half_away(acc * mult / 2**shift)
                             + out_zero_point, -128, 127)

    acc * mult is exact in int64 (|acc| < 2**31, mult < 2**31) and the
    divide-by-power-of-two rounds half away from zero, so the hot path
    involves no float arithmetic and is bit-stable across hosts.

    Matrix products on the int8 path run on float32 BLAS over
    integer-valued operands, chunked so every partial sum stays below
    2**24 and is therefore exact; this mirrors the narrow arithmetic that
    makes int8 attractive on microcontrollers while keeping results
    identical to a pure integer implementation.
"""

from __future__ import annotations

import math

import numpy as np

from .model import same_padding
from .tensor import QMAX, QMIN, QuantParams, round_half_away

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

# |(q - zp)| <= 255 and |(w - wzp)| <= 255, so products stay below 2**17
# and any partial sum of up to 256 of them stays below 2**24: exact in f32.
_MATMUL_CHUNK = 256


# ---------------------------------------------------------------------------
# fixed-point requantization


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Normalize a positive real multiplier to (mult, shift).

    m ~= mult * 2**-shift with mult in [2**30, 2**31). shift may be
    negative for multipliers >= 2 (the apply step then shifts left).
    """
    if not (math.isfinite(m) and m > 0):
        raise ValueError(f"multiplier must be positive and finite, got {m!r}")
    frac, exp = math.frexp(m)  # m = frac * 2**exp, frac in [0.5, 1)
    mult = int(round_half_away(frac * (1 << 31)))
    if mult == 1 << 31:
        mult >>= 1
        exp += 1
    return mult, 31 - exp


def apply_multiplier(acc, mult: int, shift: int):
    """acc * mult / 2**shift with half-away rounding, in exact int64 math."""
    product = np.asarray(acc, dtype=np.int64) * np.int64(mult)
    if shift <= 0:
        return product << (-shift)
    half = np.int64(1) << (shift - 1)
    magnitude = (np.abs(product) + half) >> shift
    return np.where(product < 0, -magnitude, magnitude)


def saturate_int32(acc):
    return np.clip(np.asarray(acc, dtype=np.int64), INT32_MIN, INT32_MAX)


def requantize(acc, in_scale: float, w_scale: float, out_qp: QuantParams):
    """Map int32 accumulators into the int8 output domain.

    acc carries values in units of in_scale * w_scale; the result is the
    nearest int8 quantum under out_qp, saturating at the rails.
    """
    if in_scale <= 0 or w_scale <= 0:
        raise ValueError("scales must be positive")
    mult, shift = quantize_multiplier(in_scale * w_scale / out_qp.scale)
    scaled = apply_multiplier(saturate_int32(acc), mult, shift) + out_qp.zero_point
    result = np.clip(scaled, QMIN, QMAX).astype(np.int8)
    return result if result.ndim else np.int8(result)


def rescale(q, in_qp: QuantParams, out_qp: QuantParams):
    """Re-express int8 values under different qparams (one rounding)."""
    if in_qp == out_qp:
        return np.asarray(q, dtype=np.int8)
    mult, shift = quantize_multiplier(in_qp.scale / out_qp.scale)
    shifted = np.asarray(q, dtype=np.int64) - in_qp.zero_point
    scaled = apply_multiplier(shifted, mult, shift) + out_qp.zero_point
    return np.clip(scaled, QMIN, QMAX).astype(np.int8)


def quantized_bounds(out_qp: QuantParams, lo: float, hi: float) -> tuple[int, int]:
    """Clamp rail quanta for a fused activation interval [lo, hi]."""
    qlo = int(np.clip(round_half_away(lo / out_qp.scale) + out_qp.zero_point, QMIN, QMAX))
    qhi = int(np.clip(round_half_away(hi / out_qp.scale) + out_qp.zero_point, QMIN, QMAX))
    return qlo, qhi


def _exact_int_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matmul via chunked float32 BLAS; exact, returns int64.

    Operands must be integer-valued with |a| <= 255 and |b| <= 255.
    """
    a32 = np.ascontiguousarray(a, dtype=np.float32)
    b32 = np.ascontiguousarray(b, dtype=np.float32)
    k = a32.shape[-1]
    if k <= _MATMUL_CHUNK:
        return (a32 @ b32).astype(np.int64)
    total = np.zeros(a32.shape[:-1] + (b32.shape[-1],), dtype=np.float64)
    for start in range(0, k, _MATMUL_CHUNK):
        stop = min(start + _MATMUL_CHUNK, k)
        total += a32[..., start:stop] @ b32[start:stop, :]
    return total.astype(np.int64)


# ---------------------------------------------------------------------------
# window extraction shared by conv and pooling


def _pad_hw(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, padding: str, value):
    h, w = x.shape[0], x.shape[1]
    if padding == "valid":
        return x, h, w
    (pt, pb), (pl, pr) = same_padding(h, kh, sh), same_padding(w, kw, sw)
    if pt == pb == pl == pr == 0:
        return x, h, w
    padded = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=value)
    return padded, h, w


def _window_view(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, padding: str, pad_value):
    """(Ho, Wo, kh, kw, C) gather of all pooling/conv windows of a (H, W, C) map."""
    xp, h, w = _pad_hw(x, kh, kw, sh, sw, padding, pad_value)
    if padding == "same":
        oh, ow = -(-h // sh), -(-w // sw)
    else:
        oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
    c = x.shape[2]
    win = np.empty((oh, ow, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            win[:, :, i, j, :] = xp[i : i + oh * sh : sh, j : j + ow * sw : sw, :]
    return win


# ---------------------------------------------------------------------------
# float32 kernels


def _finish_f32(acc64: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu6":
        acc64 = np.clip(acc64, 0.0, 6.0)
    return acc64.astype(np.float32)


def conv2d_f32(x, w, b, stride, padding, activation="none"):
    """x (1,H,W,Cin), w (Cout,kh,kw,Cin), b (Cout,) -> (1,Ho,Wo,Cout)."""
    cout, kh, kw, cin = w.shape
    win = _window_view(
        np.asarray(x[0], dtype=np.float64), kh, kw, stride[0], stride[1], padding, 0.0
    )
    oh, ow = win.shape[0], win.shape[1]
    patches = win.reshape(oh * ow, kh * kw * cin)
    kernel = np.asarray(w, dtype=np.float64).reshape(cout, kh * kw * cin).T
    acc = patches @ kernel + np.asarray(b, dtype=np.float64)
    return _finish_f32(acc, activation).reshape(1, oh, ow, cout)


def depthwise_conv2d_f32(x, w, b, stride, padding, activation="none"):
    """x (1,H,W,C), w (C,kh,kw,1), b (C,) -> (1,Ho,Wo,C); one filter per channel."""
    c, kh, kw, _ = w.shape
    win = _window_view(
        np.asarray(x[0], dtype=np.float64), kh, kw, stride[0], stride[1], padding, 0.0
    )
    kernel = np.asarray(w, dtype=np.float64)[:, :, :, 0].transpose(1, 2, 0)  # (kh,kw,C)
    acc = np.einsum("hwijc,ijc->hwc", win, kernel) + np.asarray(b, dtype=np.float64)
    return _finish_f32(acc, activation)[np.newaxis]


def fully_connected_f32(x, w, b, activation="none"):
    """x (1,K), w (N,K), b (N,) -> (1,N)."""
    acc = np.asarray(x, dtype=np.float64) @ np.asarray(w, dtype=np.float64).T
    acc = acc + np.asarray(b, dtype=np.float64)
    return _finish_f32(acc, activation)


def max_pool_f32(x, kernel, stride, padding):
    win = _window_view(
        np.asarray(x[0], dtype=np.float32), kernel[0], kernel[1],
        stride[0], stride[1], padding, np.float32(-np.inf),
    )
    return win.max(axis=(2, 3))[np.newaxis]


def avg_pool_f32(x, kernel, stride, padding):
    win = _window_view(
        np.asarray(x[0], dtype=np.float64), kernel[0], kernel[1],
        stride[0], stride[1], padding, 0.0,
    )
    return win.mean(axis=(2, 3)).astype(np.float32)[np.newaxis]


def relu6_f32(x):
    return np.clip(x, 0.0, 6.0).astype(np.float32)


def softmax_f32(x):
    """Softmax over the last axis, computed in double for stability."""
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def add_f32(a, b):
    return (np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64)).astype(np.float32)


def concat_f32(parts):
    return np.concatenate(parts, axis=-1)


# ---------------------------------------------------------------------------
# int8 kernels


def _finish_q(acc64, in_scale, w_scale, out_qp, activation):
    mult, shift = quantize_multiplier(in_scale * w_scale / out_qp.scale)
    q = apply_multiplier(saturate_int32(acc64), mult, shift) + out_qp.zero_point
    q = np.clip(q, QMIN, QMAX)
    if activation == "relu6":
        qlo, qhi = quantized_bounds(out_qp, 0.0, 6.0)
        q = np.clip(q, qlo, qhi)
    return q.astype(np.int8)


def conv2d_q(x, x_qp, w, w_qp, b, stride, padding, out_qp, activation="none"):
    """Integer conv: int8 operands, int32 accumulation, fixed-point requantize.

    'same' padding inserts the input zero point, which represents real 0.
    """
    cout, kh, kw, cin = w.shape
    win = _window_view(
        np.asarray(x[0], dtype=np.int16), kh, kw, stride[0], stride[1], padding,
        np.int16(x_qp.zero_point),
    )
    oh, ow = win.shape[0], win.shape[1]
    patches = win.reshape(oh * ow, kh * kw * cin) - np.int16(x_qp.zero_point)
    kernel = (np.asarray(w, dtype=np.int16) - np.int16(w_qp.zero_point)).reshape(
        cout, kh * kw * cin
    ).T
    acc = _exact_int_matmul(patches, kernel) + np.asarray(b, dtype=np.int64)
    out = _finish_q(acc, x_qp.scale, w_qp.scale, out_qp, activation)
    return out.reshape(1, oh, ow, cout)


def depthwise_conv2d_q(x, x_qp, w, w_qp, b, stride, padding, out_qp, activation="none"):
    c, kh, kw, _ = w.shape
    win = _window_view(
        np.asarray(x[0], dtype=np.int16), kh, kw, stride[0], stride[1], padding,
        np.int16(x_qp.zero_point),
    )
    shifted = win.astype(np.int64) - x_qp.zero_point
    kernel = np.asarray(w, dtype=np.int64)[:, :, :, 0].transpose(1, 2, 0) - w_qp.zero_point
    acc = np.einsum("hwijc,ijc->hwc", shifted, kernel) + np.asarray(b, dtype=np.int64)
    return _finish_q(acc, x_qp.scale, w_qp.scale, out_qp, activation)[np.newaxis]


def fully_connected_q(x, x_qp, w, w_qp, b, out_qp, activation="none"):
    lhs = np.asarray(x, dtype=np.int16) - np.int16(x_qp.zero_point)
    rhs = (np.asarray(w, dtype=np.int16) - np.int16(w_qp.zero_point)).T
    acc = _exact_int_matmul(lhs, rhs) + np.asarray(b, dtype=np.int64)
    return _finish_q(acc, x_qp.scale, w_qp.scale, out_qp, activation)


def max_pool_q(x, x_qp, kernel, stride, padding, out_qp):
    win = _window_view(
        np.asarray(x[0], dtype=np.int8), kernel[0], kernel[1],
        stride[0], stride[1], padding, np.int8(QMIN),
    )
    out = win.max(axis=(2, 3))
    return rescale(out, x_qp, out_qp)[np.newaxis]


def avg_pool_q(x, x_qp, kernel, stride, padding, out_qp):
    """Window sums in int32, one rounded division by the window size."""
    win = _window_view(
        np.asarray(x[0], dtype=np.int64), kernel[0], kernel[1],
        stride[0], stride[1], padding, np.int64(x_qp.zero_point),
    )
    total = saturate_int32(win.sum(axis=(2, 3)))
    count = kernel[0] * kernel[1]
    magnitude = (np.abs(total) * 2 + count) // (2 * count)  # half-away integer divide
    mean = np.where(total < 0, -magnitude, magnitude)
    out = np.clip(mean, QMIN, QMAX).astype(np.int8)
    return rescale(out, x_qp, out_qp)[np.newaxis]


def relu6_q(x, x_qp, out_qp):
    q = rescale(x, x_qp, out_qp)
    qlo, qhi = quantized_bounds(out_qp, 0.0, 6.0)
    return np.clip(q, qlo, qhi).astype(np.int8)


def add_q(a, a_qp, b, b_qp, out_qp):
    """Both operands are re-expressed at the output scale, then summed."""
    ra = rescale(a, a_qp, out_qp).astype(np.int16)
    rb = rescale(b, b_qp, out_qp).astype(np.int16)
    total = ra + rb - np.int16(out_qp.zero_point)
    return np.clip(total, QMIN, QMAX).astype(np.int8)


def concat_q(parts, part_qps, out_qp):
    return np.concatenate([rescale(p, qp, out_qp) for p, qp in zip(parts, part_qps)], axis=-1)


def softmax_q(x, x_qp, out_qp):
    """Integer softmax via an exp lookup table.

    The 256-entry table and the output reciprocal are constants derived
    from the static qparams; the per-element path is a table lookup, an
    integer sum and one rounded integer division.

        d = q - max(q)                         in [-255, 0]
        E[d] = round(exp(in_scale * d) * 2**23)
        out  = clamp(round(E[d] * K / sum(E)) + out_zp),  K = round(1/out_scale)
    """
    q = np.asarray(x, dtype=np.int64)
    d = q - q.max(axis=-1, keepdims=True)  # in [-255, 0]
    steps = np.arange(-255, 1, dtype=np.int64)
    table = round_half_away(np.exp(steps * x_qp.scale) * (1 << 23)).astype(np.int64)
    e = table[d + 255]
    total = e.sum(axis=-1, keepdims=True)
    k = max(int(round_half_away(1.0 / out_qp.scale)), 1)
    num = e * k
    scaled = (2 * num + total) // (2 * total)  # round half away (operands non-negative)
    out = scaled + out_qp.zero_point
    return np.clip(out, QMIN, QMAX).astype(np.int8)
