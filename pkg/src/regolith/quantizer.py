"""Post-training quantization: calibrate activation ranges, emit an int8 graph.

Calibration runs float inference over a representative image set and
folds every activation tensor's observed min/max into running stats
(plain absolute min/max, no percentile clipping). Weights take their
quantization range from their own values; biases become int32 at
scale = input_scale * weight_scale with zero point 0, as integer-only
accumulation requires.

Shape-preserving layers (max_pool, avg_pool, relu6, reshape) inherit
their input's qparams so they stay single-rounding passthroughs;
softmax outputs get the fixed (1/256, -128) parameters that exactly
cover [0, 1); everything else gets stats-derived parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import run_with_activations
from .errors import RegolithError
from .model import ModelGraph, TensorDecl, validate
from .tensor import (
    QuantParams,
    Tensor,
    compute_qparams,
    quantize_array,
    round_half_away,
)

SOFTMAX_QPARAMS = QuantParams(1.0 / 256.0, -128)

_PROPAGATE_KINDS = ("max_pool", "avg_pool", "relu6", "reshape")


class CalibrationError(RegolithError):
    pass


class QuantizationError(RegolithError):
    pass


@dataclass
class TensorStats:
    min: float
    max: float
    count: int

    def fold(self, other: "TensorStats") -> "TensorStats":
        return TensorStats(
            min(self.min, other.min), max(self.max, other.max), self.count + other.count
        )


@dataclass
class CalibrationStats:
    """Per-tensor running min/max over the calibration set."""

    per_tensor: dict[int, TensorStats] = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return max((s.count for s in self.per_tensor.values()), default=0)

    def observe(self, tid: int, values: np.ndarray):
        stats = TensorStats(float(values.min()), float(values.max()), 1)
        if tid in self.per_tensor:
            stats = self.per_tensor[tid].fold(stats)
        self.per_tensor[tid] = stats

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        merged = CalibrationStats(dict(self.per_tensor))
        for tid, stats in other.per_tensor.items():
            if tid in merged.per_tensor:
                merged.per_tensor[tid] = merged.per_tensor[tid].fold(stats)
            else:
                merged.per_tensor[tid] = stats
        return merged


def calibrate(g: ModelGraph, images) -> CalibrationStats:
    """Run float inference over ``images`` and collect activation ranges.

    The min/max fold is associative and commutative, so image order does
    not affect the result.
    """
    if g.is_quantized:
        raise QuantizationError("calibration requires a float32 graph")
    stats = CalibrationStats()
    count = 0
    for image in images:
        tensor = image if isinstance(image, Tensor) else Tensor(np.asarray(image, np.float32))
        _, _, activations = run_with_activations(g, tensor)
        for tid, act in activations.items():
            stats.observe(tid, act.data)
        count += 1
    if count == 0:
        raise CalibrationError("empty calibration set")
    return stats


def _quantize_weight(decl: TensorDecl) -> TensorDecl:
    values = decl.payload
    qp = compute_qparams(float(values.min()), float(values.max()))
    return TensorDecl(decl.shape, "int8", qp, quantize_array(values, qp))


def _quantize_bias(decl: TensorDecl, in_scale: float, w_scale: float) -> TensorDecl:
    scale = in_scale * w_scale
    quanta = round_half_away(decl.payload.astype(np.float64) / scale)
    quanta = np.clip(quanta, -(2**31), 2**31 - 1).astype(np.int32)
    return TensorDecl(decl.shape, "int32", QuantParams(scale, 0), quanta)


def quantize_model(g: ModelGraph, stats: CalibrationStats) -> ModelGraph:
    """Produce the int8 twin of a float32 graph using calibration stats.

    Topology, shapes and layer attributes are untouched; only dtypes,
    qparams and constant payloads change. The result is validated before
    it is returned.
    """
    if g.is_quantized:
        raise QuantizationError("graph is already quantized")
    if g.topo_order is None:
        validate(g)

    def stats_qparams(tid: int) -> QuantParams:
        if tid not in stats.per_tensor:
            raise QuantizationError(f"no calibration stats for activation tensor {tid}")
        s = stats.per_tensor[tid]
        return qparams_from_stats(s)

    new_tensors: list[TensorDecl | None] = [None] * len(g.tensors)
    qparams: dict[int, QuantParams] = {}

    for tid in g.inputs:
        qparams[tid] = stats_qparams(tid)
    for index in g.topo_order:
        layer = g.layers[index]
        out = layer.output
        if layer.kind == "softmax":
            qparams[out] = SOFTMAX_QPARAMS
        elif layer.kind in _PROPAGATE_KINDS:
            qparams[out] = qparams[layer.inputs[0]]
        else:
            qparams[out] = stats_qparams(out)

    for tid, decl in enumerate(g.tensors):
        if not decl.is_constant:
            new_tensors[tid] = TensorDecl(decl.shape, "int8", qparams[tid])

    for layer in g.layers:
        if layer.kind not in ("conv2d", "depthwise_conv2d", "fully_connected"):
            continue
        x, w, b = layer.inputs
        weight_decl = _quantize_weight(g.tensors[w])
        new_tensors[w] = weight_decl
        new_tensors[b] = _quantize_bias(
            g.tensors[b], qparams[x].scale, weight_decl.qparams.scale
        )

    for tid, decl in enumerate(g.tensors):
        if new_tensors[tid] is None:  # constant in no weight/bias slot
            new_tensors[tid] = _quantize_weight(decl)

    out = ModelGraph(g.version, new_tensors, list(g.layers), g.inputs, g.outputs)
    return validate(out)


def qparams_from_stats(stats: TensorStats) -> QuantParams:
    return compute_qparams(stats.min, stats.max)


def quantize_input(g: ModelGraph, image: Tensor) -> Tensor:
    """Quantize a float image with an int8 graph's declared input parameters."""
    decl = g.tensors[g.inputs[0]]
    if decl.dtype != "int8":
        raise QuantizationError("graph input is not int8")
    return Tensor(quantize_array(image.data, decl.qparams), qparams=decl.qparams)
