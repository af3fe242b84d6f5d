"""Graph execution in float32 or integer-only int8.

A run walks the validated topological order, keeps per-tensor buffers in
a dict keyed by tensor id, and times each layer with monotonic clock
deltas. Execution is single-image (batch 1) and single-threaded; the
graph itself is immutable, so multiple runs may proceed concurrently on
separate inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import RegolithError
from .model import ModelGraph, validate
from .tensor import QuantParams, Tensor


class InputMismatchError(RegolithError):
    """Run input does not match the graph's declared input."""


@dataclass(frozen=True)
class LayerTiming:
    index: int
    kind: str
    output: int
    shape: tuple[int, ...]
    seconds: float


@dataclass(frozen=True)
class ExecutionTrace:
    """Per-layer outputs and wall-times for one run, in execution order."""

    layers: tuple[LayerTiming, ...]
    total_seconds: float

    def signature(self) -> tuple:
        """Trace identity with wall-times stripped, for determinism checks."""
        return tuple((t.index, t.kind, t.output, t.shape) for t in self.layers)


def _qp(g: ModelGraph, tid: int) -> QuantParams:
    return g.tensors[tid].qparams


def _execute_layer(g: ModelGraph, layer, env: dict[int, np.ndarray], quantized: bool):
    ins = [env[t] for t in layer.inputs]
    a = layer.attrs
    if layer.kind in ("conv2d", "depthwise_conv2d"):
        x, w, b = ins
        stride = (a["stride_h"], a["stride_w"])
        if quantized:
            fn = kernels.conv2d_q if layer.kind == "conv2d" else kernels.depthwise_conv2d_q
            return fn(
                x, _qp(g, layer.inputs[0]), w, _qp(g, layer.inputs[1]), b,
                stride, a["padding"], _qp(g, layer.output), a["activation"],
            )
        fn = kernels.conv2d_f32 if layer.kind == "conv2d" else kernels.depthwise_conv2d_f32
        return fn(x, w, b, stride, a["padding"], a["activation"])
    if layer.kind == "fully_connected":
        x, w, b = ins
        if quantized:
            return kernels.fully_connected_q(
                x, _qp(g, layer.inputs[0]), w, _qp(g, layer.inputs[1]), b,
                _qp(g, layer.output), a["activation"],
            )
        return kernels.fully_connected_f32(x, w, b, a["activation"])
    if layer.kind in ("max_pool", "avg_pool"):
        (x,) = ins
        kernel = (a["kernel_h"], a["kernel_w"])
        stride = (a["stride_h"], a["stride_w"])
        if quantized:
            fn = kernels.max_pool_q if layer.kind == "max_pool" else kernels.avg_pool_q
            return fn(x, _qp(g, layer.inputs[0]), kernel, stride, a["padding"], _qp(g, layer.output))
        fn = kernels.max_pool_f32 if layer.kind == "max_pool" else kernels.avg_pool_f32
        return fn(x, kernel, stride, a["padding"])
    if layer.kind == "relu6":
        if quantized:
            return kernels.relu6_q(ins[0], _qp(g, layer.inputs[0]), _qp(g, layer.output))
        return kernels.relu6_f32(ins[0])
    if layer.kind == "softmax":
        if quantized:
            return kernels.softmax_q(ins[0], _qp(g, layer.inputs[0]), _qp(g, layer.output))
        return kernels.softmax_f32(ins[0])
    if layer.kind == "add":
        if quantized:
            return kernels.add_q(
                ins[0], _qp(g, layer.inputs[0]), ins[1], _qp(g, layer.inputs[1]),
                _qp(g, layer.output),
            )
        return kernels.add_f32(ins[0], ins[1])
    if layer.kind == "concat":
        if quantized:
            return kernels.concat_q(
                ins, [_qp(g, t) for t in layer.inputs], _qp(g, layer.output)
            )
        return kernels.concat_f32(ins)
    if layer.kind == "reshape":
        out = ins[0].reshape(g.tensors[layer.output].shape)
        if quantized:
            return kernels.rescale(out, _qp(g, layer.inputs[0]), _qp(g, layer.output))
        return out
    raise RegolithError(f"no kernel for layer kind {layer.kind!r}")


def _check_input(g: ModelGraph, tensor: Tensor):
    if len(g.inputs) != 1:
        raise InputMismatchError(f"graph declares {len(g.inputs)} inputs, run() feeds exactly 1")
    decl = g.tensors[g.inputs[0]]
    if tensor.shape != decl.shape:
        raise InputMismatchError(f"input shape {tensor.shape} != declared {decl.shape}")
    if tensor.dtype != decl.dtype:
        raise InputMismatchError(f"input dtype {tensor.dtype} != declared {decl.dtype}")
    if decl.dtype == "int8" and tensor.qparams != decl.qparams:
        raise InputMismatchError(
            f"input qparams {tensor.qparams} != declared {decl.qparams}"
        )


def run_with_activations(
    g: ModelGraph, tensor: Tensor
) -> tuple[list[Tensor], ExecutionTrace, dict[int, Tensor]]:
    """Like :func:`run`, additionally returning every activation tensor."""
    if g.topo_order is None:
        validate(g)
    _check_input(g, tensor)
    quantized = g.is_quantized
    env: dict[int, np.ndarray] = {
        i: decl.payload for i, decl in enumerate(g.tensors) if decl.is_constant
    }
    env[g.inputs[0]] = tensor.data

    timings = []
    start_total = time.perf_counter()
    for index in g.topo_order:
        layer = g.layers[index]
        start = time.perf_counter()
        out = _execute_layer(g, layer, env, quantized)
        elapsed = time.perf_counter() - start
        env[layer.output] = out
        timings.append(
            LayerTiming(index, layer.kind, layer.output, tuple(out.shape), elapsed)
        )
    total = time.perf_counter() - start_total
    trace = ExecutionTrace(tuple(timings), total)

    def wrap(tid: int) -> Tensor:
        return Tensor(env[tid], qparams=g.tensors[tid].qparams)

    outputs = [wrap(t) for t in g.outputs]
    activations = {
        tid: wrap(tid)
        for tid in env
        if not g.tensors[tid].is_constant
    }
    return outputs, trace, activations


def run(g: ModelGraph, tensor: Tensor) -> tuple[list[Tensor], ExecutionTrace]:
    """Execute a graph on one input; returns output tensors and a trace.

    Deterministic: the same graph and input produce bit-identical
    outputs and an identical trace signature.
    """
    outputs, trace, _ = run_with_activations(g, tensor)
    return outputs, trace
