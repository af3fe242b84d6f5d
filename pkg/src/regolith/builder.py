"""Programmatic graph construction.

`.rglm` files are the on-disk exchange format; in code, graphs are
assembled with a GraphBuilder that allocates tensor ids, fills in
declared shapes using the same inference rules validation applies, and
finishes with a fully validated ModelGraph.
"""

from __future__ import annotations

import numpy as np

from .model import (
    FORMAT_VERSION,
    LayerSpec,
    ModelGraph,
    TensorDecl,
    conv_output_extent,
    validate,
)
from .tensor import QuantParams


class GraphBuilder:
    """Accumulates tensor declarations and layers, then validates."""

    def __init__(self):
        self._tensors: list[TensorDecl] = []
        self._layers: list[LayerSpec] = []
        self._inputs: list[int] = []
        self._outputs: list[int] = []

    def _declare(self, decl: TensorDecl) -> int:
        self._tensors.append(decl)
        return len(self._tensors) - 1

    def input(self, shape, dtype: str = "float32", qparams: QuantParams | None = None) -> int:
        tid = self._declare(TensorDecl(tuple(shape), dtype, qparams=qparams))
        self._inputs.append(tid)
        return tid

    def constant(self, values: np.ndarray, qparams: QuantParams | None = None) -> int:
        values = np.asarray(values)
        dtype = {np.dtype(np.float32): "float32", np.dtype(np.int8): "int8",
                 np.dtype(np.int32): "int32"}[values.dtype]
        return self._declare(TensorDecl(values.shape, dtype, qparams=qparams, payload=values))

    def activation(self, shape, dtype: str = "float32", qparams: QuantParams | None = None) -> int:
        return self._declare(TensorDecl(tuple(shape), dtype, qparams=qparams))

    def _emit(self, kind, inputs, out_shape, attrs, dtype="float32", qparams=None) -> int:
        out = self._declare(TensorDecl(tuple(out_shape), dtype, qparams=qparams))
        self._layers.append(LayerSpec(kind, tuple(inputs), out, attrs))
        return out

    def conv2d(self, x: int, weights: np.ndarray, bias: np.ndarray, stride=(1, 1),
               padding: str = "same", activation: str = "none") -> int:
        w = self.constant(np.asarray(weights, dtype=np.float32))
        b = self.constant(np.asarray(bias, dtype=np.float32))
        _, h, wid, _ = self._tensors[x].shape
        cout, kh, kw, _ = self._tensors[w].shape
        oh = conv_output_extent(h, kh, stride[0], padding)
        ow = conv_output_extent(wid, kw, stride[1], padding)
        attrs = {"stride_h": stride[0], "stride_w": stride[1],
                 "padding": padding, "activation": activation}
        return self._emit("conv2d", (x, w, b), (1, oh, ow, cout), attrs)

    def depthwise_conv2d(self, x: int, weights: np.ndarray, bias: np.ndarray, stride=(1, 1),
                         padding: str = "same", activation: str = "none") -> int:
        w = self.constant(np.asarray(weights, dtype=np.float32))
        b = self.constant(np.asarray(bias, dtype=np.float32))
        _, h, wid, c = self._tensors[x].shape
        _, kh, kw, _ = self._tensors[w].shape
        oh = conv_output_extent(h, kh, stride[0], padding)
        ow = conv_output_extent(wid, kw, stride[1], padding)
        attrs = {"stride_h": stride[0], "stride_w": stride[1],
                 "padding": padding, "activation": activation}
        return self._emit("depthwise_conv2d", (x, w, b), (1, oh, ow, c), attrs)

    def fully_connected(self, x: int, weights: np.ndarray, bias: np.ndarray,
                        activation: str = "none") -> int:
        w = self.constant(np.asarray(weights, dtype=np.float32))
        b = self.constant(np.asarray(bias, dtype=np.float32))
        n = self._tensors[w].shape[0]
        return self._emit("fully_connected", (x, w, b), (1, n), {"activation": activation})

    def _pool(self, kind, x, kernel, stride, padding) -> int:
        _, h, wid, c = self._tensors[x].shape
        oh = conv_output_extent(h, kernel[0], stride[0], padding)
        ow = conv_output_extent(wid, kernel[1], stride[1], padding)
        attrs = {"kernel_h": kernel[0], "kernel_w": kernel[1],
                 "stride_h": stride[0], "stride_w": stride[1], "padding": padding}
        return self._emit(kind, (x,), (1, oh, ow, c), attrs)

    def max_pool(self, x: int, kernel=(2, 2), stride=(2, 2), padding: str = "valid") -> int:
        return self._pool("max_pool", x, kernel, stride, padding)

    def avg_pool(self, x: int, kernel=(2, 2), stride=(2, 2), padding: str = "valid") -> int:
        return self._pool("avg_pool", x, kernel, stride, padding)

    def relu6(self, x: int) -> int:
        return self._emit("relu6", (x,), self._tensors[x].shape, {})

    def softmax(self, x: int) -> int:
        return self._emit("softmax", (x,), self._tensors[x].shape, {})

    def add(self, a: int, b: int) -> int:
        return self._emit("add", (a, b), self._tensors[a].shape, {})

    def concat(self, *xs: int) -> int:
        first = self._tensors[xs[0]].shape
        last = sum(self._tensors[x].shape[-1] for x in xs)
        return self._emit("concat", xs, first[:-1] + (last,), {})

    def reshape(self, x: int, shape) -> int:
        return self._emit("reshape", (x,), tuple(shape), {})

    def output(self, tid: int) -> int:
        self._outputs.append(tid)
        return tid

    def finish(self, version: int = FORMAT_VERSION) -> ModelGraph:
        graph = ModelGraph(version, list(self._tensors), list(self._layers),
                           tuple(self._inputs), tuple(self._outputs))
        return validate(graph)
