"""CNN graph representation: tensor declarations, layer records, validation.

A ModelGraph is the unit of execution, quantization, memory planning and
serialization. Tensors are declared up front with concrete shapes;
``validate`` checks reference integrity, derives a topological layer
order and re-infers every layer's output shape from its inputs, so a
graph that validates is guaranteed runnable.

Graphs execute single images only (leading batch extent 1). Activations
are uniformly float32 or uniformly int8; int8 graphs carry int32 biases.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RegolithError
from .tensor import DTYPE_WIDTHS, QMAX, QMIN, QuantParams

FORMAT_VERSION = 1

LAYER_KINDS = (
    "conv2d",
    "depthwise_conv2d",
    "fully_connected",
    "max_pool",
    "avg_pool",
    "relu6",
    "softmax",
    "add",
    "concat",
    "reshape",
)

PADDING_MODES = ("same", "valid")
ACTIVATIONS = ("none", "relu6")

# Exact attribute set per layer kind; anything else is rejected.
ATTR_SCHEMA: dict[str, tuple[str, ...]] = {
    "conv2d": ("stride_h", "stride_w", "padding", "activation"),
    "depthwise_conv2d": ("stride_h", "stride_w", "padding", "activation"),
    "fully_connected": ("activation",),
    "max_pool": ("kernel_h", "kernel_w", "stride_h", "stride_w", "padding"),
    "avg_pool": ("kernel_h", "kernel_w", "stride_h", "stride_w", "padding"),
    "relu6": (),
    "softmax": (),
    "add": (),
    "concat": (),
    "reshape": (),
}


class ModelError(RegolithError):
    """Base for graph/file validation errors; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class BadMagicError(ModelError):
    pass


class UnsupportedVersionError(ModelError):
    pass


class TruncatedPayloadError(ModelError):
    pass


class MalformedModelError(ModelError):
    pass


class DanglingReferenceError(ModelError):
    pass


class CyclicGraphError(ModelError):
    pass


class ShapeMismatchError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class TensorDecl:
    """Declared tensor: shape, dtype, optional qparams, optional constant payload."""

    shape: tuple[int, ...]
    dtype: str
    qparams: QuantParams | None = None
    payload: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.dtype not in DTYPE_WIDTHS:
            raise MalformedModelError(f"unknown dtype {self.dtype!r}")
        if any(d <= 0 for d in self.shape):
            raise MalformedModelError(f"non-positive extent in shape {self.shape}")
        if self.dtype == "int8" and self.qparams is None:
            raise MalformedModelError("int8 tensor declared without qparams")
        if self.dtype == "float32" and self.qparams is not None:
            raise MalformedModelError("float32 tensor declared with qparams")
        if self.payload is not None:
            arr = np.ascontiguousarray(self.payload)
            want = {"float32": np.float32, "int8": np.int8, "int32": np.int32}[self.dtype]
            if arr.dtype != want:
                arr = arr.astype(want)
            if arr.size != self.size:
                raise MalformedModelError(
                    f"payload has {arr.size} elements, shape {self.shape} wants {self.size}"
                )
            arr = arr.reshape(self.shape)
            arr.flags.writeable = False
            object.__setattr__(self, "payload", arr)

    @property
    def size(self) -> int:
        return int(math.prod(self.shape))

    @property
    def nbytes(self) -> int:
        return self.size * DTYPE_WIDTHS[self.dtype]

    @property
    def is_constant(self) -> bool:
        return self.payload is not None

    def __eq__(self, other):
        if not isinstance(other, TensorDecl):
            return NotImplemented
        if (self.shape, self.dtype, self.qparams) != (other.shape, other.dtype, other.qparams):
            return False
        if (self.payload is None) != (other.payload is None):
            return False
        return self.payload is None or np.array_equal(self.payload, other.payload)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One layer record: kind, kind-specific attributes, input ids, output id."""

    kind: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict[str, int | str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        object.__setattr__(self, "output", int(self.output))
        object.__setattr__(self, "attrs", dict(self.attrs))

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (self.kind, self.inputs, self.output, self.attrs) == (
            other.kind,
            other.inputs,
            other.output,
            other.attrs,
        )

    __hash__ = None


@dataclass(eq=False)
class ModelGraph:
    """A parsed CNN: tensor table, ordered layers, graph inputs and outputs.

    ``topo_order`` (layer indices in a valid execution order) is filled in
    by :func:`validate`; all toolkit entry points validate before use.
    """

    version: int
    tensors: list[TensorDecl]
    layers: list[LayerSpec]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    topo_order: tuple[int, ...] | None = None

    def __post_init__(self):
        self.inputs = tuple(int(i) for i in self.inputs)
        self.outputs = tuple(int(i) for i in self.outputs)

    @property
    def is_quantized(self) -> bool:
        """True when the graph's activations are int8."""
        return any(
            self.tensors[i].dtype == "int8"
            for i in range(len(self.tensors))
            if not self.tensors[i].is_constant
        )

    def producer_map(self) -> dict[int, int]:
        """tensor id -> index of the layer that produces it."""
        return {layer.output: i for i, layer in enumerate(self.layers)}

    def __eq__(self, other):
        if not isinstance(other, ModelGraph):
            return NotImplemented
        return (
            self.version == other.version
            and self.tensors == other.tensors
            and self.layers == other.layers
            and self.inputs == other.inputs
            and self.outputs == other.outputs
        )

    __hash__ = None


def conv_output_extent(extent: int, kernel: int, stride: int, padding: str) -> int:
    """Output spatial extent of a conv/pool window op, or -1 if impossible.

    ``same`` pads symmetrically with the extra cell on the high side;
    ``valid`` requires the kernel to fit inside the input.
    """
    if padding == "same":
        return -(-extent // stride)  # ceil
    if kernel > extent:
        return -1
    return (extent - kernel) // stride + 1


def same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    """(low, high) zero padding for 'same' mode along one axis."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    low = total // 2
    return low, total - low


def _check_attrs(index: int, layer: LayerSpec, offset: int | None):
    want = ATTR_SCHEMA.get(layer.kind)
    if want is None:
        raise MalformedModelError(f"layer {index}: unknown kind {layer.kind!r}", offset)
    got = set(layer.attrs)
    if got != set(want):
        raise MalformedModelError(
            f"layer {index} ({layer.kind}): attributes {sorted(got)} != required {sorted(want)}",
            offset,
        )
    for key in ("stride_h", "stride_w", "kernel_h", "kernel_w"):
        if key in layer.attrs:
            value = layer.attrs[key]
            if not isinstance(value, int) or value < 1:
                raise MalformedModelError(
                    f"layer {index} ({layer.kind}): {key} must be a positive integer, got {value!r}",
                    offset,
                )
    if "padding" in layer.attrs and layer.attrs["padding"] not in PADDING_MODES:
        raise MalformedModelError(
            f"layer {index}: bad padding {layer.attrs['padding']!r}", offset
        )
    if "activation" in layer.attrs and layer.attrs["activation"] not in ACTIVATIONS:
        raise MalformedModelError(
            f"layer {index}: bad activation {layer.attrs['activation']!r}", offset
        )


_INPUT_ARITY = {
    "conv2d": 3,
    "depthwise_conv2d": 3,
    "fully_connected": 3,
    "max_pool": 1,
    "avg_pool": 1,
    "relu6": 1,
    "softmax": 1,
    "add": 2,
    "reshape": 1,
}


def _check_arity(index: int, layer: LayerSpec, offset: int | None):
    want = _INPUT_ARITY.get(layer.kind)
    if want is not None and len(layer.inputs) != want:
        raise MalformedModelError(
            f"layer {index} ({layer.kind}): expects {want} inputs, got {len(layer.inputs)}",
            offset,
        )
    if layer.kind == "concat" and len(layer.inputs) < 2:
        raise MalformedModelError(
            f"layer {index} (concat): expects >= 2 inputs, got {len(layer.inputs)}", offset
        )


def _infer_output(g: ModelGraph, index: int, layer: LayerSpec, offset) -> tuple[tuple[int, ...], str]:
    """Expected (shape, dtype) of a layer's output, from its validated inputs."""
    decl = [g.tensors[i] for i in layer.inputs]
    quantized = decl[0].dtype == "int8"

    def fail(msg):
        raise ShapeMismatchError(f"layer {index} ({layer.kind}): {msg}", offset)

    def feature_map(d: TensorDecl, role="input"):
        if len(d.shape) != 4 or d.shape[0] != 1:
            fail(f"{role} must have shape (1, H, W, C), got {d.shape}")

    act_dtype = "int8" if quantized else "float32"

    if layer.kind in ("conv2d", "depthwise_conv2d"):
        x, w, b = decl
        feature_map(x)
        if len(w.shape) != 4:
            fail(f"weights must be rank 4, got {w.shape}")
        _, h, wid, cin = x.shape
        if layer.kind == "conv2d":
            cout, kh, kw, wcin = w.shape
            if wcin != cin:
                fail(f"weight input channels {wcin} != input channels {cin}")
        else:
            cout, kh, kw, mult = w.shape
            if cout != cin or mult != 1:
                fail(f"depthwise weights must be ({cin}, kh, kw, 1), got {w.shape}")
        if b.shape != (cout,):
            fail(f"bias shape {b.shape} != ({cout},)")
        sh, sw = layer.attrs["stride_h"], layer.attrs["stride_w"]
        oh = conv_output_extent(h, kh, sh, layer.attrs["padding"])
        ow = conv_output_extent(wid, kw, sw, layer.attrs["padding"])
        if oh < 1 or ow < 1:
            fail(f"kernel ({kh}x{kw}) does not fit input ({h}x{wid}) with valid padding")
        return (1, oh, ow, cout), act_dtype

    if layer.kind == "fully_connected":
        x, w, b = decl
        if len(x.shape) != 2 or x.shape[0] != 1:
            fail(f"input must have shape (1, K), got {x.shape}")
        if len(w.shape) != 2 or w.shape[1] != x.shape[1]:
            fail(f"weights {w.shape} incompatible with input {x.shape}")
        if b.shape != (w.shape[0],):
            fail(f"bias shape {b.shape} != ({w.shape[0]},)")
        return (1, w.shape[0]), act_dtype

    if layer.kind in ("max_pool", "avg_pool"):
        (x,) = decl
        feature_map(x)
        _, h, wid, c = x.shape
        kh, kw = layer.attrs["kernel_h"], layer.attrs["kernel_w"]
        sh, sw = layer.attrs["stride_h"], layer.attrs["stride_w"]
        oh = conv_output_extent(h, kh, sh, layer.attrs["padding"])
        ow = conv_output_extent(wid, kw, sw, layer.attrs["padding"])
        if oh < 1 or ow < 1:
            fail(f"window ({kh}x{kw}) does not fit input ({h}x{wid}) with valid padding")
        return (1, oh, ow, c), act_dtype

    if layer.kind in ("relu6", "softmax"):
        (x,) = decl
        return x.shape, act_dtype

    if layer.kind == "add":
        a, b = decl
        if a.shape != b.shape:
            fail(f"operand shapes differ: {a.shape} vs {b.shape}")
        return a.shape, act_dtype

    if layer.kind == "concat":
        first = decl[0]
        for d in decl[1:]:
            if len(d.shape) != len(first.shape) or d.shape[:-1] != first.shape[:-1]:
                fail(f"concat inputs must agree on all but the last axis: {first.shape} vs {d.shape}")
        last = sum(d.shape[-1] for d in decl)
        return first.shape[:-1] + (last,), act_dtype

    if layer.kind == "reshape":
        (x,) = decl
        declared = g.tensors[layer.output].shape
        if math.prod(declared) != x.size:
            fail(f"cannot reshape {x.size} elements into {declared}")
        return declared, act_dtype

    raise MalformedModelError(f"layer {index}: unknown kind {layer.kind!r}", offset)


def validate(g: ModelGraph, layer_offsets: list[int] | None = None) -> ModelGraph:
    """Validate a graph in place and fill in its topological order.

    Checks reference integrity, per-kind attribute schemas, single
    production of every non-constant tensor, acyclicity, dtype uniformity
    and declared-vs-inferred shapes. ``layer_offsets`` (byte offsets of
    each layer record) lets file parsing report where an error came from.
    Raises a ModelError subclass on the first violation; returns ``g``.
    """
    n = len(g.tensors)

    def off(i: int) -> int | None:
        return layer_offsets[i] if layer_offsets else None

    if g.version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported graph version {g.version}")

    for ids, what in ((g.inputs, "graph input"), (g.outputs, "graph output")):
        for t in ids:
            if not 0 <= t < n:
                raise DanglingReferenceError(f"{what} references undeclared tensor id {t}")
    for t in g.inputs:
        if g.tensors[t].is_constant:
            raise MalformedModelError(f"graph input {t} is a constant")

    producers: dict[int, int] = {}
    for i, layer in enumerate(g.layers):
        _check_attrs(i, layer, off(i))
        _check_arity(i, layer, off(i))
        for t in layer.inputs + (layer.output,):
            if not 0 <= t < n:
                raise DanglingReferenceError(
                    f"layer {i} ({layer.kind}) references undeclared tensor id {t}", off(i)
                )
        if g.tensors[layer.output].is_constant:
            raise MalformedModelError(f"layer {i} writes to constant tensor {layer.output}", off(i))
        if layer.output in g.inputs:
            raise MalformedModelError(f"layer {i} writes to graph input {layer.output}", off(i))
        if layer.output in producers:
            raise MalformedModelError(
                f"tensor {layer.output} produced by layers {producers[layer.output]} and {i}",
                off(i),
            )
        producers[layer.output] = i
        # Constants may only appear in the weight/bias slots of conv-like layers.
        weight_slots = (1, 2) if layer.kind in ("conv2d", "depthwise_conv2d", "fully_connected") else ()
        for slot, t in enumerate(layer.inputs):
            if g.tensors[t].is_constant and slot not in weight_slots:
                raise MalformedModelError(
                    f"layer {i} ({layer.kind}): constant tensor {t} used as a data input", off(i)
                )

    for t in range(n):
        decl = g.tensors[t]
        if not decl.is_constant and t not in g.inputs and t not in producers:
            raise MalformedModelError(f"non-constant tensor {t} has no producer")

    # Activations must be uniformly float32 or uniformly int8.
    act_dtypes = {
        g.tensors[t].dtype for t in range(n) if not g.tensors[t].is_constant
    }
    if act_dtypes - {"float32", "int8"}:
        raise MalformedModelError(f"activation tensors must be float32 or int8, got {act_dtypes}")
    if len(act_dtypes) > 1:
        raise MalformedModelError(f"mixed activation dtypes {sorted(act_dtypes)}")

    # Kahn's algorithm; ready layers processed in ascending index for determinism.
    consumers: dict[int, list[int]] = {}
    indegree = []
    for i, layer in enumerate(g.layers):
        missing = 0
        for t in layer.inputs:
            if g.tensors[t].is_constant or t in g.inputs:
                continue
            missing += 1
            consumers.setdefault(t, []).append(i)
        indegree.append(missing)
    ready = [i for i, d in enumerate(indegree) if d == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for follower in consumers.get(g.layers[i].output, ()):
            indegree[follower] -= 1
            if indegree[follower] == 0:
                heapq.heappush(ready, follower)
    if len(order) != len(g.layers):
        stuck = min(i for i, d in enumerate(indegree) if d > 0)
        raise CyclicGraphError(
            f"layer dependency graph has a cycle involving layer {stuck}", off(stuck)
        )

    for i in order:
        layer = g.layers[i]
        shape, dtype = _infer_output(g, i, layer, off(i))
        declared = g.tensors[layer.output]
        if declared.shape != shape:
            raise ShapeMismatchError(
                f"layer {i} ({layer.kind}): declared output shape {declared.shape} != inferred {shape}",
                off(i),
            )
        if declared.dtype != dtype:
            raise ShapeMismatchError(
                f"layer {i} ({layer.kind}): declared output dtype {declared.dtype} != inferred {dtype}",
                off(i),
            )
        if layer.kind in ("conv2d", "depthwise_conv2d", "fully_connected"):
            w, b = g.tensors[layer.inputs[1]], g.tensors[layer.inputs[2]]
            quantized = g.tensors[layer.inputs[0]].dtype == "int8"
            want_w, want_b = ("int8", "int32") if quantized else ("float32", "float32")
            if w.dtype != want_w or b.dtype != want_b:
                raise MalformedModelError(
                    f"layer {i} ({layer.kind}): weights/bias dtypes ({w.dtype}, {b.dtype}) "
                    f"!= expected ({want_w}, {want_b})",
                    off(i),
                )
            if not (w.is_constant and b.is_constant):
                raise MalformedModelError(
                    f"layer {i} ({layer.kind}): weights and bias must be constants", off(i)
                )

    g.topo_order = tuple(order)
    return g
