"""Binary `.rglm` model files: byte-exact serialization and robust parsing.

Layout (all integers little-endian, no implicit padding):

    header        magic "RGLM" (4s), version u32, n_tensors u32,
                  n_layers u32, n_inputs u32, n_outputs u32
    graph inputs  tensor id u32 * n_inputs
    graph outputs tensor id u32 * n_outputs
    tensor table  one record per tensor, declaring tensor id 0, 1, ...:
                      dtype u8, flags u8, ndim u8, reserved u8 (0)
                      dims u32 * ndim
                      [scale f64, zero_point i32]   when flags bit 0
                      [payload_len u64]             when flags bit 1
    layer table   one record per layer:
                      kind u8, n_attrs u8, n_inputs u16, output u32,
                      input ids u32 * n_inputs,
                      (attr key u8, attr value i32) * n_attrs
                  attribute pairs sorted by ascending key; this is the
                  only accepted encoding, so serialization is canonical
    blob          constant payloads concatenated in tensor id order

The parser never trusts a length field: every read is bounds-checked
(truncation errors carry the offending byte offset), enum codes and
counts are validated, and the resulting graph goes through full
validation, so arbitrary byte streams either parse to a valid graph or
raise a typed ModelError.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .model import (
    ATTR_SCHEMA,
    FORMAT_VERSION,
    LAYER_KINDS,
    BadMagicError,
    LayerSpec,
    MalformedModelError,
    ModelGraph,
    TensorDecl,
    TruncatedPayloadError,
    UnsupportedVersionError,
    validate,
)
from .tensor import QMAX, QMIN, QuantParams

MAGIC = b"RGLM"
HEADER_SIZE = 24
TENSOR_FIXED_SIZE = 4  # dtype, flags, ndim, reserved
QPARAMS_SIZE = 12  # f64 scale + i32 zero_point
PAYLOAD_LEN_SIZE = 8

_DTYPE_CODES = {"float32": 0, "int8": 1, "int32": 2}
_DTYPE_FROM_CODE = {v: k for k, v in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {"float32": np.float32, "int8": np.int8, "int32": np.int32}

_KIND_CODES = {kind: i for i, kind in enumerate(LAYER_KINDS)}
_KIND_FROM_CODE = {i: kind for kind, i in _KIND_CODES.items()}

_ATTR_CODES = {
    "stride_h": 0,
    "stride_w": 1,
    "kernel_h": 2,
    "kernel_w": 3,
    "padding": 4,
    "activation": 5,
}
_ATTR_FROM_CODE = {v: k for k, v in _ATTR_CODES.items()}
_ENUM_ATTR_VALUES = {
    "padding": {"same": 0, "valid": 1},
    "activation": {"none": 0, "relu6": 1},
}
_ENUM_ATTR_NAMES = {
    attr: {code: name for name, code in table.items()}
    for attr, table in _ENUM_ATTR_VALUES.items()
}

MAX_NDIM = 8
MAX_EXTENT = 1 << 28
MAX_ELEMENTS = 1 << 34


def _attr_value_code(attr: str, value) -> int:
    if attr in _ENUM_ATTR_VALUES:
        return _ENUM_ATTR_VALUES[attr][value]
    return int(value)


def serialize_model(g: ModelGraph) -> bytes:
    """Encode a valid graph to canonical bytes (same graph, same bytes)."""
    validate(g)
    out = bytearray()
    out += MAGIC
    out += struct.pack(
        "<IIIII", g.version, len(g.tensors), len(g.layers), len(g.inputs), len(g.outputs)
    )
    for t in g.inputs:
        out += struct.pack("<I", t)
    for t in g.outputs:
        out += struct.pack("<I", t)

    blob = bytearray()
    for decl in g.tensors:
        flags = (1 if decl.qparams is not None else 0) | (2 if decl.is_constant else 0)
        out += struct.pack("<BBBB", _DTYPE_CODES[decl.dtype], flags, len(decl.shape), 0)
        for d in decl.shape:
            out += struct.pack("<I", d)
        if decl.qparams is not None:
            out += struct.pack("<di", decl.qparams.scale, decl.qparams.zero_point)
        if decl.is_constant:
            raw = decl.payload.tobytes()
            out += struct.pack("<Q", len(raw))
            blob += raw

    for layer in g.layers:
        attrs = sorted((_ATTR_CODES[k], _attr_value_code(k, v)) for k, v in layer.attrs.items())
        out += struct.pack(
            "<BBHI", _KIND_CODES[layer.kind], len(attrs), len(layer.inputs), layer.output
        )
        for t in layer.inputs:
            out += struct.pack("<I", t)
        for key, value in attrs:
            out += struct.pack("<Bi", key, value)

    out += blob
    return bytes(out)


def rom_size(g: ModelGraph) -> int:
    """Serialized model size in bytes; the 'ROM' figure of cost reports."""
    return len(serialize_model(g))


class _Cursor:
    """Bounds-checked little-endian reader over an immutable byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def need(self, count: int, what: str):
        if count < 0 or self.pos + count > len(self.data):
            raise TruncatedPayloadError(
                f"truncated while reading {what}: need {count} bytes, "
                f"have {len(self.data) - self.pos}",
                self.pos,
            )

    def take(self, count: int, what: str) -> bytes:
        self.need(count, what)
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def parse_model(data: bytes) -> ModelGraph:
    """Decode and fully validate a `.rglm` byte stream.

    Inverse of :func:`serialize_model` on valid inputs. Every failure
    raises a ModelError subclass carrying the byte offset it was
    detected at; no input may crash the parser.
    """
    cur = _Cursor(bytes(data))
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version, n_tensors, n_layers, n_inputs, n_outputs = cur.unpack("<IIIII", "header")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}", 4)

    inputs = [cur.unpack("<I", "graph input id")[0] for _ in range(n_inputs)]
    outputs = [cur.unpack("<I", "graph output id")[0] for _ in range(n_outputs)]

    tensors: list[TensorDecl] = []
    payload_lens: list[int] = []
    for i in range(n_tensors):
        record_at = cur.pos
        dtype_code, flags, ndim, reserved = cur.unpack("<BBBB", f"tensor {i} record")
        if dtype_code not in _DTYPE_FROM_CODE:
            raise MalformedModelError(f"tensor {i}: unknown dtype code {dtype_code}", record_at)
        if flags & ~3:
            raise MalformedModelError(f"tensor {i}: unknown flag bits {flags:#x}", record_at)
        if reserved != 0:
            raise MalformedModelError(f"tensor {i}: reserved byte must be 0", record_at)
        if ndim > MAX_NDIM:
            raise MalformedModelError(f"tensor {i}: ndim {ndim} exceeds limit {MAX_NDIM}", record_at)
        dims = []
        for _ in range(ndim):
            (d,) = cur.unpack("<I", f"tensor {i} extent")
            if not 1 <= d <= MAX_EXTENT:
                raise MalformedModelError(f"tensor {i}: extent {d} out of range", record_at)
            dims.append(d)
        size = math.prod(dims)
        if size > MAX_ELEMENTS:
            raise MalformedModelError(f"tensor {i}: {size} elements exceeds limit", record_at)
        dtype = _DTYPE_FROM_CODE[dtype_code]
        qparams = None
        if flags & 1:
            scale, zero_point = cur.unpack("<di", f"tensor {i} qparams")
            if not (math.isfinite(scale) and scale > 0):
                raise MalformedModelError(f"tensor {i}: bad scale {scale!r}", record_at)
            if not QMIN <= zero_point <= QMAX:
                raise MalformedModelError(
                    f"tensor {i}: zero_point {zero_point} outside [{QMIN}, {QMAX}]", record_at
                )
            qparams = QuantParams(scale, zero_point)
        expected_len = 0
        if flags & 2:
            (expected_len,) = cur.unpack("<Q", f"tensor {i} payload length")
            width = {"float32": 4, "int8": 1, "int32": 4}[dtype]
            if expected_len != size * width:
                raise MalformedModelError(
                    f"tensor {i}: payload length {expected_len} != {size * width}", record_at
                )
        payload_lens.append(expected_len)
        try:
            decl = TensorDecl(tuple(dims), dtype, qparams=qparams)
        except MalformedModelError as err:
            raise MalformedModelError(f"tensor {i}: {err}", record_at) from None
        tensors.append(decl)

    layers: list[LayerSpec] = []
    layer_offsets: list[int] = []
    for i in range(n_layers):
        record_at = cur.pos
        kind_code, n_attrs, layer_inputs, output = cur.unpack("<BBHI", f"layer {i} record")
        if kind_code not in _KIND_FROM_CODE:
            raise MalformedModelError(f"layer {i}: unknown kind code {kind_code}", record_at)
        kind = _KIND_FROM_CODE[kind_code]
        input_ids = [cur.unpack("<I", f"layer {i} input id")[0] for _ in range(layer_inputs)]
        attrs: dict[str, int | str] = {}
        last_key = -1
        for _ in range(n_attrs):
            key_code, value = cur.unpack("<Bi", f"layer {i} attribute")
            if key_code not in _ATTR_FROM_CODE:
                raise MalformedModelError(f"layer {i}: unknown attribute code {key_code}", record_at)
            if key_code <= last_key:
                raise MalformedModelError(
                    f"layer {i}: attribute keys not strictly ascending", record_at
                )
            last_key = key_code
            name = _ATTR_FROM_CODE[key_code]
            if name in _ENUM_ATTR_NAMES:
                if value not in _ENUM_ATTR_NAMES[name]:
                    raise MalformedModelError(
                        f"layer {i}: bad {name} code {value}", record_at
                    )
                attrs[name] = _ENUM_ATTR_NAMES[name][value]
            else:
                attrs[name] = value
        layers.append(LayerSpec(kind, tuple(input_ids), output, attrs))
        layer_offsets.append(record_at)

    for i, expected_len in enumerate(payload_lens):
        if expected_len:
            blob_at = cur.pos
            raw = cur.take(expected_len, f"tensor {i} payload")
            decl = tensors[i]
            values = np.frombuffer(raw, dtype=_NUMPY_DTYPES[decl.dtype])
            try:
                tensors[i] = TensorDecl(decl.shape, decl.dtype, decl.qparams, values)
            except MalformedModelError as err:
                raise MalformedModelError(f"tensor {i}: {err}", blob_at) from None

    if cur.pos != len(cur.data):
        raise MalformedModelError(
            f"{len(cur.data) - cur.pos} trailing bytes after model", cur.pos
        )

    graph = ModelGraph(version, tensors, layers, tuple(inputs), tuple(outputs))
    return validate(graph, layer_offsets)


def load_model(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def save_model(g: ModelGraph, path) -> int:
    data = serialize_model(g)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)
