"""regolith: a tiny-ML edge vision toolkit.

Chip large rasters into tiles, run small CNN classifiers/detectors in
float32 or integer-only int8, post-training-quantize models, plan
static memory arenas, and report latency / peak RAM / ROM / accuracy
tradeoffs for microcontroller-class deployments.
"""

from .arena import ArenaPlan, LivenessInterval, liveness, plan_arena, plan_table
from .bench import BenchReport, benchmark, report_table, report_tsv
from .builder import GraphBuilder
from .dataset import (
    LabeledExample,
    SplitAssignment,
    Tile,
    load_class_labels,
    load_labels,
    reassemble,
    split_dataset,
    tile_image,
)
from .detect import (
    AnchorHead,
    AnchorSet,
    BBox,
    count_rocks,
    decode_head,
    emit_overlay,
    iou,
    nms,
)
from .engine import ExecutionTrace, run, run_with_activations
from .errors import RegolithError
from .metrics import ConfusionMatrix, accuracy, confusion
from .model import LayerSpec, ModelGraph, TensorDecl, validate
from .png_io import decode_image, encode_png, image_to_input, read_image, write_png
from .quantizer import CalibrationStats, calibrate, quantize_input, quantize_model
from .serialize import load_model, parse_model, rom_size, save_model, serialize_model
from .tensor import QuantParams, Tensor, compute_qparams, dequantize, quantize

__version__ = "0.1.0"

__all__ = [
    "AnchorHead",
    "AnchorSet",
    "ArenaPlan",
    "BBox",
    "BenchReport",
    "CalibrationStats",
    "ConfusionMatrix",
    "ExecutionTrace",
    "GraphBuilder",
    "LabeledExample",
    "LayerSpec",
    "LivenessInterval",
    "ModelGraph",
    "QuantParams",
    "RegolithError",
    "SplitAssignment",
    "Tensor",
    "TensorDecl",
    "Tile",
    "accuracy",
    "benchmark",
    "calibrate",
    "compute_qparams",
    "confusion",
    "count_rocks",
    "decode_head",
    "decode_image",
    "dequantize",
    "emit_overlay",
    "encode_png",
    "image_to_input",
    "iou",
    "liveness",
    "load_class_labels",
    "load_labels",
    "load_model",
    "nms",
    "parse_model",
    "plan_arena",
    "plan_table",
    "quantize",
    "quantize_input",
    "quantize_model",
    "read_image",
    "reassemble",
    "report_table",
    "report_tsv",
    "rom_size",
    "run",
    "run_with_activations",
    "save_model",
    "serialize_model",
    "split_dataset",
    "tile_image",
    "validate",
    "write_png",
]
