"""Deployment cost reports: latency, peak RAM, ROM and accuracy per model.

Latency is the median of repeated timed runs on one fixed input after
discarded warm-ups (medians shrug off host noise); peak RAM comes from
the arena planner and ROM from the serialized model size, so those two
are bit-reproducible. K and M in rendered tables are 1024-based.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .arena import plan_arena
from .engine import run
from .errors import RegolithError
from .metrics import accuracy, confusion
from .model import ModelGraph
from .quantizer import quantize_input
from .serialize import rom_size
from .tensor import Tensor

TABLE_COLUMNS = ("Inference Time (ms)", "Peak RAM (K)", "ROM Usage (M)", "Accuracy")
TABLE_FOOTER = (
    "ROM counts serialized model bytes only; K and M are 1024-based (KiB / MiB)."
)
DEFAULT_REPS = 10
WARMUP_RUNS = 2


class BenchError(RegolithError):
    pass


@dataclass(frozen=True)
class BenchReport:
    """One row of a cost table."""

    name: str
    inference_ms: float
    peak_ram_bytes: int
    rom_bytes: int
    accuracy: float | None

    def __post_init__(self):
        if self.inference_ms < 0 or self.peak_ram_bytes < 0 or self.rom_bytes < 0:
            raise BenchError("negative metric")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise BenchError(f"accuracy {self.accuracy} outside [0, 1]")


def _prepare_input(g: ModelGraph, image: Tensor) -> Tensor:
    if g.is_quantized and image.dtype == "float32":
        return quantize_input(g, image)
    return image


def classify(g: ModelGraph, image: Tensor, classes) -> str:
    """Argmax class of a classifier's first output; ties to the lower index."""
    outputs, _ = run(g, _prepare_input(g, image))
    scores = outputs[0].data.reshape(-1)
    return classes[int(np.argmax(scores))]


def score_eval_set(g: ModelGraph, eval_set, classes):
    """Confusion matrix over (image, truth label) pairs."""
    truths, preds = [], []
    for image, label in eval_set:
        truths.append(label)
        preds.append(classify(g, image, classes))
    return confusion(truths, preds, classes)


def benchmark(
    g: ModelGraph,
    eval_set,
    reps: int = DEFAULT_REPS,
    name: str = "model",
    classes=None,
    timer=time.perf_counter,
) -> BenchReport:
    """Measure one model: median latency, planned peak RAM, ROM, accuracy.

    ``eval_set`` is a sequence of (image tensor, truth label) pairs; the
    first image doubles as the fixed timing input (an all-zeros image is
    used when the eval set is empty, and accuracy is then omitted).
    Timed runs are strictly sequential.
    """
    if reps < 3:
        raise BenchError(f"reps must be >= 3, got {reps}")
    eval_set = list(eval_set)

    if eval_set:
        timing_input = _prepare_input(g, eval_set[0][0])
    else:
        decl = g.tensors[g.inputs[0]]
        zeros = Tensor(np.zeros(decl.shape, dtype=np.float32))
        timing_input = _prepare_input(g, zeros)

    for _ in range(WARMUP_RUNS):
        run(g, timing_input)
    samples = []
    for _ in range(reps):
        start = timer()
        run(g, timing_input)
        samples.append(timer() - start)
    inference_ms = statistics.median(samples) * 1000.0

    acc = None
    if eval_set:
        if classes is None:
            classes = tuple(sorted({label for _, label in eval_set}))
        acc = accuracy(score_eval_set(g, eval_set, classes))

    return BenchReport(
        name=name,
        inference_ms=inference_ms,
        peak_ram_bytes=plan_arena(g).peak_bytes,
        rom_bytes=rom_size(g),
        accuracy=acc,
    )


def bytes_to_kib(n: int) -> float:
    return n / 1024.0


def bytes_to_mib(n: int) -> float:
    return n / (1024.0 * 1024.0)


def _row_values(r: BenchReport) -> tuple[str, str, str, str]:
    return (
        f"{r.inference_ms:.1f}",
        f"{bytes_to_kib(r.peak_ram_bytes):.1f}",
        f"{bytes_to_mib(r.rom_bytes):.1f}",
        "-" if r.accuracy is None else f"{r.accuracy * 100:.1f}%",
    )


def report_table(reports) -> str:
    """Aligned text table, one row per report, in input order."""
    reports = list(reports)
    if not reports:
        raise BenchError("no reports to render")
    name_width = max(len("Model"), max(len(r.name) for r in reports))
    widths = [len(c) for c in TABLE_COLUMNS]
    rows = []
    for r in reports:
        values = _row_values(r)
        widths = [max(w, len(v)) for w, v in zip(widths, values)]
        rows.append(values)
    header = "Model".ljust(name_width) + "  " + "  ".join(
        c.rjust(w) for c, w in zip(TABLE_COLUMNS, widths)
    )
    lines = [header]
    for r, values in zip(reports, rows):
        lines.append(
            r.name.ljust(name_width)
            + "  "
            + "  ".join(v.rjust(w) for v, w in zip(values, widths))
        )
    lines.append(TABLE_FOOTER)
    return "\n".join(lines)


def report_tsv(reports) -> str:
    """Machine-readable twin of :func:`report_table`."""
    lines = ["model\t" + "\t".join(TABLE_COLUMNS)]
    for r in reports:
        lines.append(r.name + "\t" + "\t".join(_row_values(r)))
    return "\n".join(lines)
