"""Detector post-processing: box decoding, IoU, NMS, counting, overlays.

Raw detector maps are decoded with the classic grid-cell recipe: sigmoid
center offsets within each cell, exponential width/height against anchor
priors, and confidence = sigmoid(objectness) * sigmoid(best class
score). Greedy NMS then drops same-class boxes that overlap a kept box
at or above the IoU threshold.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import RegolithError
from .tensor import Tensor, round_half_away

DEFAULT_CONF_THRESH = 0.25
DEFAULT_IOU_THRESH = 0.45

# border colors per class id, cycled
_PALETTE = ((230, 50, 50), (50, 200, 80), (70, 110, 240), (240, 200, 40))


class DetectError(RegolithError):
    pass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates with class id and confidence."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int
    confidence: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DetectError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class AnchorHead:
    """One detector head: anchor priors (pixels) over a regular grid."""

    anchors: tuple[tuple[float, float], ...]
    grid_h: int
    grid_w: int
    cell_size: float

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1 or self.cell_size <= 0:
            raise DetectError("grid extents and cell size must be positive")
        for w, h in self.anchors:
            if w <= 0 or h <= 0:
                raise DetectError(f"non-positive anchor ({w}, {h})")


@dataclass(frozen=True)
class AnchorSet:
    heads: tuple[AnchorHead, ...]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode_head(raw, anchors: AnchorSet, conf_thresh: float = DEFAULT_CONF_THRESH,
                head: int = 0) -> list[BBox]:
    """Decode one head's raw (grid_h, grid_w, A*(5+classes)) map to boxes.

    Per cell and anchor the channels are (tx, ty, tw, th, objectness,
    class scores...). Boxes are clipped to the frame and only those at or
    above ``conf_thresh`` are returned, scanned row-major then by anchor.
    """
    spec = anchors.heads[head]
    data = raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 4 and data.shape[0] == 1:
        data = data[0]
    if data.ndim != 3:
        raise DetectError(f"raw map must be (grid_h, grid_w, channels), got {data.shape}")
    gh, gw, channels = data.shape
    if (gh, gw) != (spec.grid_h, spec.grid_w):
        raise DetectError(f"raw grid {gh}x{gw} != anchor grid {spec.grid_h}x{spec.grid_w}")
    n_anchors = len(spec.anchors)
    if channels % n_anchors != 0 or channels // n_anchors < 6:
        raise DetectError(
            f"{channels} channels not divisible into {n_anchors} anchors of (5 + classes)"
        )
    n_classes = channels // n_anchors - 5

    frame_w = spec.grid_w * spec.cell_size
    frame_h = spec.grid_h * spec.cell_size
    fields = data.reshape(gh, gw, n_anchors, 5 + n_classes)

    boxes = []
    for cy in range(gh):
        for cx in range(gw):
            for a, (aw, ah) in enumerate(spec.anchors):
                tx, ty, tw, th, obj = fields[cy, cx, a, :5]
                class_scores = _sigmoid(fields[cy, cx, a, 5:])
                class_id = int(np.argmax(class_scores))
                confidence = float(_sigmoid(np.array(obj)) * class_scores[class_id])
                if confidence < conf_thresh:
                    continue
                center_x = (cx + float(_sigmoid(np.array(tx)))) * spec.cell_size
                center_y = (cy + float(_sigmoid(np.array(ty)))) * spec.cell_size
                width = aw * math.exp(min(tw, 50.0))
                height = ah * math.exp(min(th, 50.0))
                x0 = max(center_x - width / 2, 0.0)
                y0 = max(center_y - height / 2, 0.0)
                x1 = min(center_x + width / 2, frame_w)
                y1 = min(center_y + height / 2, frame_h)
                if x0 >= x1 or y0 >= y1:
                    continue
                boxes.append(BBox(x0, y0, x1, y1, class_id, min(confidence, 1.0)))
    return boxes


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(boxes, iou_thresh: float = DEFAULT_IOU_THRESH) -> list[BBox]:
    """Greedy non-maximum suppression, per class.

    Candidates are visited by (confidence desc, x_min asc, y_min asc);
    each kept box suppresses remaining same-class boxes with IoU at or
    above the threshold. Output keeps the visiting order, so it is
    sorted by descending confidence.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise DetectError(f"iou_thresh must be in (0, 1), got {iou_thresh}")
    pending = sorted(boxes, key=lambda b: (-b.confidence, b.x_min, b.y_min))
    kept: list[BBox] = []
    alive = [True] * len(pending)
    for i, box in enumerate(pending):
        if not alive[i]:
            continue
        kept.append(box)
        for j in range(i + 1, len(pending)):
            if not alive[j] or pending[j].class_id != box.class_id:
                continue
            if iou(box, pending[j]) >= iou_thresh:
                alive[j] = False
    return kept


@dataclass(frozen=True)
class RockCountReport:
    per_frame: tuple[int, ...]
    histogram: dict[int, int]
    min: int
    max: int
    mean: float


def count_rocks(frames, rock_class_id: int = 0) -> RockCountReport:
    """Per-frame counts of the rock class over NMS survivors."""
    counts = tuple(
        sum(1 for b in frame if b.class_id == rock_class_id) for frame in frames
    )
    if not counts:
        return RockCountReport((), {}, 0, 0, 0.0)
    return RockCountReport(
        counts,
        dict(sorted(Counter(counts).items())),
        min(counts),
        max(counts),
        sum(counts) / len(counts),
    )


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def emit_overlay(tile: Tensor, boxes, class_names=("rock",), tile_id: str = "t000",
                 draw_labels: bool = False) -> tuple[bytes, list[str]]:
    """Draw box borders on a tile and emit machine-readable records.

    Returns PNG bytes plus one tab-separated record per box:
    ``tile_id, class name, confidence (3 decimals), corner pixels``.
    With ``draw_labels`` a text tag like ``rock 0.87`` is rendered above
    each box; by default only the one-pixel borders are painted.
    """
    array = np.asarray(
        np.clip(round_half_away(tile.data.astype(np.float64) * 255.0), 0, 255),
        dtype=np.uint8,
    ).copy()
    h, w = array.shape[0], array.shape[1]
    records = []
    for box in boxes:
        x0 = _clamp(int(round_half_away(box.x_min)), 0, w - 1)
        y0 = _clamp(int(round_half_away(box.y_min)), 0, h - 1)
        x1 = _clamp(int(round_half_away(box.x_max)), 0, w - 1)
        y1 = _clamp(int(round_half_away(box.y_max)), 0, h - 1)
        color = _PALETTE[box.class_id % len(_PALETTE)]
        array[y0, x0 : x1 + 1] = color
        array[y1, x0 : x1 + 1] = color
        array[y0 : y1 + 1, x0] = color
        array[y0 : y1 + 1, x1] = color
        name = class_names[box.class_id] if box.class_id < len(class_names) else str(box.class_id)
        records.append(
            f"{tile_id}\t{name}\t{box.confidence:.3f}\t{x0}\t{y0}\t{x1}\t{y1}"
        )
    if draw_labels and records:
        from PIL import Image, ImageDraw

        img = Image.fromarray(array, mode="RGB")
        draw = ImageDraw.Draw(img)
        for box, record in zip(boxes, records):
            name = record.split("\t")[1]
            tag = f"{name} {box.confidence:.2f}"
            x0 = _clamp(int(round_half_away(box.x_min)), 0, w - 1)
            y0 = _clamp(int(round_half_away(box.y_min)), 0, h - 1)
            draw.text((x0 + 2, max(y0 - 11, 0)), tag, fill=_PALETTE[box.class_id % len(_PALETTE)])
        array = np.asarray(img)

    from .png_io import encode_png

    return encode_png(array), records
