"""Dataset pipeline: chip large rasters into tiles, split, load annotations.

Tiling walks a raster row-major with a fixed stride. Under ``pad_edge``
a tile starts at every grid position inside the image and edge tiles are
zero-padded to full size, so every source pixel lands in a tile; under
``drop_partial`` only fully interior tiles are emitted. Splits shuffle
with the pinned PRNG from :mod:`regolith.rng` so a seed identifies a
split forever.

Box annotations use the line-oriented normalized format written by
common labeling GUIs: ``class cx cy w h`` per line, all four geometry
fields in [0, 1] relative to the tile. Classification labels come from
the directory a tile was sorted into.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .detect import BBox
from .errors import RegolithError
from .rng import Xoshiro256StarStar
from .tensor import Tensor

TILE_POLICIES = ("pad_edge", "drop_partial")
DEFAULT_SEED = 42
CLASS_NAMES = ("other", "rock", "rover")


class DatasetError(RegolithError):
    pass


class LabelFormatError(DatasetError):
    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


@dataclass(frozen=True)
class Tile:
    """One chip of a source raster; origin is the top-left pixel."""

    source: str
    x: int
    y: int
    width: int
    height: int
    pixels: Tensor


@dataclass(frozen=True)
class LabeledExample:
    """A tile reference with either a class label or a box list."""

    tile: str
    label: str | None = None
    boxes: tuple[BBox, ...] | None = None


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]
    seed: int

    def counts(self) -> dict[str, int]:
        out = {"train": 0, "val": 0, "test": 0}
        for split in self.assignment.values():
            out[split] += 1
        return out


def tile_grid(extent: int, tile: int, stride: int, policy: str) -> list[int]:
    """Origin coordinates along one axis for the given policy."""
    if policy == "pad_edge":
        return list(range(0, extent, stride))
    return list(range(0, extent - tile + 1, stride))


def tile_image(img: Tensor, tile: int, stride: int, policy: str = "pad_edge") -> list[Tile]:
    """Chip an (H, W, C) image tensor into fixed-size tiles, row-major.

    ``pad_edge`` zero-pads tiles that overrun the image; ``drop_partial``
    drops them (an image smaller than the tile yields no tiles).
    """
    if tile < 1 or stride < 1:
        raise DatasetError(f"tile and stride must be >= 1, got {tile}, {stride}")
    if policy not in TILE_POLICIES:
        raise DatasetError(f"unknown tiling policy {policy!r}")
    data = img.data
    if data.ndim != 3:
        raise DatasetError(f"tile_image expects an (H, W, C) tensor, got {img.shape}")
    h, w = data.shape[0], data.shape[1]
    tiles = []
    for y in tile_grid(h, tile, stride, policy):
        for x in tile_grid(w, tile, stride, policy):
            chunk = data[y : y + tile, x : x + tile]
            if chunk.shape[0] != tile or chunk.shape[1] != tile:
                padded = np.zeros((tile, tile, data.shape[2]), dtype=data.dtype)
                padded[: chunk.shape[0], : chunk.shape[1]] = chunk
                chunk = padded
            tiles.append(Tile("img", x, y, tile, tile, Tensor(np.ascontiguousarray(chunk))))
    return tiles


def reassemble(tiles: list[Tile], height: int, width: int) -> Tensor:
    """Paste tiles back by origin; the inverse of pad_edge tiling."""
    if not tiles:
        raise DatasetError("no tiles to reassemble")
    channels = tiles[0].pixels.shape[2]
    out = np.zeros((height, width, channels), dtype=tiles[0].pixels.data.dtype)
    for t in tiles:
        h = min(t.height, height - t.y)
        w = min(t.width, width - t.x)
        out[t.y : t.y + h, t.x : t.x + w] = t.pixels.data[:h, :w]
    return Tensor(out)


def split_dataset(ids, ratios=(0.70, 0.15, 0.15), seed: int = DEFAULT_SEED) -> SplitAssignment:
    """Deterministically partition ids into train/val/test.

    Ids are shuffled by the seeded PRNG, then the first floor(r_train*n)
    go to train, the next floor(r_val*n) to val, and the rest to test.
    """
    ids = list(ids)
    if not ids:
        raise DatasetError("empty id list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios {ratios} do not sum to 1")
    shuffled = list(ids)
    Xoshiro256StarStar(seed).shuffle(shuffled)
    n = len(shuffled)
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    assignment = {}
    for i, item in enumerate(shuffled):
        if i < n_train:
            assignment[item] = "train"
        elif i < n_train + n_val:
            assignment[item] = "val"
        else:
            assignment[item] = "test"
    return SplitAssignment(assignment, seed)


def parse_box_line(line: str, frame_w: float, frame_h: float, path="<string>", line_no=0) -> BBox:
    """One ``class cx cy w h`` record (normalized) to a pixel-corner BBox."""
    fields = line.split()
    if len(fields) != 5:
        raise LabelFormatError(path, line_no, f"expected 5 fields, got {len(fields)}")
    try:
        class_id = int(fields[0])
        cx, cy, w, h = (float(f) for f in fields[1:])
    except ValueError as err:
        raise LabelFormatError(path, line_no, str(err)) from None
    if class_id < 0:
        raise LabelFormatError(path, line_no, f"negative class id {class_id}")
    for name, value in (("cx", cx), ("cy", cy), ("w", w), ("h", h)):
        if not 0.0 <= value <= 1.0:
            raise LabelFormatError(path, line_no, f"{name}={value} outside [0, 1]")
    if w == 0.0 or h == 0.0:
        raise LabelFormatError(path, line_no, "zero-extent box")
    return BBox(
        (cx - w / 2) * frame_w,
        (cy - h / 2) * frame_h,
        (cx + w / 2) * frame_w,
        (cy + h / 2) * frame_h,
        class_id,
        1.0,
    )


def box_to_line(box: BBox, frame_w: float, frame_h: float) -> str:
    """Inverse of :func:`parse_box_line` (confidence is not stored)."""
    cx = (box.x_min + box.x_max) / 2 / frame_w
    cy = (box.y_min + box.y_max) / 2 / frame_h
    w = (box.x_max - box.x_min) / frame_w
    h = (box.y_max - box.y_min) / frame_h
    return f"{box.class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"


def load_box_file(path, frame_w: float, frame_h: float) -> LabeledExample:
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            boxes.append(parse_box_line(line, frame_w, frame_h, path, line_no))
    stem = os.path.splitext(os.path.basename(path))[0]
    return LabeledExample(stem, boxes=tuple(boxes))


def load_labels(path, frame_w: float = 416.0, frame_h: float = 416.0) -> list[LabeledExample]:
    """Load box annotations from one file or a directory of ``.txt`` files."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".txt"))
        return [load_box_file(os.path.join(path, n), frame_w, frame_h) for n in names]
    return [load_box_file(path, frame_w, frame_h)]


def load_class_labels(root) -> list[LabeledExample]:
    """Folder-sorted classification labels: one subdirectory per class."""
    examples = []
    for class_name in sorted(os.listdir(root)):
        class_dir = os.path.join(root, class_name)
        if not os.path.isdir(class_dir):
            continue
        for name in sorted(os.listdir(class_dir)):
            stem = os.path.splitext(name)[0]
            examples.append(LabeledExample(os.path.join(class_name, stem), label=class_name))
    if not examples:
        raise DatasetError(f"no class directories under {root}")
    return examples
