"""Built-in demo models and synthetic tile corpus.

No trained weights ship with this toolkit, so the demo classifier is
hand-designed: a bank of fixed edge filters whose pooled, saturating
responses separate three surface types by texture energy alone.

    other   flat terrain and sky: almost no local gradient
    rock    darker blobs on soil: moderate gradient energy
    rover   hardware panels and stripes: extreme contrast everywhere

The edge-energy feature drives three linear logits whose argmax bands
split the energy axis. Faint, low-contrast rocks sit close to the
other/rock boundary on purpose: in float32 they clear it, while int8
activation rounding (with plain min/max calibration over a corpus whose
rover tiles stretch the ranges) flips a visible share of them, the
classic quantization tradeoff on low-contrast imagery.

``python -m regolith.zoo --out DIR`` materializes models and corpus for
the command-line tools.
"""

from __future__ import annotations

import numpy as np

from .builder import GraphBuilder
from .model import ModelGraph
from .tensor import Tensor

TILE = 32
CLASS_NAMES = ("other", "rock", "rover")

EDGE_GAIN = 6.0
EDGE_CUTOFF = 0.25  # relu6 bias: gradients below EDGE_CUTOFF/EDGE_GAIN read as 0
LOGIT_GAIN = 600.0
ENERGY_SPLIT_OTHER_ROCK = 0.0015
ENERGY_SPLIT_ROCK_ROVER = 0.08


# ---------------------------------------------------------------------------
# synthetic tiles


def _soil_base(rng: np.random.Generator) -> np.ndarray:
    base = 0.40 + rng.uniform(-0.04, 0.04)
    rows = np.linspace(-1.0, 1.0, TILE)[:, None, None]
    tile = base + 0.02 * rows * rng.uniform(-1, 1)
    tile = tile + rng.normal(0.0, 0.006, size=(TILE, TILE, 1))
    tint = np.array([1.04, 1.0, 0.92]) * rng.uniform(0.97, 1.03)
    return np.clip(tile * tint, 0.0, 1.0)


def _blob_mask(rng: np.random.Generator, radius_lo=3.0, radius_hi=7.0) -> np.ndarray:
    cy, cx = rng.uniform(8, TILE - 8, size=2)
    ry = rng.uniform(radius_lo, radius_hi)
    rx = rng.uniform(radius_lo, radius_hi)
    theta = rng.uniform(0, np.pi)
    ys, xs = np.mgrid[0:TILE, 0:TILE]
    y = (ys - cy) * np.cos(theta) + (xs - cx) * np.sin(theta)
    x = -(ys - cy) * np.sin(theta) + (xs - cx) * np.cos(theta)
    return np.clip(1.0 - ((y / ry) ** 2 + (x / rx) ** 2), 0.0, 1.0)


def synth_tile(kind: str, rng: np.random.Generator) -> Tensor:
    """One (TILE, TILE, 3) float tile of the requested surface type."""
    if kind == "other":
        tile = _soil_base(rng)
        if rng.random() < 0.3:  # smooth distant-sky wash, no hard horizon
            rows = np.linspace(1.0, 0.0, TILE)[:, None, None] ** 3
            tile = tile * (1 - 0.25 * rows) + 0.62 * 0.25 * rows
    elif kind == "rock":
        tile = _soil_base(rng)
        faint = rng.random() < 0.3
        for _ in range(int(rng.integers(1, 4))):
            depth = rng.uniform(0.055, 0.10) if faint else rng.uniform(0.15, 0.32)
            mask = _blob_mask(rng) ** 0.35  # sharp rim
            shade = np.clip(np.roll(mask, (1, 1), axis=(0, 1)) - mask, 0, 1)
            tile = tile - depth * mask[:, :, None] + 0.4 * depth * shade[:, :, None]
    elif kind == "rover":
        tile = _soil_base(rng)
        for _ in range(int(rng.integers(2, 5))):
            y0, x0 = rng.integers(0, TILE - 8, size=2)
            h, w = rng.integers(6, 16, size=2)
            value = rng.choice([0.02, 0.95])
            tile[y0 : y0 + h, x0 : x0 + w] = value
        if rng.random() < 0.5:  # striped radiator texture
            x0 = int(rng.integers(0, TILE - 12))
            for k in range(6):
                tile[:, x0 + 2 * k] = 0.9 if k % 2 == 0 else 0.05
    else:
        raise ValueError(f"unknown tile kind {kind!r}")
    return Tensor(np.clip(tile, 0.0, 1.0).astype(np.float32))


def synth_corpus(total: int = 600, seed: int = 42) -> list[tuple[Tensor, str]]:
    """Balanced labeled corpus of synthetic tiles, deterministic per seed."""
    rng = np.random.default_rng(seed)
    per_class = total // len(CLASS_NAMES)
    corpus = []
    for kind in CLASS_NAMES:
        for _ in range(per_class):
            corpus.append((synth_tile(kind, rng), kind))
    while len(corpus) < total:
        corpus.append((synth_tile("other", rng), "other"))
    return corpus


def synth_panorama(width: int = 448, height: int = 160, seed: int = 7) -> Tensor:
    """A small terrain strip with planted rocks, for chipping demos."""
    rng = np.random.default_rng(seed)
    rows = np.linspace(-1, 1, height)[:, None, None]
    pano = 0.42 + 0.03 * rows + rng.normal(0, 0.006, size=(height, width, 1))
    pano = np.clip(pano * np.array([1.04, 1.0, 0.92]), 0, 1)
    ys, xs = np.mgrid[0:height, 0:width]
    for _ in range(width * height // 2500):
        cy = rng.uniform(12, height - 12)
        cx = rng.uniform(12, width - 12)
        r = rng.uniform(3, 9)
        mask = np.clip(1 - (((ys - cy) / r) ** 2 + ((xs - cx) / r) ** 2), 0, 1)
        pano = pano - rng.uniform(0.15, 0.3) * mask[:, :, None]
    return Tensor(np.clip(pano, 0, 1).astype(np.float32))


# ---------------------------------------------------------------------------
# models


def _edge_filters() -> np.ndarray:
    """Four fixed 3x3 luminance edge detectors: +/- horizontal, +/- vertical."""
    sobel_h = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], np.float32) / 4.0
    sobel_v = sobel_h.T
    bank = np.stack([sobel_h, -sobel_h, sobel_v, -sobel_v])  # (4, 3, 3)
    # apply to the channel mean: replicate across RGB at one third weight
    filters = np.repeat(bank[:, :, :, None] / 3.0, 3, axis=3)  # (4, 3, 3, 3)
    return (filters * EDGE_GAIN).astype(np.float32)


def build_demo_classifier() -> ModelGraph:
    """Hand-designed texture-energy classifier over 32x32 RGB tiles.

    edge conv (relu6, saturating) -> 4x4 mean pool -> linear logits whose
    argmax splits the pooled energy axis into other / rock / rover bands.
    """
    b = GraphBuilder()
    x = b.input((1, TILE, TILE, 3))
    t = b.conv2d(x, _edge_filters(), np.full(4, -EDGE_CUTOFF, np.float32),
                 stride=(1, 1), padding="same", activation="relu6")
    t = b.avg_pool(t, (4, 4), (4, 4), "valid")
    flat = (TILE // 4) * (TILE // 4) * 4
    t = b.reshape(t, (1, flat))
    per_dim = LOGIT_GAIN / flat
    weights = np.zeros((3, flat), np.float32)
    weights[0] = -per_dim  # other: low energy
    weights[2] = per_dim  # rover: high energy
    biases = np.array(
        [
            LOGIT_GAIN * ENERGY_SPLIT_OTHER_ROCK,
            0.0,
            -LOGIT_GAIN * ENERGY_SPLIT_ROCK_ROVER,
        ],
        np.float32,
    )
    t = b.fully_connected(t, weights, biases)
    b.output(b.softmax(t))
    return b.finish()


def build_benchmark_classifier(seed: int = 2718) -> ModelGraph:
    """A >=100k-parameter classifier with seeded weights for cost reports."""
    rng = np.random.default_rng(seed)

    def w(*shape, scale):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    b = GraphBuilder()
    x = b.input((1, TILE, TILE, 3))
    t = b.conv2d(x, w(24, 3, 3, 3, scale=0.25), w(24, scale=0.05),
                 padding="same", activation="relu6")
    t = b.conv2d(t, w(32, 3, 3, 24, scale=0.08), w(32, scale=0.05),
                 stride=(2, 2), padding="same", activation="relu6")
    t = b.depthwise_conv2d(t, w(32, 3, 3, 1, scale=0.2), w(32, scale=0.05),
                           padding="same", activation="relu6")
    t = b.conv2d(t, w(48, 1, 1, 32, scale=0.15), w(48, scale=0.05),
                 padding="same", activation="relu6")
    t = b.max_pool(t, (2, 2), (2, 2), "valid")
    flat = (TILE // 4) * (TILE // 4) * 48
    t = b.reshape(t, (1, flat))
    t = b.fully_connected(t, w(32, flat, scale=0.03), w(32, scale=0.02),
                          activation="relu6")
    t = b.fully_connected(t, w(3, 32, scale=0.2), np.zeros(3, np.float32))
    b.output(b.softmax(t))
    return b.finish()


def build_demo_detector(seed: int = 1414) -> ModelGraph:
    """A small seeded conv stack emitting a 13x13 single-class anchor map."""
    rng = np.random.default_rng(seed)

    def w(*shape, scale):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    b = GraphBuilder()
    x = b.input((1, 52, 52, 3))
    t = b.conv2d(x, w(8, 3, 3, 3, scale=0.3), w(8, scale=0.05),
                 stride=(2, 2), padding="same", activation="relu6")
    t = b.conv2d(t, w(16, 3, 3, 8, scale=0.15), w(16, scale=0.05),
                 stride=(2, 2), padding="same", activation="relu6")
    t = b.conv2d(t, w(18, 1, 1, 16, scale=0.2), w(18, scale=0.02), padding="same")
    b.output(t)
    return b.finish()


def param_count(g: ModelGraph) -> int:
    return sum(t.size for t in g.tensors if t.is_constant)
