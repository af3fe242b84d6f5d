"""PNG decode/encode at the toolkit boundary.

Images enter as (H, W, 3) float32 tensors with values k/255 in [0, 1]
and leave as 8-bit RGB PNGs. Only 8-bit PNGs are accepted; anything
else is reported as an error rather than silently converted.
"""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import RegolithError
from .tensor import Tensor, round_half_away

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageDecodeError(RegolithError):
    """Corrupt or non-PNG byte stream."""


class UnsupportedImageError(RegolithError):
    """Valid PNG with a bit depth this toolkit does not handle."""


def decode_image(data: bytes) -> Tensor:
    """Decode PNG bytes to an (H, W, 3) float32 tensor scaled to [0, 1]."""
    if len(data) < 26 or not data.startswith(_PNG_SIGNATURE):
        raise ImageDecodeError("not a PNG stream")
    # IHDR is required first: signature, length+type (8), width/height (8), then bit depth.
    bit_depth = data[24]
    if bit_depth != 8:
        raise UnsupportedImageError(f"unsupported PNG bit depth {bit_depth}, want 8")
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            rgb = img.convert("RGB")
            array = np.asarray(rgb, dtype=np.float32) / 255.0
    except UnidentifiedImageError as err:
        raise ImageDecodeError(f"undecodable PNG stream: {err}") from None
    except (OSError, SyntaxError, ValueError, struct.error) as err:
        raise ImageDecodeError(f"corrupt PNG stream: {err}") from None
    return Tensor(array)


def encode_png(image) -> bytes:
    """Encode an (H, W, 3) float32 [0, 1] tensor or array as PNG bytes."""
    array = image.data if isinstance(image, Tensor) else np.asarray(image)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ImageDecodeError(f"encode_png expects (H, W, 3), got {array.shape}")
    if array.dtype != np.uint8:
        array = np.clip(round_half_away(np.asarray(array, np.float64) * 255.0), 0, 255)
        array = array.astype(np.uint8)
    img = Image.fromarray(array, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def read_image(path) -> Tensor:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_png(path, image) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))


def image_to_input(image: Tensor) -> Tensor:
    """Add the leading batch extent expected by graph inputs."""
    return Tensor(image.data.reshape((1,) + image.shape), qparams=image.qparams)
