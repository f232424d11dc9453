"""Image exchange: linear-RGB float arrays on disk.

Two encodings: a raw 32-bit float container (.fimg) that round-trips
radiance bitwise, and 8-bit PNG previews with an explicit gamma-2.2
encode.  PNG decoding inverts the gamma, so linear values survive
within one quantization step.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataFormatError

_MAGIC = b"FIMG"
_GAMMA = 2.2


def encode_float_image(image: np.ndarray) -> bytes:
    """Lossless [H, W] or [H, W, C] float container bytes."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DataFormatError(f"image must be 2d or 3d, got shape {image.shape}")
    h, w, c = arr.shape
    payload = np.ascontiguousarray(arr).astype("<f4").tobytes()
    return _MAGIC + struct.pack("<III", h, w, c) + payload


def save_float_image(path: str | Path, image: np.ndarray) -> None:
    """Write [H, W] or [H, W, C] float data losslessly."""
    Path(path).write_bytes(encode_float_image(image))


def load_float_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise DataFormatError(f"{path} is not a float image container")
    h, w, c = struct.unpack("<III", raw[4:16])
    expect = 16 + 4 * h * w * c
    if len(raw) != expect:
        raise DataFormatError(f"{path} holds {len(raw)} bytes, expected {expect}")
    arr = np.frombuffer(raw[16:], dtype="<f4").reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def linear_to_gamma_u8(image: np.ndarray) -> np.ndarray:
    """Clip to [0, 1], apply the 2.2 preview curve, quantize to 8 bits."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.rint(255.0 * x ** (1.0 / _GAMMA)).astype(np.uint8)


def gamma_u8_to_linear(encoded: np.ndarray) -> np.ndarray:
    g = np.asarray(encoded, dtype=np.float64) / 255.0
    return (g**_GAMMA).astype(np.float32)


def encode_png(image: np.ndarray) -> bytes:
    """Gamma-encoded 8-bit PNG bytes; the one preview encoder, shared by
    the CLI and the render service so their outputs compare bitwise."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise DataFormatError(f"png supports 1 or 3 channels, got {arr.shape[2]}")
    enc = linear_to_gamma_u8(arr)
    if enc.ndim == 3 and enc.shape[2] == 1:
        enc = enc[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(enc).save(buf, format="PNG")
    return buf.getvalue()


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Preview write: gamma-encoded 8-bit PNG (grayscale or RGB)."""
    Path(path).write_bytes(encode_png(image))


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        enc = np.asarray(img.convert("RGB") if img.mode not in ("L", "RGB") else img)
    return gamma_u8_to_linear(enc)


def load_image(path: str | Path) -> np.ndarray:
    """Dispatch on extension; always returns linear float32."""
    suffix = Path(path).suffix.lower()
    if suffix == ".fimg":
        return load_float_image(path)
    if suffix == ".png":
        return load_png(path)
    raise DataFormatError(f"unsupported image extension {suffix!r}")


def save_image(path: str | Path, image: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".fimg":
        save_float_image(path, image)
    elif suffix == ".png":
        save_png(path, image)
    else:
        raise DataFormatError(f"unsupported image extension {suffix!r}")
