"""Raster image container plus the hashing/resampling primitives used everywhere.

All operations here are pure functions of pixel bytes: the same pixels always
produce the same digest, the same downsample and the same 64-bit difference
hash, on any platform. That determinism is what makes index builds idempotent
and protocol runs replayable.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageDecodeError

# Rec.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class RasterImage:
    """Decoded RGBA image with a stable content digest."""

    width: int
    height: int
    pixels: np.ndarray  # (H, W, 4) uint8, row-major
    content_digest: str

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.pixels.shape != (self.height, self.width, 4):
            raise ValueError("pixel buffer does not match width*height*4")

    @staticmethod
    def from_array(arr: np.ndarray) -> "RasterImage":
        if arr.ndim == 2:
            arr = np.stack([arr, arr, arr], axis=-1)
        if arr.shape[-1] == 3:
            alpha = np.full(arr.shape[:2] + (1,), 255, dtype=np.uint8)
            arr = np.concatenate([arr.astype(np.uint8), alpha], axis=-1)
        arr = np.ascontiguousarray(arr.astype(np.uint8))
        digest = hashlib.sha256(arr.tobytes()).hexdigest()
        return RasterImage(arr.shape[1], arr.shape[0], arr, digest)

    @staticmethod
    def from_bytes(data: bytes) -> "RasterImage":
        try:
            with Image.open(io.BytesIO(data)) as im:
                rgba = im.convert("RGBA")
                arr = np.asarray(rgba, dtype=np.uint8)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ImageDecodeError(f"cannot decode image: {exc}") from exc
        return RasterImage.from_array(arr)

    @staticmethod
    def from_file(path: str) -> "RasterImage":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ImageDecodeError(f"cannot read {path}: {exc}") from exc
        return RasterImage.from_bytes(data)

    @property
    def area(self) -> int:
        return self.width * self.height

    def gray(self) -> np.ndarray:
        """Luminance in [0, 1], float64, shape (H, W)."""
        return (self.pixels[:, :, :3].astype(np.float64) @ _LUMA) / 255.0

    def gray_u8(self) -> np.ndarray:
        return np.clip(self.gray() * 255.0 + 0.5, 0, 255).astype(np.uint8)

    def crop(self, box: tuple[int, int, int, int]) -> "RasterImage":
        """Crop to (x0, y0, x1, y1), exclusive right/bottom, clamped to bounds."""
        x0, y0, x1, y1 = box
        x0, y0 = max(0, int(x0)), max(0, int(y0))
        x1, y1 = min(self.width, int(x1)), min(self.height, int(y1))
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty crop box {box}")
        return RasterImage.from_array(self.pixels[y0:y1, x0:x1])

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGBA").save(buf, format="PNG")
        return buf.getvalue()


def resample_mean(gray: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-mean downsample by partitioning rows/columns into near-equal runs.

    Pure numpy so the result is bit-stable across platforms, unlike
    interpolation filters that vary with library builds.
    """
    h, w = gray.shape
    row_edges = (np.arange(out_h + 1) * h) // out_h
    col_edges = (np.arange(out_w + 1) * w) // out_w
    rows = np.add.reduceat(gray, row_edges[:-1], axis=0)
    cells = np.add.reduceat(rows, col_edges[:-1], axis=1)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))
    return cells / counts


def dhash64(image: RasterImage) -> int:
    """Row-wise difference hash over a 9x8 box-mean downsample: 64 bits."""
    small = resample_mean(image.gray(), 9, 8)
    bits = small[:, 1:] > small[:, :-1]
    value = 0
    for bit in bits.flatten():
        value = (value << 1) | int(bit)
    return value


def hamming64(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def normalized_hamming(a: int, b: int) -> float:
    return hamming64(a, b) / 64.0
