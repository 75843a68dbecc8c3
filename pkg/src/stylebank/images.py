"""PNG image I/O and the 8-bit raster <-> tensor bridge.

PNG is the only interchange format (lossless, so bit-invariance tests hold).
Tensor export clamps to [0, 1] before quantization; loading an 8-bit image
and saving it back is bit-exact.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .tensor import Tensor


@dataclass
class ImageBuffer:
    """8-bit RGB raster, shape (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")

    # -- tensor bridge ---------------------------------------------------

    @classmethod
    def from_tensor(cls, tensor: Tensor) -> "ImageBuffer":
        n, c, h, w = tensor.dims
        if n != 1 or c != 3:
            raise ValueError(f"expected a (1, 3, h, w) tensor, got {tensor.dims}")
        clamped = np.clip(tensor.data[0], 0.0, 1.0)
        quantized = (clamped * 255.0 + 0.5).astype(np.uint8)
        return cls(np.moveaxis(quantized, 0, 2).copy())

    def to_tensor(self) -> Tensor:
        scaled = self.pixels.astype(np.float32) / 255.0
        return Tensor(np.moveaxis(scaled, 2, 0)[None, ...])

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    # -- PNG -------------------------------------------------------------

    @classmethod
    def load(cls, path) -> "ImageBuffer":
        with PILImage.open(path) as img:
            return cls(np.asarray(img.convert("RGB"), dtype=np.uint8).copy())

    def save(self, path) -> None:
        PILImage.fromarray(self.pixels, mode="RGB").save(path, format="PNG")

    @classmethod
    def from_png_bytes(cls, blob: bytes) -> "ImageBuffer":
        with PILImage.open(io.BytesIO(blob)) as img:
            return cls(np.asarray(img.convert("RGB"), dtype=np.uint8).copy())

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        PILImage.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


def load_image(path) -> Tensor:
    """PNG file to a (1, 3, h, w) tensor in [0, 1]."""
    return ImageBuffer.load(path).to_tensor()


def save_image(tensor: Tensor, path) -> None:
    ImageBuffer.from_tensor(tensor).save(path)


def png_size(blob: bytes) -> tuple[int, int]:
    """(h, w) of an encoded image without decoding the pixel data."""
    with PILImage.open(io.BytesIO(blob)) as img:
        return img.size[1], img.size[0]


def label_map_to_png_bytes(labels: np.ndarray) -> bytes:
    """Integer label map (h, w) to an 8-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label values must fit in 8 bits")
    buf = io.BytesIO()
    PILImage.fromarray(labels.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def label_map_from_png_bytes(blob: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(blob)) as img:
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.uint8).copy()


def save_label_map(labels: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(label_map_to_png_bytes(labels))


def load_label_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return label_map_from_png_bytes(fh.read())
