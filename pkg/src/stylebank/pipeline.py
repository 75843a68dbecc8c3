"""Shared inference paths for the CLI and the HTTP service.

Arbitrary image sizes are handled by reflect-padding the right/bottom edges up
to the next multiple of 4 before encoding and cropping the decoded output
back, so both front ends produce identical bytes for identical inputs.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .analysis import kmeans_segment
from .images import ImageBuffer
from .model import (
    FilterBank,
    StyleBankModel,
    apply_bank,
    decode,
    encode,
    fuse_regions,
    masks_from_labels,
    reduce_label_map,
)
from .tensor import Tensor

MIN_SIDE = 8


def _pad_to_multiple(data: np.ndarray, multiple: int = 4) -> np.ndarray:
    h, w = data.shape[2], data.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return data
    return np.pad(data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")


def _check_size(tensor: Tensor) -> None:
    h, w = tensor.dims[2], tensor.dims[3]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"image {h}x{w} is smaller than the {MIN_SIDE}px minimum")


def stylize_image(model: StyleBankModel, image: Tensor, style_name: str) -> ImageBuffer:
    """Stylize at arbitrary size; returns the clamped 8-bit result."""
    bank = model.bank(style_name)
    return stylize_with_bank(model, image, bank)


def stylize_with_bank(model: StyleBankModel, image: Tensor, bank: FilterBank) -> ImageBuffer:
    _check_size(image)
    h, w = image.dims[2], image.dims[3]
    padded = Tensor(_pad_to_multiple(image.data))
    out = decode(model, apply_bank(bank, encode(model, padded)))
    return ImageBuffer.from_tensor(Tensor(out.data[:, :, :h, :w]))


def segment_image(model: StyleBankModel, image: Tensor, k: int, seed: int = 0) -> np.ndarray:
    """Cluster encoder features; returns a label map at image resolution."""
    _check_size(image)
    h, w = image.dims[2], image.dims[3]
    padded = Tensor(_pad_to_multiple(image.data))
    feats = encode(model, padded)
    result = kmeans_segment(feats, k, seed)
    upsampled = np.repeat(np.repeat(result.labels, 4, axis=0), 4, axis=1)
    return upsampled[:h, :w].astype(np.uint8)


def fuse_regions_image(
    model: StyleBankModel,
    image: Tensor,
    labels: np.ndarray,
    assignment: Mapping[int, str],
) -> ImageBuffer:
    """Region-fuse with an image-resolution label map.

    The label map is reduced to feature resolution by 4x4 majority vote (ties
    to the lowest label); every label present must be assigned a style.
    """
    _check_size(image)
    h, w = image.dims[2], image.dims[3]
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise ValueError(f"label map {labels.shape} does not match image {(h, w)}")
    padded = Tensor(_pad_to_multiple(image.data))
    hp, wp = padded.dims[2], padded.dims[3]
    padded_labels = np.pad(labels, ((0, hp - h), (0, wp - w)), mode="edge")
    feature_labels = reduce_label_map(padded_labels, 4)

    present = [int(v) for v in np.unique(labels)]
    missing = [lab for lab in present if lab not in assignment]
    if missing:
        raise ValueError(f"labels {missing} have no style assignment")
    for lab in present:
        model.bank(assignment[lab])  # raises KeyError on unknown style

    masks = masks_from_labels(feature_labels, assignment)
    feats = encode(model, padded)
    out = decode(model, fuse_regions(model, feats, masks))
    return ImageBuffer.from_tensor(Tensor(out.data[:, :, :h, :w]))
