"""The three-part network: encoder, per-style filter banks, decoder.

The encoder downsamples an RGB image 4x into a C-channel feature map; each
named filter bank is a stride-1 convolution applied to those features; the
decoder mirrors the encoder back to RGB. Styles can be blended either by
linearly fusing bank kernels (weights summing to 1) or region by region
through disjoint binary masks that partition the feature map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor

DEFAULT_C_MAX = 32
DEFAULT_BANK_KERNEL = 3


def _uniform_kernel(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    # Fan-in scaled uniform init: s = 1/sqrt(c_in * k_h * k_w).
    bound = 1.0 / np.sqrt(shape[1] * shape[2] * shape[3])
    data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True)


@dataclass
class ConvLayer:
    """One convolution with optional instance norm + ReLU after it."""

    kernel: Tensor
    stride: int
    padding: ops.Padding
    transposed: bool
    norm_scale: Optional[Tensor]
    norm_shift: Optional[Tensor]

    @classmethod
    def create(cls, rng, c_in, c_out, k, stride, transposed=False, activated=True):
        if transposed:
            kernel = _uniform_kernel(rng, (c_in, c_out, k, k))
        else:
            kernel = _uniform_kernel(rng, (c_out, c_in, k, k))
        scale = shift = None
        if activated:
            scale = Tensor(np.ones((1, c_out, 1, 1), dtype=np.float32), requires_grad=True)
            shift = Tensor(np.zeros((1, c_out, 1, 1), dtype=np.float32), requires_grad=True)
        return cls(kernel, stride, ops.Padding.reflect((k - 1) // 2), transposed, scale, shift)

    def forward(self, x: Tensor) -> Tensor:
        if self.transposed:
            out = ops.conv2d_transpose(x, self.kernel, self.stride, self.padding)
        else:
            out = ops.conv2d(x, self.kernel, self.stride, self.padding)
        if self.norm_scale is not None:
            out = ops.relu(ops.instance_norm(out, self.norm_scale, self.norm_shift))
        return out

    def parameters(self) -> Iterator[Tensor]:
        yield self.kernel
        if self.norm_scale is not None:
            yield self.norm_scale
            yield self.norm_shift


@dataclass
class EncoderParams:
    """9x9 stride-1 then two 3x3 stride-2 convolutions, 3 -> C/4 -> C/2 -> C."""

    layers: list[ConvLayer]

    @classmethod
    def create(cls, rng: np.random.Generator, c_max: int) -> "EncoderParams":
        c4, c2 = c_max // 4, c_max // 2
        return cls([
            ConvLayer.create(rng, 3, c4, 9, 1),
            ConvLayer.create(rng, c4, c2, 3, 2),
            ConvLayer.create(rng, c2, c_max, 3, 2),
        ])


@dataclass
class DecoderParams:
    """Mirror of the encoder: two stride-2 transposed 3x3, then 9x9 to RGB."""

    layers: list[ConvLayer]

    @classmethod
    def create(cls, rng: np.random.Generator, c_max: int) -> "DecoderParams":
        c4, c2 = c_max // 4, c_max // 2
        return cls([
            ConvLayer.create(rng, c_max, c2, 3, 2, transposed=True),
            ConvLayer.create(rng, c2, c4, 3, 2, transposed=True),
            ConvLayer.create(rng, c4, 3, 9, 1, activated=False),
        ])


@dataclass
class FilterBank:
    """One named style: a square [C, C, k, k] convolution kernel."""

    name: str
    kernel: Tensor

    def __post_init__(self):
        co, ci, kh, kw = self.kernel.dims
        if kh != kw:
            raise ValueError(f"bank kernel must be square, got {kh}x{kw}")
        if kh % 2 == 0:
            raise ValueError(f"bank kernel size must be odd, got {kh}")
        if co != ci:
            raise ValueError(f"bank must map C -> C channels, got {ci} -> {co}")

    @classmethod
    def create(cls, rng, name, c_max, kernel_size) -> "FilterBank":
        return cls(name, _uniform_kernel(rng, (c_max, c_max, kernel_size, kernel_size)))

    @property
    def kernel_size(self) -> int:
        return self.kernel.dims[2]


@dataclass
class StyleBankModel:
    encoder: EncoderParams
    decoder: DecoderParams
    banks: dict[str, FilterBank] = field(default_factory=dict)
    c_max: int = DEFAULT_C_MAX
    bank_kernel_size: int = DEFAULT_BANK_KERNEL

    @classmethod
    def create(
        cls,
        style_names: Sequence[str] = (),
        c_max: int = DEFAULT_C_MAX,
        bank_kernel_size: int = DEFAULT_BANK_KERNEL,
        seed: int = 0,
    ) -> "StyleBankModel":
        if c_max % 4 != 0 or c_max < 4:
            raise ValueError(f"c_max must be a positive multiple of 4, got {c_max}")
        if bank_kernel_size not in (3, 7):
            raise ValueError(f"bank kernel size must be 3 or 7, got {bank_kernel_size}")
        rng = np.random.default_rng(seed)
        model = cls(
            EncoderParams.create(rng, c_max),
            DecoderParams.create(rng, c_max),
            {},
            c_max,
            bank_kernel_size,
        )
        for name in style_names:
            model.add_bank(name, rng)
        return model

    def add_bank(self, name: str, rng: np.random.Generator) -> FilterBank:
        if name in self.banks:
            raise ValueError(f"style {name!r} already exists")
        bank = FilterBank.create(rng, name, self.c_max, self.bank_kernel_size)
        self.banks[name] = bank
        return bank

    def bank(self, name: str) -> FilterBank:
        try:
            return self.banks[name]
        except KeyError:
            raise KeyError(f"unknown style {name!r}; have {list(self.banks)}") from None

    def style_names(self) -> list[str]:
        return list(self.banks)

    # -- parameter traversal (stable naming; also the checkpoint layout) ----

    def encoder_decoder_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, part in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(part.layers):
                out.append((f"{prefix}/conv{i}/kernel", layer.kernel))
                if layer.norm_scale is not None:
                    out.append((f"{prefix}/conv{i}/norm_scale", layer.norm_scale))
                    out.append((f"{prefix}/conv{i}/norm_shift", layer.norm_shift))
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.encoder_decoder_parameters()
        for bank in self.banks.values():
            out.append((f"bank/{bank.name}/kernel", bank.kernel))
        return out


def encode(model: StyleBankModel, image: Tensor) -> Tensor:
    """Image (n, 3, h, w) in [0, 1] to features (n, C, h/4, w/4)."""
    n, c, h, w = image.dims
    if c != 3:
        raise ValueError(f"expected 3-channel input, got {c}")
    if h % 4 != 0 or w % 4 != 0:
        raise ValueError(f"spatial dims must be divisible by 4, got {h}x{w}")
    out = image
    for layer in model.encoder.layers:
        out = layer.forward(out)
    return out


def decode(model: StyleBankModel, features: Tensor) -> Tensor:
    """Features back to an (n, 3, h, w) image; output left unclamped."""
    if features.dims[1] != model.c_max:
        raise ValueError(
            f"features have {features.dims[1]} channels, decoder expects {model.c_max}"
        )
    out = features
    for layer in model.decoder.layers:
        out = layer.forward(out)
    return out


def apply_bank(bank: FilterBank, features: Tensor) -> Tensor:
    """Convolve features with one style's bank; shape preserving, linear."""
    if features.dims[1] != bank.kernel.dims[1]:
        raise ValueError(
            f"features have {features.dims[1]} channels, bank expects {bank.kernel.dims[1]}"
        )
    margin = (bank.kernel_size - 1) // 2
    return ops.conv2d(features, bank.kernel, stride=1, padding=ops.Padding.zero(margin))


def autoencode(model: StyleBankModel, image: Tensor) -> Tensor:
    return decode(model, encode(model, image))


def stylize(model: StyleBankModel, image: Tensor, style_name: str) -> Tensor:
    return decode(model, apply_bank(model.bank(style_name), encode(model, image)))


def fuse_linear(banks: Sequence[FilterBank], weights: Sequence[float]) -> FilterBank:
    """Elementwise weighted sum of bank kernels, weights normalized to sum 1.

    A one-hot weight vector returns that bank's kernel bit-exactly. Weights
    that do not already sum to 1 are normalized with a warning (UI sliders
    hand in raw values).
    """
    if len(banks) == 0:
        raise ValueError("need at least one bank to fuse")
    if len(banks) != len(weights):
        raise ValueError(f"{len(banks)} banks but {len(weights)} weights")
    dims = banks[0].kernel.dims
    for b in banks[1:]:
        if b.kernel.dims != dims:
            raise ValueError(f"bank dims mismatch: {b.kernel.dims} vs {dims}")
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if abs(total) < 1e-12:
        raise ValueError("fusion weights sum to zero")
    if abs(total - 1.0) > 1e-9:
        warnings.warn(
            f"fusion weights sum to {total:.6g}; normalizing to 1", stacklevel=2
        )
        w = w / total

    name = "+".join(f"{wi:.4g}*{b.name}" for b, wi in zip(banks, w))
    hot = np.nonzero(w)[0]
    if len(hot) == 1 and w[hot[0]] == 1.0:
        return FilterBank(name, Tensor(banks[hot[0]].kernel.data.copy()))
    fused = np.zeros(dims, dtype=np.float32)
    for b, wi in zip(banks, w):
        fused += np.float32(wi) * b.kernel.data
    return FilterBank(name, Tensor(fused))


@dataclass
class RegionMaskSet:
    """Disjoint binary masks at feature resolution, one style name each.

    The masks must form a partition of unity: pairwise disjoint and summing
    to one at every position. Style names may repeat across masks.
    """

    masks: list[Tensor]
    styles: list[str]

    def __post_init__(self):
        if len(self.masks) == 0:
            raise ValueError("mask set is empty")
        if len(self.masks) != len(self.styles):
            raise ValueError("need exactly one style name per mask")
        dims = self.masks[0].dims
        if dims[0] != 1 or dims[1] != 1:
            raise ValueError(f"masks must have dims (1, 1, h, w), got {dims}")
        total = np.zeros(dims, dtype=np.float64)
        for m in self.masks:
            if m.dims != dims:
                raise ValueError(f"mask dims mismatch: {m.dims} vs {dims}")
            values = np.unique(m.data)
            if not np.all(np.isin(values, (0.0, 1.0))):
                raise ValueError("masks must be binary (0/1)")
            total += m.data
        if np.any(total > 1.0):
            raise ValueError("masks overlap")
        if np.any(total < 1.0):
            raise ValueError("masks leave a coverage gap")


def fuse_regions(model: StyleBankModel, features: Tensor, masks: RegionMaskSet) -> Tensor:
    """Apply each mask's style to its region and sum the transferred features.

    Masking happens before the convolution, so a boundary band of width
    (k-1)/2 around each seam mixes neighboring regions.
    """
    hf, wf = features.dims[2], features.dims[3]
    if masks.masks[0].dims[2:] != (hf, wf):
        raise ValueError(
            f"masks are {masks.masks[0].dims[2:]}, features are {(hf, wf)}"
        )
    out = None
    for mask, style in zip(masks.masks, masks.styles):
        banked = apply_bank(model.bank(style), features * mask)
        out = banked if out is None else out + banked
    return out


def reduce_label_map(labels: np.ndarray, factor: int = 4) -> np.ndarray:
    """Majority-vote reduction of an integer label map by ``factor`` per axis.

    Ties break toward the lowest region index. Input dims must be divisible
    by ``factor``.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    if h % factor or w % factor:
        raise ValueError(f"label map {h}x{w} not divisible by {factor}")
    blocks = labels.reshape(h // factor, factor, w // factor, factor)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(h // factor, w // factor, factor * factor)
    n_labels = int(labels.max()) + 1
    counts = np.zeros((h // factor, w // factor, n_labels), dtype=np.int32)
    for lab in range(n_labels):
        counts[:, :, lab] = (blocks == lab).sum(axis=2)
    return counts.argmax(axis=2).astype(labels.dtype)


def masks_from_labels(
    labels: np.ndarray, assignment: Mapping[int, str], dtype=np.float32
) -> RegionMaskSet:
    """Build a partition-of-unity mask set from a feature-resolution label map.

    Every label present in the map must be assigned a style.
    """
    labels = np.asarray(labels)
    present = np.unique(labels)
    missing = [int(lab) for lab in present if int(lab) not in assignment]
    if missing:
        raise ValueError(f"labels {missing} have no style assignment")
    masks, styles = [], []
    for lab in present:
        mask = (labels == lab).astype(dtype).reshape(1, 1, *labels.shape)
        masks.append(Tensor(mask))
        styles.append(assignment[int(lab)])
    return RegionMaskSet(masks, styles)
