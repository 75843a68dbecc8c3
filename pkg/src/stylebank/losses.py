"""Loss computation over a fixed, pluggable feature extractor.

The extractor is an 8-convolution stack in four stages (two 3x3 convs each,
channels 16/32/64/128, ReLU after every conv, stride 2 entering stages 2-4),
exposing taps L1..L4 at the end of each stage. Style losses read all four
taps; the content loss reads L4 only. Weights are either deterministic
pseudo-random from a seed or loaded from a checkpoint file; they never train,
but gradients flow through the stack to its input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import ops
from .tensor import Tensor

DEFAULT_EXTRACTOR_SEED = 0x5EED
STYLE_TAPS = ("L1", "L2", "L3", "L4")
CONTENT_TAPS = ("L4",)
DEFAULT_STAGE_CHANNELS = (16, 32, 64, 128)


@dataclass
class FeaturePyramid:
    """Extractor activations keyed by tap name."""

    taps: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.taps[name]

    def tap_names(self) -> tuple[str, ...]:
        return tuple(self.taps)


@dataclass
class FeatureExtractor:
    """A frozen convolutional stack with named taps.

    ``convs`` holds (kernel, stride) pairs; a tap is emitted after the ReLU of
    every conv whose index appears in ``tap_after``.
    """

    convs: list[tuple[Tensor, int]]
    tap_after: dict[int, str] = field(
        default_factory=lambda: {1: "L1", 3: "L2", 5: "L3", 7: "L4"}
    )

    def __post_init__(self):
        prev = 3
        for i, (kernel, stride) in enumerate(self.convs):
            co, ci, kh, kw = kernel.dims
            if ci != prev:
                raise ValueError(
                    f"extractor conv{i} expects {ci} channels, previous stage emits {prev}"
                )
            if kh != kw or kh % 2 == 0:
                raise ValueError(f"extractor conv{i} kernel must be odd square, got {kh}x{kw}")
            if stride not in (1, 2):
                raise ValueError(f"extractor conv{i} stride must be 1 or 2")
            kernel.requires_grad = False
            prev = co
        strides = [s for (_, s) in self.convs]
        if strides.count(2) != 3:
            raise ValueError("extractor must downsample exactly three times")

    @classmethod
    def random(
        cls,
        seed: int = DEFAULT_EXTRACTOR_SEED,
        stage_channels: Sequence[int] = DEFAULT_STAGE_CHANNELS,
    ) -> "FeatureExtractor":
        rng = np.random.default_rng(seed)
        convs = []
        c_in = 3
        for stage, c_out in enumerate(stage_channels):
            for j in range(2):
                stride = 2 if (stage > 0 and j == 0) else 1
                fan_in = c_in * 9
                k = rng.standard_normal((c_out, c_in, 3, 3), dtype=np.float32)
                k *= np.float32(np.sqrt(2.0 / fan_in))
                convs.append((Tensor(k), stride))
                c_in = c_out
        return cls(convs)

    def astype(self, dtype) -> "FeatureExtractor":
        return FeatureExtractor(
            [(Tensor(k.data.astype(dtype)), s) for (k, s) in self.convs],
            dict(self.tap_after),
        )

    def named_kernels(self) -> list[tuple[str, Tensor]]:
        return [(f"extractor/conv{i}/kernel", k) for i, (k, _) in enumerate(self.convs)]

    def strides(self) -> list[int]:
        return [s for (_, s) in self.convs]


def extract(extractor: FeatureExtractor, image: Tensor) -> FeaturePyramid:
    """Run the frozen stack; image dims must be divisible by 8."""
    n, c, h, w = image.dims
    if h % 8 != 0 or w % 8 != 0:
        raise ValueError(f"extract needs dims divisible by 8, got {h}x{w}")
    taps: dict[str, Tensor] = {}
    out = image
    for i, (kernel, stride) in enumerate(extractor.convs):
        margin = (kernel.dims[2] - 1) // 2
        out = ops.relu(ops.conv2d(out, kernel, stride, ops.Padding.zero(margin)))
        name = extractor.tap_after.get(i)
        if name is not None:
            taps[name] = out
    return FeaturePyramid(taps)


@dataclass(frozen=True)
class LossWeights:
    """Content / style / total-variation weights (alpha, beta, gamma)."""

    content: float = 1.0
    style: float = 50.0
    tv: float = 1e-5

    def __post_init__(self):
        if self.content < 0 or self.style < 0 or self.tv < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.content == 0 and self.style == 0 and self.tv == 0:
            raise ValueError("loss weights must not all be zero")


def _check_taps(pyr: FeaturePyramid, ref_names, wanted) -> None:
    for name in wanted:
        if name not in pyr.taps or name not in ref_names:
            raise ValueError(f"tap {name!r} missing from one of the pyramids")


def content_loss(pyr_out: FeaturePyramid, pyr_ref: FeaturePyramid) -> Tensor:
    """Mean-squared feature difference summed over the content taps."""
    _check_taps(pyr_out, pyr_ref.taps, CONTENT_TAPS)
    total = None
    for name in CONTENT_TAPS:
        term = ops.mse(pyr_out[name], pyr_ref[name])
        total = term if total is None else total + term
    return total


def gram_targets(pyr: FeaturePyramid) -> dict[str, Tensor]:
    """Precompute the style taps' Gram matrices for reuse across iterations."""
    return {name: ops.gram(pyr[name]) for name in STYLE_TAPS if name in pyr.taps}


StyleTarget = Union[FeaturePyramid, Mapping[str, Tensor]]


def style_loss(pyr_out: FeaturePyramid, style: StyleTarget) -> Tensor:
    """Sum over style taps of mean-squared Gram differences.

    ``style`` is either a feature pyramid or the cached output of
    :func:`gram_targets`; both give bit-identical results.
    """
    grams = style if isinstance(style, Mapping) else gram_targets(style)
    _check_taps(pyr_out, grams, STYLE_TAPS)
    total = None
    for name in STYLE_TAPS:
        g_out = ops.gram(pyr_out[name])
        target = grams[name]
        if target.dims[0] == 1 and g_out.dims[0] > 1:
            # One style target serves the whole batch.
            target = Tensor(np.broadcast_to(target.data, g_out.dims))
        term = ops.mse(g_out, target)
        total = term if total is None else total + term
    return total


def identity_loss(input_image: Tensor, output_image: Tensor) -> Tensor:
    """Reconstruction MSE between the input and the auto-encoded output."""
    return ops.mse(output_image, input_image)


def perceptual_loss(
    extractor: FeatureExtractor,
    content_image: Tensor,
    style_target: StyleTarget,
    output_image: Tensor,
    weights: LossWeights = LossWeights(),
) -> tuple[Tensor, dict[str, float]]:
    """alpha*L_content + beta*L_style + gamma*L_tv, plus components for logging.

    The style target should be precomputed once per style (see
    :func:`gram_targets`); the content pyramid is derived here and not
    differentiated through.
    """
    pyr_out = extract(extractor, output_image)
    pyr_content = extract(extractor, content_image.detach())
    l_c = content_loss(pyr_out, pyr_content)
    l_s = style_loss(pyr_out, style_target)
    l_tv = ops.tv_loss(output_image)
    total = weights.content * l_c + weights.style * l_s + weights.tv * l_tv
    components = {"content": l_c.item(), "style": l_s.item(), "tv": l_tv.item()}
    return total, components


def rescale_long_side(image: Tensor, target: int) -> Tensor:
    """Resize so the long side is ``target``, rounding dims to multiples of 8.

    Style images pass through here before pyramid computation. Bilinear
    resampling via PIL; deterministic.
    """
    from PIL import Image as PILImage

    n, c, h, w = image.dims
    if n != 1 or c != 3:
        raise ValueError("rescale expects a single RGB image tensor")
    scale_factor = target / max(h, w)
    new_h = max(8, int(round(h * scale_factor / 8)) * 8)
    new_w = max(8, int(round(w * scale_factor / 8)) * 8)
    if (new_h, new_w) == (h, w):
        return image
    hwc = np.moveaxis(image.data[0], 0, 2)
    pil = PILImage.fromarray((np.clip(hwc, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8))
    pil = pil.resize((new_w, new_h), PILImage.BILINEAR)
    back = np.asarray(pil, dtype=np.float32) / 255.0
    return Tensor(np.moveaxis(back, 2, 0)[None, ...])
