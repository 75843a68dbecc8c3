"""Shared fixtures, most importantly the full-scale overfit training run."""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stylebank import Tensor
from stylebank.losses import FeatureExtractor
from stylebank.model import StyleBankModel
from stylebank.train import TrainConfig, train


def smooth_content_image(seed=1, size=64) -> Tensor:
    """Low-frequency sinusoid mix per channel: compressible like a photo."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size), dtype=np.float32)
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            acc += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fy * yy + ph[0]) \
                * np.cos(2 * np.pi * fx * xx + ph[1])
        acc = (acc - acc.min()) / (acc.max() - acc.min())
        img[c] = acc
    return Tensor(img[None])


def textured_style_image(seed, size=64) -> Tensor:
    """Oriented sine gratings: strong, stable Gram statistics."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size), dtype=np.float32)
    for c in range(3):
        freq = rng.uniform(4.0, 12.0)
        angle = rng.uniform(0, np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
        img[c] = np.clip(0.5 + 0.45 * wave, 0.0, 1.0)
    return Tensor(img[None])


def checker_style_image(seed, size=64, cell=4) -> Tensor:
    """Two-color checkerboard: statistics far from anything the overfit model
    already produces, so an incremental bank has real distance to cover."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    check = (((yy // cell) + (xx // cell)) % 2).astype(np.float32)
    img = np.zeros((3, size, size), dtype=np.float32)
    colors = rng.uniform(0, 1, (2, 3)).astype(np.float32)
    for c in range(3):
        img[c] = np.where(check > 0, colors[0, c], colors[1, c])
    return Tensor(img[None])


def overfit_ingredients():
    """The A3 configuration: 1 content image, 2 styles, 64x64, T=2, m=4."""
    dataset = [smooth_content_image(seed=1)]
    styles = {"grated": textured_style_image(2), "woven": textured_style_image(3)}
    config = TrainConfig(
        stylizing_steps=2,
        branch_tradeoff=1.0,
        batch_size=4,
        total_iterations=300,
        crop_size=64,
        seed=0,
    )
    return dataset, styles, config


def run_overfit():
    dataset, styles, config = overfit_ingredients()
    model = StyleBankModel.create(list(styles), seed=0)
    extractor = FeatureExtractor.random()
    start = time.time()
    model, metrics = train(model, dataset, styles, config, extractor)
    return {
        "model": model,
        "metrics": metrics,
        "csv": metrics.to_csv_text(),
        "dataset": dataset,
        "styles": styles,
        "config": config,
        "extractor": extractor,
        "runtime": time.time() - start,
    }


@pytest.fixture(scope="session")
def overfit_run():
    return run_overfit()
