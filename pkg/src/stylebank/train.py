"""Two-branch alternating training with gradient rebalancing.

Every cycle of T+1 iterations runs T stylizing steps (updating the encoder,
decoder, and exactly the banks named in the batch) followed by one identity
step (encoder/decoder only). The identity gradient is rescaled so its global
L2 norm equals ``lambda * |grad_K|`` where ``|grad_K|`` is the
encoder/decoder gradient norm retained from the cycle's most recent stylizing
step. New styles train incrementally against a frozen encoder/decoder.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .losses import (
    FeatureExtractor,
    LossWeights,
    extract,
    gram_targets,
    identity_loss,
    perceptual_loss,
    rescale_long_side,
)
from .model import StyleBankModel, apply_bank, autoencode, decode, encode
from .optim import Adam
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "iter", "branch", "style_ids", "L_c", "L_s", "L_tv", "L_I",
    "total", "lr", "grad_norm_K", "grad_norm_I",
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic state dump."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class LrSchedule:
    # Desk-scale default; with mean-reduced losses the larger rates used at
    # dataset scale make Adam oscillate instead of converge.
    initial: float = 0.001
    decay: float = 0.8
    interval: int = 30_000


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    """Step-decayed learning rate: ``initial * decay**(iteration//interval)``."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return schedule.initial * schedule.decay ** (iteration // schedule.interval)


@dataclass(frozen=True)
class TrainConfig:
    stylizing_steps: int = 2        # T: stylizing iterations per cycle
    branch_tradeoff: float = 1.0    # lambda
    batch_size: int = 4             # m
    total_iterations: int = 300
    lr: LrSchedule = field(default_factory=LrSchedule)
    crop_size: int = 64
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    style_size: int = 128           # style images rescaled to this long side

    def __post_init__(self):
        if self.stylizing_steps < 1:
            raise ValueError("stylizing_steps (T) must be >= 1")
        if self.branch_tradeoff <= 0:
            raise ValueError("branch_tradeoff (lambda) must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.crop_size % 8 != 0 or self.crop_size <= 0:
            raise ValueError("crop_size must be a positive multiple of 8")


@dataclass
class Batch:
    """m image crops plus (for the stylizing branch) one style index each."""

    images: Tensor
    style_ids: tuple[int, ...]

    def __post_init__(self):
        if self.style_ids and len(self.style_ids) != self.images.dims[0]:
            raise ValueError("need one style index per image")


@dataclass
class GradientSnapshot:
    """Named gradient arrays plus the global L2 norms of the two branches."""

    grads: dict[str, np.ndarray]
    norm_stylizing: Optional[float] = None
    norm_identity: Optional[float] = None


class MetricsLog:
    """Append-only per-iteration loss/gradient record, streamable to CSV."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self._file = None
        self._writer = None
        if path is not None:
            self._file = open(path, "w", newline="")
            self._writer = csv.writer(self._file)
            self._writer.writerow(METRICS_COLUMNS)
            self._file.flush()

    @staticmethod
    def _cell(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def append(self, **fields) -> None:
        row = {col: fields.get(col) for col in METRICS_COLUMNS}
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow([self._cell(row[c]) for c in METRICS_COLUMNS])
            self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def to_csv_text(self) -> str:
        lines = [",".join(METRICS_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(self._cell(row[c]) for c in METRICS_COLUMNS))
        return "\n".join(lines) + "\n"

    def stylizing_totals(self) -> list[float]:
        return [r["total"] for r in self.rows if r["branch"] == "stylize"]


def _global_norm(arrays) -> float:
    total = 0.0
    for a in arrays:
        total += float(np.square(a, dtype=np.float64).sum())
    return float(np.sqrt(total))


class Trainer:
    """Owns one training run: batch sampling, both branch steps, metrics."""

    def __init__(
        self,
        model: StyleBankModel,
        dataset: Sequence[Tensor],
        styles: Mapping[str, Tensor],
        config: TrainConfig,
        extractor: Optional[FeatureExtractor] = None,
        metrics: Optional[MetricsLog] = None,
    ):
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        if len(styles) == 0:
            raise ValueError("need at least one style")
        for i, img in enumerate(dataset):
            n, c, h, w = img.dims
            if n != 1 or c != 3:
                raise ValueError(f"dataset[{i}] must be a single (1,3,h,w) image")
            if h < config.crop_size or w < config.crop_size:
                raise ValueError(
                    f"dataset[{i}] is {h}x{w}, smaller than crop {config.crop_size}"
                )
        self.model = model
        self.dataset = list(dataset)
        self.config = config
        self.extractor = extractor if extractor is not None else FeatureExtractor.random()
        self.metrics = metrics if metrics is not None else MetricsLog()
        self.optimizer = Adam()
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.retained_norm: Optional[float] = None

        self.style_names = list(styles)
        for name in self.style_names:
            model.bank(name)  # raises on unknown style
        self.style_targets = []
        for name in self.style_names:
            scaled = rescale_long_side(styles[name], config.style_size)
            pyr = extract(self.extractor, scaled)
            self.style_targets.append(gram_targets(pyr))

    # -- batching ------------------------------------------------------------

    def sample_batch(self, with_styles: bool) -> Batch:
        crop = self.config.crop_size
        crops = []
        for _ in range(self.config.batch_size):
            img = self.dataset[int(self.rng.integers(len(self.dataset)))].data
            h, w = img.shape[2], img.shape[3]
            y = int(self.rng.integers(h - crop + 1))
            x = int(self.rng.integers(w - crop + 1))
            crops.append(img[:, :, y:y + crop, x:x + crop])
        style_ids: tuple[int, ...] = ()
        if with_styles:
            style_ids = tuple(
                int(self.rng.integers(len(self.style_names)))
                for _ in range(self.config.batch_size)
            )
        return Batch(Tensor(np.concatenate(crops, axis=0)), style_ids)

    # -- branch steps ----------------------------------------------------

    def train_step_stylizing(self, batch: Batch) -> GradientSnapshot:
        """One E->K->D step; updates E, D, and exactly the banks in the batch."""
        cfg = self.config
        m = batch.images.dims[0]
        for sid in batch.style_ids:
            if not 0 <= sid < len(self.style_names):
                raise ValueError(f"style index {sid} out of range")

        groups: dict[int, list[int]] = {}
        for pos, sid in enumerate(batch.style_ids):
            groups.setdefault(sid, []).append(pos)

        agg = {"content": 0.0, "style": 0.0, "tv": 0.0}
        with Tape() as tape:
            total = None
            for sid, members in groups.items():
                share = len(members) / m
                crops = Tensor(batch.images.data[members])
                banked = apply_bank(
                    self.model.bank(self.style_names[sid]),
                    encode(self.model, crops),
                )
                output = decode(self.model, banked)
                loss, comps = perceptual_loss(
                    self.extractor, crops, self.style_targets[sid],
                    output, cfg.loss_weights,
                )
                term = share * loss
                total = term if total is None else total + term
                for key in agg:
                    agg[key] += share * comps[key]
        total_value = total.item()
        self._check_finite(total_value, "stylize", agg, batch.style_ids)
        tape.backward(total)

        # With a frozen encoder/decoder (incremental training) only the banks
        # carry gradients.
        ed_trainable = [
            (n, p) for n, p in self.model.encoder_decoder_parameters() if p.requires_grad
        ]
        touched = [
            (f"bank/{self.style_names[sid]}/kernel", self.model.bank(self.style_names[sid]).kernel)
            for sid in groups
        ]
        grads = {name: p.grad for name, p in ed_trainable + touched}
        norm_k = _global_norm([p.grad for _, p in ed_trainable])

        lr = lr_at(cfg.lr, self.iteration)
        self.optimizer.step([p for _, p in ed_trainable + touched], lr)

        self.metrics.append(
            iter=self.iteration + 1, branch="stylize",
            style_ids="|".join(str(s) for s in batch.style_ids),
            L_c=agg["content"], L_s=agg["style"], L_tv=agg["tv"],
            total=total_value, lr=lr, grad_norm_K=norm_k,
        )
        return GradientSnapshot(grads, norm_stylizing=norm_k)

    def train_step_identity(self, batch: Batch, snapshot: GradientSnapshot) -> GradientSnapshot:
        """One E->D step with the gradient rescaled to lambda * |grad_K|."""
        cfg = self.config
        if snapshot.norm_stylizing is None:
            raise ValueError("identity step needs the retained stylizing norm")
        with Tape() as tape:
            output = autoencode(self.model, batch.images)
            loss = identity_loss(batch.images, output)
        loss_value = loss.item()
        self._check_finite(loss_value, "identity", {"identity": loss_value}, ())
        tape.backward(loss)

        ed_params = self.model.encoder_decoder_parameters()
        raw_norm = _global_norm([p.grad for _, p in ed_params])
        lr = lr_at(cfg.lr, self.iteration)
        if raw_norm == 0.0:
            logger.warning("identity gradient is zero at iteration %d; skipping update",
                           self.iteration + 1)
            grads = {name: p.grad for name, p in ed_params}
        else:
            factor = cfg.branch_tradeoff * snapshot.norm_stylizing / raw_norm
            for _, p in ed_params:
                p.grad = p.grad * factor
            grads = {name: p.grad for name, p in ed_params}
            self.optimizer.step([p for _, p in ed_params], lr)

        self.metrics.append(
            iter=self.iteration + 1, branch="identity",
            L_I=loss_value, total=loss_value, lr=lr,
            grad_norm_K=snapshot.norm_stylizing, grad_norm_I=raw_norm,
        )
        return GradientSnapshot(grads, snapshot.norm_stylizing, raw_norm)

    def _check_finite(self, value, branch, components, style_ids):
        if np.isfinite(value):
            return
        dump = {
            "iteration": self.iteration + 1,
            "branch": branch,
            "components": components,
            "style_ids": list(style_ids),
            "lr": lr_at(self.config.lr, self.iteration),
            "retained_grad_norm": self.retained_norm,
        }
        raise TrainingDiverged(f"non-finite loss at iteration {self.iteration + 1}", dump)

    # -- loop -----------------------------------------------------------

    def run(self) -> None:
        cfg = self.config
        cycle = cfg.stylizing_steps + 1
        snapshot: Optional[GradientSnapshot] = None
        for self.iteration in range(self.iteration, cfg.total_iterations):
            if self.iteration % cycle < cfg.stylizing_steps:
                snapshot = self.train_step_stylizing(self.sample_batch(with_styles=True))
                self.retained_norm = snapshot.norm_stylizing
            else:
                self.train_step_identity(self.sample_batch(with_styles=False), snapshot)
        self.iteration = cfg.total_iterations


def train(
    model: StyleBankModel,
    dataset: Sequence[Tensor],
    styles: Mapping[str, Tensor],
    config: TrainConfig,
    extractor: Optional[FeatureExtractor] = None,
    metrics_path=None,
) -> tuple[StyleBankModel, MetricsLog]:
    """Run Algorithm-style two-branch training; returns the model and metrics."""
    metrics = MetricsLog(metrics_path)
    trainer = Trainer(model, dataset, styles, config, extractor, metrics)
    try:
        trainer.run()
    finally:
        metrics.close()
    return model, metrics


def add_style_incremental(
    model: StyleBankModel,
    dataset: Sequence[Tensor],
    style_name: str,
    style_image: Tensor,
    config: TrainConfig,
    extractor: Optional[FeatureExtractor] = None,
    metrics_path=None,
) -> tuple[StyleBankModel, MetricsLog]:
    """Append one new bank and train it with the encoder/decoder frozen.

    Encoder and decoder parameters are bit-identical before and after; only
    the stylizing branch runs (the identity branch has nothing to update).
    """
    if style_name in model.banks:
        raise ValueError(f"style {style_name!r} already exists")
    rng = np.random.default_rng(config.seed)
    model.add_bank(style_name, rng)

    ed_params = model.encoder_decoder_parameters()
    for _, p in ed_params:
        p.requires_grad = False
    metrics = MetricsLog(metrics_path)
    try:
        trainer = Trainer(model, dataset, {style_name: style_image}, config,
                          extractor, metrics)
        for trainer.iteration in range(config.total_iterations):
            trainer.train_step_stylizing(trainer.sample_batch(with_styles=True))
    finally:
        for _, p in ed_params:
            p.requires_grad = True
        metrics.close()
    return model, metrics
