"""Multi-style stylization with a shared auto-encoder and per-style filter banks."""

from . import ops
from .tensor import Tape, Tensor, backward, set_debug_checks
from .optim import Adam, AdamState
from .model import (
    FilterBank,
    RegionMaskSet,
    StyleBankModel,
    apply_bank,
    autoencode,
    decode,
    encode,
    fuse_linear,
    fuse_regions,
    stylize,
)
from .losses import (
    FeatureExtractor,
    FeaturePyramid,
    LossWeights,
    content_loss,
    extract,
    gram_targets,
    identity_loss,
    perceptual_loss,
    style_loss,
)
from .train import (
    LrSchedule,
    MetricsLog,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    add_style_incremental,
    lr_at,
    train,
)
from .analysis import (
    ClusterResult,
    SparsityReport,
    kmeans_segment,
    masks_from_clusters,
    reconstruct_style_element,
    sparsity_stats,
)
from .checkpoint import CheckpointError, load_model, save_model

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "ClusterResult",
    "FeatureExtractor",
    "FeaturePyramid",
    "FilterBank",
    "LossWeights",
    "LrSchedule",
    "MetricsLog",
    "RegionMaskSet",
    "SparsityReport",
    "StyleBankModel",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "TrainingDiverged",
    "add_style_incremental",
    "apply_bank",
    "autoencode",
    "backward",
    "content_loss",
    "decode",
    "encode",
    "extract",
    "fuse_linear",
    "fuse_regions",
    "gram_targets",
    "identity_loss",
    "kmeans_segment",
    "load_model",
    "lr_at",
    "masks_from_clusters",
    "ops",
    "perceptual_loss",
    "reconstruct_style_element",
    "save_model",
    "set_debug_checks",
    "sparsity_stats",
    "style_loss",
    "stylize",
    "train",
]
