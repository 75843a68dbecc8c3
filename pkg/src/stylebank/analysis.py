"""Feature-space analyses: K-means segmentation, channel sparsity, and
style-element reconstruction.

The K-means segmentation doubles as the mask source for region-specific
fusion: every spatial feature vector is L2-normalized, clustered with
k-means++ seeded Lloyd iterations (best of 10 restarts), and the labels
convert to a partition-of-unity mask set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import RegionMaskSet, StyleBankModel, apply_bank, decode, encode, masks_from_labels
from .tensor import Tensor

KMEANS_MAX_ROUNDS = 100
KMEANS_RESTARTS = 10
# Single-point refinement polishes Lloyd's local optima; beyond this many
# points the marginal moves stop paying for their cost and plain Lloyd output
# is used as-is.
KMEANS_REFINE_LIMIT = 1024


@dataclass
class ClusterResult:
    """Labels over the feature grid plus centroids and the final objective."""

    labels: np.ndarray            # [h, w] int
    centroids: np.ndarray         # [k, C]
    inertia: float                # sum of squared distances to assigned centroid
    inertia_history: list[float] = field(default_factory=list)


def _normalize_rows(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return points / safe


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    dist_sq = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            probs = dist_sq / total
            idx = int(rng.choice(n, p=probs))
        centroids[i] = points[idx]
        dist_sq = np.minimum(dist_sq, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _pairwise_sq(points: np.ndarray, cents: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2 as a matmul; clipped against tiny negatives.
    d = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * (points @ cents.T)
        + (cents * cents).sum(axis=1)[None, :]
    )
    np.maximum(d, 0.0, out=d)
    return d


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_rounds: int):
    k = len(centroids)
    labels = None
    history: list[float] = []
    for _ in range(max_rounds):
        d = _pairwise_sq(points, centroids)
        new_labels = d.argmin(axis=1)
        for c in range(k):
            members = points[new_labels == c]
            if len(members) > 0:
                centroids[c] = members.mean(axis=0)
            else:
                # Re-seed a dead centroid from the farthest point.
                far = int(d[np.arange(len(points)), new_labels].argmax())
                centroids[c] = points[far]
        d_final = _pairwise_sq(points, centroids)[np.arange(len(points)), new_labels]
        history.append(float(d_final.sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return labels, centroids, history[-1], history


def _single_move_refine(points: np.ndarray, labels: np.ndarray, k: int,
                        history: list[float], max_moves: int) -> int:
    """Greedy single-point reassignments with size-corrected cost deltas.

    Lloyd fixed points are not always global optima even on tiny instances;
    moving one point at a time (accounting for the centroid shift its move
    causes) escapes the common ones. Every accepted move strictly lowers the
    objective, preserving per-round monotonicity.
    """
    n = len(points)
    idx = np.arange(n)
    moves = 0
    for _ in range(max_moves):
        counts = np.bincount(labels, minlength=k)
        cents = np.stack([
            points[labels == c].mean(axis=0) if counts[c] else points[0]
            for c in range(k)
        ])
        d = _pairwise_sq(points, cents)  # [n, k]
        own = counts[labels]
        gain = np.where(own > 1, d[idx, labels] * own / np.maximum(own - 1, 1), -np.inf)
        cost = d * (counts / (counts + 1.0))[None, :]
        delta = gain[:, None] - cost
        delta[idx, labels] = -np.inf
        flat = int(delta.argmax())
        i, b = divmod(flat, k)
        if delta[i, b] <= 1e-12:
            break
        labels[i] = b
        moves += 1
        counts = np.bincount(labels, minlength=k)
        cents = np.stack([
            points[labels == c].mean(axis=0) if counts[c] else points[0]
            for c in range(k)
        ])
        history.append(float(_pairwise_sq(points, cents)[idx, labels].sum()))
    return moves


def kmeans_segment(features: Tensor, k: int, seed: int = 0,
                   restarts: int = KMEANS_RESTARTS) -> ClusterResult:
    """Cluster the L2-normalized feature vectors of a single feature map.

    Runs Lloyd's algorithm from k-means++ seeds for ``restarts`` independent
    restarts (seed streams ``seed..seed+restarts-1``) and keeps the lowest
    inertia.
    """
    n, c, h, w = features.dims
    if n != 1:
        raise ValueError("kmeans_segment expects a single feature map (n=1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > h * w:
        raise ValueError(f"k={k} exceeds the {h * w} spatial positions")
    points = _normalize_rows(
        features.data.reshape(c, h * w).T.astype(np.float64)
    )
    distinct = np.unique(points, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct points")

    move_cap = 4 * len(points)
    best: Optional[ClusterResult] = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        init = _kmeans_pp_init(points, k, rng)
        labels, centroids, inertia, history = _lloyd(points, init, KMEANS_MAX_ROUNDS)
        # Alternate single-point refinement with re-centered Lloyd until stable.
        if len(points) <= KMEANS_REFINE_LIMIT:
            for _ in range(len(points)):
                if _single_move_refine(points, labels, k, history, move_cap) == 0:
                    break
                centroids = np.stack([
                    points[labels == c].mean(axis=0) if (labels == c).any() else centroids[c]
                    for c in range(k)
                ])
                labels, centroids, inertia, more = _lloyd(
                    points, centroids, KMEANS_MAX_ROUNDS
                )
                history.extend(more)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = ClusterResult(
                labels.reshape(h, w).astype(np.int32), centroids, inertia, history
            )
    return best


def masks_from_clusters(result: ClusterResult, style_assignment: Mapping[int, str]) -> RegionMaskSet:
    """Turn cluster labels into a partition-of-unity mask set, one per cluster."""
    k = len(result.centroids)
    missing = [c for c in range(k) if c not in style_assignment]
    present = set(np.unique(result.labels).tolist())
    if any(c in present for c in missing):
        raise ValueError(f"clusters {sorted(set(missing) & present)} have no style assigned")
    return masks_from_labels(result.labels, style_assignment)


@dataclass
class SparsityReport:
    """Per-channel average nonzero response statistics over an image set."""

    channel_means: np.ndarray     # [C] mean over images of per-image nonzero means
    channel_stddevs: np.ndarray   # [C] stddev over images
    sorted_means: np.ndarray      # channel_means sorted non-increasing

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "mean", "stddev"])
            for i, (m, s) in enumerate(zip(self.channel_means, self.channel_stddevs)):
                writer.writerow([i, repr(float(m)), repr(float(s))])


def channel_nonzero_means(features: np.ndarray) -> np.ndarray:
    """Mean of nonzero responses per channel; all-zero channels report 0."""
    c = features.shape[0]
    out = np.zeros(c)
    flat = features.reshape(c, -1)
    for ch in range(c):
        nz = flat[ch][flat[ch] != 0]
        if len(nz) > 0:
            out[ch] = nz.mean()
    return out


def sparsity_stats(model: StyleBankModel, images: Sequence[Tensor]) -> SparsityReport:
    """Encoder-output response statistics across an image set."""
    if len(images) == 0:
        raise ValueError("need at least one image")
    per_image = []
    for img in images:
        feats = encode(model, img)
        per_image.append(channel_nonzero_means(feats.data[0]))
    stacked = np.stack(per_image)
    means = stacked.mean(axis=0)
    stddevs = stacked.std(axis=0)
    return SparsityReport(means, stddevs, np.sort(means)[::-1].copy())


def reconstruct_style_element(
    model: StyleBankModel,
    features: Tensor,
    style_name: str,
    spatial_mask: Tensor,
    channel_threshold: Optional[float] = None,
) -> Tensor:
    """Decode only the masked region's active channels through one style.

    Features outside the mask are zeroed; channels whose in-mask mean absolute
    response does not exceed the threshold are zeroed entirely; the remainder
    passes through the style's bank and the decoder. The default threshold is
    1e-3 of the largest per-channel in-mask response.
    """
    n, c, h, w = features.dims
    if spatial_mask.dims != (1, 1, h, w):
        raise ValueError(f"mask must be (1, 1, {h}, {w}), got {spatial_mask.dims}")
    mask = spatial_mask.data
    if not np.any(mask):
        raise ValueError("spatial mask is empty")
    if channel_threshold is not None and channel_threshold < 0:
        raise ValueError("channel threshold must be >= 0")

    masked = features.data * mask
    in_mask = np.abs(masked).sum(axis=(0, 2, 3)) / mask.sum()
    if channel_threshold is None:
        channel_threshold = 1e-3 * float(in_mask.max())
    keep = (in_mask > channel_threshold).astype(features.data.dtype)
    selected = Tensor(masked * keep.reshape(1, c, 1, 1))
    return decode(model, apply_bank(model.bank(style_name), selected))
