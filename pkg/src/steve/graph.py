"""Region graph construction and the labels used by the self-supervised tasks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
from sklearn.metrics import silhouette_score

from .errors import DegenerateDataError, ValidationError

N_TEMPORAL = 48
N_LOAD_LEVELS = 6


def grid_adjacency(H: int, W: int) -> np.ndarray:
    """4-neighbourhood adjacency of an ``H x W`` grid, row-major node order."""
    if H < 1 or W < 1:
        raise ValidationError(f"grid shape must be positive, got ({H}, {W})")
    N = H * W
    adj = np.zeros((N, N), dtype=np.float32)
    idx = np.arange(N).reshape(H, W)
    right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    down = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    for a, b in (right, down):
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    return adj


def temporal_index(when: datetime, holiday: bool) -> int:
    """Hour of day, offset by 24 on holidays: 48 classes in total."""
    return int(when.hour) + (24 if holiday else 0)


@dataclass(frozen=True)
class CapacityTable:
    cp: np.ndarray  # [N, d], zero-capacity entries replaced by 1
    active: np.ndarray  # [N, d] bool, False where no training flow was ever positive


def capacity(train_flows: np.ndarray) -> CapacityTable:
    """Per node/channel historical maximum over the training steps ``[τ, N, d]``."""
    train_flows = np.asarray(train_flows)
    if train_flows.ndim != 3 or train_flows.shape[0] < 1:
        raise ValidationError("train_flows must be [τ, N, d] with τ >= 1")
    cp = train_flows.max(axis=0).astype(np.float64)
    active = cp > 0
    return CapacityTable(np.where(active, cp, 1.0), active)


def load_level(x: np.ndarray, table: CapacityTable) -> np.ndarray:
    """``ceil(5 x / CP)`` clamped to ``0..5``; never-active entries are level 0."""
    levels = np.ceil(5.0 * np.asarray(x, dtype=np.float64) / table.cp)
    levels = np.clip(levels, 0, N_LOAD_LEVELS - 1).astype(np.int64)
    return np.where(table.active, levels, 0)


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray  # [N]
    k: int
    silhouette: float
    centroids: np.ndarray  # [k, 2] in raw (mean, median) units
    scores: dict  # k -> silhouette for every k tried

    def members(self, c: int) -> np.ndarray:
        return self.labels == c


def region_features(train_flows: np.ndarray) -> np.ndarray:
    """(mean, median) over time of each region's channel-averaged flow."""
    series = np.asarray(train_flows, dtype=np.float64).mean(axis=2)
    return np.stack([series.mean(axis=0), np.median(series, axis=0)], axis=1)


def _farthest_point_init(x: np.ndarray, k: int, first: int) -> np.ndarray:
    centers = [first]
    dist = np.sum((x - x[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[centers].copy()


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, restarts: int = 10,
           max_iter: int = 100) -> tuple[np.ndarray, float]:
    """Lloyd iterations from seeded farthest-point starts; best inertia wins, ties to the earliest restart."""
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _farthest_point_init(x, k, int(rng.integers(len(x))))
        labels = np.full(len(x), -1)
        for _ in range(max_iter):
            d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new = np.argmin(d2, axis=1)
            for c in range(k):
                if not np.any(new == c):
                    # re-seed an empty cluster at the worst-served point
                    far = int(np.argmax(d2[np.arange(len(x)), new]))
                    new[far] = c
            if np.array_equal(new, labels):
                break
            labels = new
            centers = np.stack([x[labels == c].mean(axis=0) for c in range(k)])
        inertia = float(((x - centers[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels.copy(), inertia
    return best_labels, best_inertia


def cluster_regions(train_flows: np.ndarray, k_range=range(2, 7), seed: int = 0) -> ClusterResult:
    """Pick the k in ``k_range`` with the highest mean silhouette.

    Cluster ids are re-ordered by ascending mean flow, so a larger id is a
    busier group of regions.
    """
    feats = region_features(train_flows)
    N = feats.shape[0]
    std = feats.std(axis=0)
    if np.all(std == 0):
        raise DegenerateDataError("all regions have identical (mean, median) features")
    z = (feats - feats.mean(axis=0)) / np.where(std > 0, std, 1.0)
    n_distinct = len(np.unique(z, axis=0))
    ks = [int(k) for k in k_range if 2 <= k <= N - 1 and k <= n_distinct]
    if not ks:
        raise ValidationError(f"no usable k in {list(k_range)} for {N} regions")
    rng = np.random.default_rng(seed)
    scores, fits = {}, {}
    for k in ks:
        labels, _ = kmeans(z, k, rng)
        fits[k] = labels
        scores[k] = float(silhouette_score(z, labels))
    k_best = max(ks, key=lambda k: (scores[k], -k))
    labels = fits[k_best]
    raw_centroids = np.stack([feats[labels == c].mean(axis=0) for c in range(k_best)])
    order = np.argsort(raw_centroids[:, 0], kind="stable")
    remap = np.empty(k_best, dtype=np.int64)
    remap[order] = np.arange(k_best)
    return ClusterResult(remap[labels], k_best, scores[k_best], raw_centroids[order], scores)


def save_clusters(result: ClusterResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "cluster_id"])
        for n, c in enumerate(result.labels):
            writer.writerow([n, int(c)])


def load_clusters(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.empty(len(rows), dtype=np.int64)
    for row in rows:
        labels[int(row["node_id"])] = int(row["cluster_id"])
    return labels
