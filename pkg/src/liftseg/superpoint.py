"""Superpoint partitions and 2D-to-3D feature aggregation.

Lifted pixel features are gathered around each superpoint centroid with a
spherical (radius) query and pooled by a weighted mean.  Dense features
contribute with weight 1 per pixel; instance features contribute once per
overlapping instance, weighted by the instance's soft mask value at the
pixel.  Superpoints that gather nothing keep an exactly-zero feature row
and zero coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ConfigError, ShapeError
from .geometry import CameraView, PointCloud
from .imagefeat import FeatureMap, SoftMask

_DEGENERATE_WEIGHT = 1e-8


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SuperpointPartition:
    """Maps every point to one of ``n_superpoints`` dense ids."""

    assignment: np.ndarray
    n_superpoints: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size < 1:
            raise ShapeError(f"assignment must be a non-empty vector, got {a.shape}")
        n = int(self.n_superpoints)
        if n < 1:
            raise ConfigError(f"n_superpoints must be >= 1, got {n}")
        if a.min() < 0 or a.max() >= n:
            raise ConfigError("assignment ids must lie in [0, n_superpoints)")
        counts = np.bincount(a, minlength=n)
        if (counts == 0).any():
            raise ConfigError("every superpoint id must own at least one point")
        object.__setattr__(self, "assignment", _freeze(a))
        object.__setattr__(self, "n_superpoints", n)

    @property
    def n_points(self) -> int:
        return self.assignment.size


@dataclass(frozen=True)
class SuperpointFeatures:
    """Per-superpoint feature rows plus the accumulated gather weight."""

    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        c = np.asarray(self.coverage, dtype=np.float64)
        if v.ndim != 2 or c.shape != (v.shape[0],):
            raise ShapeError(
                f"values must be (N_S, D) with coverage (N_S,), got {v.shape}, {c.shape}")
        if not np.isfinite(v).all():
            raise ConfigError("feature values must be finite")
        if c.min() < 0.0:
            raise ConfigError("coverage must be non-negative")
        empty = c == 0.0
        if empty.any() and np.any(v[empty] != 0.0):
            raise ConfigError("rows with zero coverage must be exactly zero")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "coverage", _freeze(c))


def pool_point_features(point_features: np.ndarray,
                        partition: SuperpointPartition) -> np.ndarray:
    """Average point features within each superpoint; returns (N_S, C)."""
    feats = np.asarray(point_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != partition.n_points:
        raise ShapeError(
            f"expected ({partition.n_points}, C) features, got {feats.shape}")
    sums = np.zeros((partition.n_superpoints, feats.shape[1]), dtype=np.float64)
    np.add.at(sums, partition.assignment, feats)
    counts = np.bincount(partition.assignment, minlength=partition.n_superpoints)
    return sums / counts[:, None]


def superpoint_centroids(cloud: PointCloud,
                         partition: SuperpointPartition) -> np.ndarray:
    """Mean position of each superpoint's points; returns (N_S, 3)."""
    return pool_point_features(cloud.positions, partition)


def expand_mask(sp_mask: np.ndarray, partition: SuperpointPartition) -> np.ndarray:
    """Lift a per-superpoint binary mask to per-point, via assignment lookup."""
    sp_mask = np.asarray(sp_mask)
    if sp_mask.shape != (partition.n_superpoints,):
        raise ShapeError(
            f"expected ({partition.n_superpoints},) mask, got {sp_mask.shape}")
    return sp_mask.astype(np.uint8)[partition.assignment]


def _lift_view_samples(view: CameraView, tau: float):
    """Back-project valid pixels and keep those passing the visibility check."""
    idx, pts = geometry.backproject_view_arrays(view)
    if idx.size == 0:
        return idx, pts
    visible = geometry.visibility_mask(view, pts, tau)
    return idx[visible], pts[visible]


def _gather(centroids: np.ndarray, positions: np.ndarray, weights: np.ndarray,
            features: np.ndarray, r: float, dim: int) -> SuperpointFeatures:
    """Weighted-mean pooling of lifted samples around each centroid."""
    n_s = centroids.shape[0]
    values = np.zeros((n_s, dim), dtype=np.float64)
    coverage = np.zeros(n_s, dtype=np.float64)
    if positions.shape[0] == 0:
        return SuperpointFeatures(values=values, coverage=coverage)
    index = geometry.build_index(positions, cell_size=r)
    for s in range(n_s):
        near = geometry.radius_query(index, centroids[s], r)
        if near.size == 0:
            continue
        w = weights[near]
        total = w.sum()
        if total <= _DEGENERATE_WEIGHT:
            continue
        values[s] = (w[:, None] * features[near]).sum(axis=0) / total
        coverage[s] = total
    return SuperpointFeatures(values=values, coverage=coverage)


def aggregate_dense(cloud: PointCloud, partition: SuperpointPartition,
                    views: list[CameraView], maps: list[FeatureMap],
                    r: float = 0.05, tau: float = 0.05,
                    dim: int | None = None) -> SuperpointFeatures:
    """Lift dense per-pixel features into per-superpoint rows.

    Every valid-depth pixel of every view is back-projected carrying its
    feature vector; each superpoint centroid then gathers the lifted
    samples within radius ``r`` (unit weight per sample) and averages
    them.  Coverage counts the gathered samples.  ``dim`` is only needed
    when no views are given (zero views yield all-zero rows).
    """
    if len(views) != len(maps):
        raise ShapeError(f"{len(views)} views but {len(maps)} feature maps")
    if not maps:
        return SuperpointFeatures(
            values=np.zeros((partition.n_superpoints, dim if dim else 1)),
            coverage=np.zeros(partition.n_superpoints))
    dim = maps[0].dim
    positions, features = [], []
    for view, fmap in zip(views, maps):
        if (fmap.height, fmap.width) != (view.height, view.width):
            raise ShapeError(
                f"feature map {fmap.height}x{fmap.width} does not match view "
                f"{view.height}x{view.width}")
        if fmap.dim != dim:
            raise ShapeError("all feature maps must share one dimension")
        idx, pts = _lift_view_samples(view, tau)
        if idx.size == 0:
            continue
        positions.append(pts)
        features.append(fmap.values.reshape(-1, dim)[idx])
    centroids = superpoint_centroids(cloud, partition)
    if not positions:
        return SuperpointFeatures(
            values=np.zeros((partition.n_superpoints, dim)),
            coverage=np.zeros(partition.n_superpoints))
    pos = np.concatenate(positions, axis=0)
    feat = np.concatenate(features, axis=0)
    return _gather(centroids, pos, np.ones(pos.shape[0]), feat, r, dim)


def aggregate_instance(cloud: PointCloud, partition: SuperpointPartition,
                       views: list[CameraView],
                       instances: list[list[tuple[SoftMask, np.ndarray]]],
                       r: float = 0.05, tau: float = 0.05,
                       dim: int | None = None) -> SuperpointFeatures:
    """Lift per-instance pooled features into per-superpoint rows.

    ``instances[i]`` lists (soft mask at view i's resolution, instance
    feature) pairs.  A pixel contributes one sample per overlapping
    instance, weighted by that instance's soft mask value; gathering and
    pooling then work exactly as in aggregate_dense, with coverage
    accumulating the soft weights.
    """
    if len(views) != len(instances):
        raise ShapeError(f"{len(views)} views but {len(instances)} instance lists")
    for per_view in instances:
        for _, feat in per_view:
            dim = np.asarray(feat).shape[0] if dim is None else dim
    positions, weights, rows = [], [], []
    for view, per_view in zip(views, instances):
        if not per_view:
            continue
        idx, pts = _lift_view_samples(view, tau)
        for soft, feat in per_view:
            if soft.weights.shape != (view.height, view.width):
                raise ShapeError(
                    f"soft mask {soft.weights.shape} does not match view "
                    f"{view.height}x{view.width}")
            feat = np.asarray(feat, dtype=np.float64)
            if feat.shape != (dim,):
                raise ShapeError("all instance features must share one dimension")
            if idx.size == 0:
                continue
            w = soft.weights.reshape(-1)[idx]
            keep = w > 0.0
            if not keep.any():
                continue
            positions.append(pts[keep])
            weights.append(w[keep])
            rows.append(np.broadcast_to(feat, (int(keep.sum()), dim)))
    centroids = superpoint_centroids(cloud, partition)
    if dim is None or not positions:
        out_dim = dim if dim is not None else 0
        return SuperpointFeatures(
            values=np.zeros((partition.n_superpoints, max(out_dim, 1))),
            coverage=np.zeros(partition.n_superpoints))
    pos = np.concatenate(positions, axis=0)
    w = np.concatenate(weights, axis=0)
    feat = np.concatenate(rows, axis=0)
    return _gather(centroids, pos, w, feat, r, dim)
