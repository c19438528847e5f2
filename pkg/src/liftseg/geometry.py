"""Camera projection math, voxel-hash radius queries, visibility, and FPS.

Pixel convention: (u, v) addresses (column, row) with the origin at the
top-left pixel center, matching how depth maps are indexed (depth[v, u]).
Depth 0 marks an invalid pixel.  Extrinsics map camera to world.

Back-projection of pixel (u, v) at depth d applies the inverse intrinsics
to (u*d, v*d, d) and then the rigid camera-to-world transform.  The
intrinsics are upper-triangular, so the inverse is applied in closed form;
the scalar and vectorized paths share the exact same expressions and are
therefore bit-identical per element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    ConfigError,
    InvalidDepthError,
    OutOfBoundsError,
    ShapeError,
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """A 3D scene: positions in meters, optional per-point colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ShapeError(f"positions must be (N, 3) with N >= 1, got {pos.shape}")
        if not np.isfinite(pos).all():
            raise ConfigError("point positions must be finite")
        object.__setattr__(self, "positions", _freeze(pos))
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.shape != pos.shape:
                raise ShapeError(f"colors must match positions shape, got {col.shape}")
            if col.min() < 0.0 or col.max() > 1.0:
                raise ConfigError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", _freeze(col))

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera with a depth map; extrinsics take camera to world."""

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    depth: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        if k.shape != (3, 3):
            raise ShapeError(f"intrinsics must be 3x3, got {k.shape}")
        if k[1, 0] != 0.0 or k[2, 0] != 0.0 or k[2, 1] != 0.0:
            raise ConfigError("intrinsics must be upper-triangular")
        if not (k[0, 0] > 0.0 and k[1, 1] > 0.0):
            raise ConfigError("focal entries must be strictly positive")
        if k[2, 2] != 1.0:
            raise ConfigError("intrinsics bottom-right entry must be 1")
        t = np.asarray(self.extrinsics, dtype=np.float64)
        if t.shape != (4, 4):
            raise ShapeError(f"extrinsics must be 4x4, got {t.shape}")
        rot = t[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6):
            raise ConfigError("extrinsics rotation block must be orthonormal")
        if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-6):
            raise ConfigError("extrinsics rotation determinant must be +1")
        if not np.allclose(t[3], (0.0, 0.0, 0.0, 1.0)):
            raise ConfigError("extrinsics bottom row must be (0, 0, 0, 1)")
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (int(self.height), int(self.width)):
            raise ShapeError(
                f"depth shape {d.shape} does not match (height, width)="
                f"({self.height}, {self.width})")
        if not np.isfinite(d).all() or d.min() < 0.0:
            raise ConfigError("depth values must be finite and >= 0")
        object.__setattr__(self, "intrinsics", _freeze(k))
        object.__setattr__(self, "extrinsics", _freeze(t))
        object.__setattr__(self, "depth", _freeze(d))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))


@dataclass(frozen=True)
class SpatialIndex:
    """Uniform voxel hash over a fixed point set."""

    cell_size: float
    cells: dict = field(repr=False)
    points: np.ndarray = field(repr=False)
    n_points: int = 0


# -- projection core (scalar and array inputs share these expressions) ----

def _pixels_to_world(view: CameraView, u, v, d):
    """Lift pixels to world points; broadcasts over array inputs."""
    k = view.intrinsics
    fx, skew, cx = k[0, 0], k[0, 1], k[0, 2]
    fy, cy = k[1, 1], k[1, 2]
    z = d
    y = (v * d - cy * d) / fy
    x = (u * d - cx * d - skew * y) / fx
    t = view.extrinsics
    wx = t[0, 0] * x + t[0, 1] * y + t[0, 2] * z + t[0, 3]
    wy = t[1, 0] * x + t[1, 1] * y + t[1, 2] * z + t[1, 3]
    wz = t[2, 0] * x + t[2, 1] * y + t[2, 2] * z + t[2, 3]
    return np.stack(np.broadcast_arrays(wx, wy, wz), axis=-1)


def _world_to_camera(view: CameraView, points):
    """Inverse rigid transform; broadcasts over (..., 3) arrays."""
    t = view.extrinsics
    points = np.asarray(points, dtype=np.float64)
    px = points[..., 0] - t[0, 3]
    py = points[..., 1] - t[1, 3]
    pz = points[..., 2] - t[2, 3]
    # rotation inverse is the transpose
    x = t[0, 0] * px + t[1, 0] * py + t[2, 0] * pz
    y = t[0, 1] * px + t[1, 1] * py + t[2, 1] * pz
    z = t[0, 2] * px + t[1, 2] * py + t[2, 2] * pz
    return x, y, z


def _camera_to_pixels(view: CameraView, x, y, z):
    k = view.intrinsics
    u = (k[0, 0] * x + k[0, 1] * y) / z + k[0, 2]
    v = (k[1, 1] * y) / z + k[1, 2]
    return u, v


def backproject_pixel(view: CameraView, u: float, v: float, d: float) -> np.ndarray:
    """World point for pixel (u, v) at depth d (meters).

    Raises InvalidDepthError for d <= 0 and OutOfBoundsError for pixels
    outside [0, width) x [0, height).
    """
    if not np.isfinite(d) or d <= 0.0:
        raise InvalidDepthError(f"depth must be positive and finite, got {d}")
    if not (0 <= u < view.width and 0 <= v < view.height):
        raise OutOfBoundsError(
            f"pixel ({u}, {v}) outside {view.width}x{view.height} image")
    return _pixels_to_world(view, float(u), float(v), float(d))


def project_point(view: CameraView, point) -> tuple[float, float, float]:
    """Project a world point; returns (u, v, camera-frame depth).

    Raises BehindCameraError when the camera-frame z is not positive.
    """
    x, y, z = _world_to_camera(view, np.asarray(point, dtype=np.float64))
    if z <= 0.0:
        raise BehindCameraError(f"point has camera-frame depth {z}")
    u, v = _camera_to_pixels(view, x, y, z)
    return float(u), float(v), float(z)


def backproject_view(view: CameraView) -> list[tuple[int, np.ndarray]]:
    """Lift every valid-depth pixel; returns (flat row-major index, point) pairs."""
    idx, pts = backproject_view_arrays(view)
    return [(int(i), pts[j].copy()) for j, i in enumerate(idx)]


def backproject_view_arrays(view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized form of backproject_view: (indices (M,), points (M, 3))."""
    valid = view.depth > 0.0
    vs, us = np.nonzero(valid)
    if vs.size == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3), dtype=np.float64)
    ds = view.depth[vs, us]
    pts = _pixels_to_world(view, us.astype(np.float64), vs.astype(np.float64), ds)
    return (vs * view.width + us).astype(np.int64), pts


def build_index(points: np.ndarray, cell_size: float) -> SpatialIndex:
    """Hash points into uniform voxel cells of side ``cell_size`` meters."""
    if cell_size <= 0.0:
        raise ConfigError(f"cell_size must be positive, got {cell_size}")
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"points must be (N, 3), got {points.shape}")
    keys = np.floor(points / cell_size).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    change = np.ones(len(order), dtype=bool)
    change[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    starts = np.flatnonzero(change)
    ends = np.append(starts[1:], len(order))
    cells = {}
    for s, e in zip(starts, ends):
        cells[tuple(sorted_keys[s])] = np.sort(order[s:e])
    return SpatialIndex(cell_size=float(cell_size), cells=cells,
                        points=_freeze(points), n_points=points.shape[0])


def radius_query(index: SpatialIndex, center, r: float) -> np.ndarray:
    """Indices of all points within Euclidean distance r of ``center``, ascending."""
    if r <= 0.0:
        raise ConfigError(f"radius must be positive, got {r}")
    center = np.asarray(center, dtype=np.float64)
    cs = index.cell_size
    lo = np.floor((center - r) / cs).astype(np.int64)
    hi = np.floor((center + r) / cs).astype(np.int64)
    chunks = []
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            for k in range(lo[2], hi[2] + 1):
                hit = index.cells.get((i, j, k))
                if hit is not None:
                    chunks.append(hit)
    if not chunks:
        return np.empty(0, dtype=np.int64)
    cand = np.concatenate(chunks)
    diff = index.points[cand] - center
    inside = np.einsum("ij,ij->i", diff, diff) <= r * r
    return np.sort(cand[inside])


def farthest_point_sampling(points: np.ndarray, k: int, seed_index: int) -> np.ndarray:
    """Greedy max-min subsampling; ties broken toward the smallest index.

    The first selected index is ``seed_index``; every later pick maximizes
    its minimum squared distance to the points already selected.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ShapeError(f"k must satisfy 1 <= k <= {n}, got {k}")
    if not 0 <= seed_index < n:
        raise ConfigError(f"seed_index must lie in [0, {n}), got {seed_index}")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = seed_index
    diff = points - points[seed_index]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax returns the first (smallest) index on ties
        selected[i] = nxt
        diff = points - points[nxt]
        np.minimum(min_d2, np.einsum("ij,ij->i", diff, diff), out=min_d2)
    return selected


def visibility_check(view: CameraView, point, tau: float = 0.05) -> bool:
    """Depth-consistency test for one world point against a view's depth map."""
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    x, y, z = _world_to_camera(view, np.asarray(point, dtype=np.float64))
    if z <= 0.0:
        return False
    u, v = _camera_to_pixels(view, x, y, z)
    ui = int(np.round(u))
    vi = int(np.round(v))
    if not (0 <= ui < view.width and 0 <= vi < view.height):
        return False
    return bool(abs(z - view.depth[vi, ui]) < tau)


def visibility_mask(view: CameraView, points: np.ndarray, tau: float = 0.05) -> np.ndarray:
    """Vectorized visibility_check over (M, 3) points."""
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    points = np.asarray(points, dtype=np.float64)
    x, y, z = _world_to_camera(view, points)
    ok = z > 0.0
    safe_z = np.where(ok, z, 1.0)
    u, v = _camera_to_pixels(view, x, y, safe_z)
    ui = np.round(u).astype(np.int64)
    vi = np.round(v).astype(np.int64)
    inside = ok & (ui >= 0) & (ui < view.width) & (vi >= 0) & (vi < view.height)
    out = np.zeros(points.shape[0], dtype=bool)
    if inside.any():
        sel = np.flatnonzero(inside)
        stored = view.depth[vi[sel], ui[sel]]
        out[sel] = np.abs(z[sel] - stored) < tau
    return out
