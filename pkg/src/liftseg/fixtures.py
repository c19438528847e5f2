"""Synthetic desk-scale scene generator.

Each scene is a handful of axis-aligned boxes on a virtual tabletop.
Every object owns a non-negative "signature" feature supported on its own
randomly permuted block of coordinates, so signatures of different
objects are exactly orthogonal and one spare block stays free for the
zero-target text direction.  Views are pinhole cameras on a steep circle
around the scene with exactly ray-cast depth, per-pixel features equal to
the hit object's signature plus noise, and per-object instance masks.

Because training is out of scope, the generator also writes a structured
parameter bundle: identity-like maps on the 2D path, a mildly damped
random adapter on the 3D path, and a confidence head aligned with the
scene's text embedding.  With those weights the pipeline's behavior on
its own fixtures is analyzable by construction: queries aligned with the
text keep high confidence and their mask logits separate cleanly from
other objects, while zero-target scenes keep every confidence low.

Everything is derived from one seeded generator, so reruns are
byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .config import PipelineConfig, save_config
from .errors import ConfigError
from .fusion import ParameterBundle, tensor_shapes

SIGNATURE_NORM = 3.0
MIN_MASK_PIXELS = 4


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs for one generated scene."""

    n_objects: int = 4
    points_per_object: int = 800
    extent: float = 0.3
    feature_dim: int = 64
    n_views: int = 3
    image_size: int = 32
    noise: float = 0.05
    target_ids: tuple = (0,)
    fragments_per_object: int = 4

    def __post_init__(self):
        object.__setattr__(self, "target_ids", tuple(int(t) for t in self.target_ids))
        if self.n_objects < 1:
            raise ConfigError("need at least one object")
        if any(not 0 <= t < self.n_objects for t in self.target_ids):
            raise ConfigError("target ids must index existing objects")
        if len(set(self.target_ids)) != len(self.target_ids):
            raise ConfigError("target ids must be distinct")
        if self.feature_dim < 2 * (self.n_objects + 1):
            raise ConfigError(
                f"feature_dim {self.feature_dim} too small for "
                f"{self.n_objects} orthogonal signatures")
        if self.points_per_object < self.fragments_per_object:
            raise ConfigError("points_per_object must cover the fragments")
        if self.image_size < 8 or self.n_views < 1:
            raise ConfigError("need image_size >= 8 and at least one view")
        if self.extent <= 0.0 or self.noise < 0.0:
            raise ConfigError("extent must be positive and noise non-negative")

    @property
    def category(self) -> str:
        if len(self.target_ids) == 0:
            return "ZT"
        return "ST" if len(self.target_ids) == 1 else "MT"

    @property
    def has_distractor(self) -> bool:
        return self.n_objects > max(len(self.target_ids), 1)


def _make_signatures(rng: np.random.Generator, n_objects: int, dim: int,
                     strata: int):
    """Disjoint-support non-negative signatures plus a spare orthogonal one.

    Support is spread evenly over ``strata`` contiguous slices of the
    feature axis (the attention head slices), so per-head dot products
    between matching features stay strong and heads never degenerate to
    uniform mixing.
    """
    groups = n_objects + 1
    stratum = dim // strata
    per = stratum // groups
    if per < 1:
        raise ConfigError(
            f"feature_dim {dim} too small for {n_objects} objects with "
            f"{strata} head slices")
    supports = [[] for _ in range(groups)]
    for s in range(strata):
        perm = s * stratum + rng.permutation(stratum)
        for g in range(groups):
            supports[g].extend(perm[g * per:(g + 1) * per])
    rows = np.zeros((groups, dim))
    for g in range(groups):
        values = rng.uniform(0.5, 1.0, size=len(supports[g]))
        rows[g, supports[g]] = values / np.linalg.norm(values) * SIGNATURE_NORM
    return rows[:n_objects], rows[n_objects]


def _place_boxes(rng: np.random.Generator, n_objects: int, extent: float):
    """Non-overlapping boxes on a jittered grid; tops roughly coplanar."""
    cols = int(np.ceil(np.sqrt(n_objects)))
    rows = int(np.ceil(n_objects / cols))
    spacing = 2.5 * extent
    order = rng.permutation(rows * cols)[:n_objects]
    lo = np.zeros((n_objects, 3))
    hi = np.zeros((n_objects, 3))
    for o, cell in enumerate(order):
        cy, cx = divmod(int(cell), cols)
        center_x = (cx - (cols - 1) / 2.0) * spacing + rng.uniform(-0.2, 0.2) * extent
        center_y = (cy - (rows - 1) / 2.0) * spacing + rng.uniform(-0.2, 0.2) * extent
        half = 0.5 * extent * rng.uniform(0.85, 1.0, size=2)
        height = extent * rng.uniform(0.85, 1.0)
        lo[o] = (center_x - half[0], center_y - half[1], 0.0)
        hi[o] = (center_x + half[0], center_y + half[1], height)
    return lo, hi


def _look_at_extrinsics(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world transform for a camera at ``position`` facing ``target``."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    down = down / np.linalg.norm(down)
    out = np.eye(4)
    out[:3, 0] = right
    out[:3, 1] = down
    out[:3, 2] = forward
    out[:3, 3] = position
    return out


def _render_view(intrinsics: np.ndarray, extrinsics: np.ndarray, size: int,
                 lo: np.ndarray, hi: np.ndarray):
    """Exact ray-cast depth and per-pixel object ids (-1 where no hit).

    Ray directions carry camera-frame z = 1, so the slab-intersection
    parameter equals the camera-frame depth directly.
    """
    fx, cx = intrinsics[0, 0], intrinsics[0, 2]
    fy, cy = intrinsics[1, 1], intrinsics[1, 2]
    us, vs = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    dirs_cam = np.stack([(us - cx) / fx, (vs - cy) / fy, np.ones_like(us)], axis=-1)
    rot = extrinsics[:3, :3]
    origin = extrinsics[:3, 3]
    dirs = dirs_cam @ rot.T
    safe = np.where(np.abs(dirs) < 1e-12, np.where(dirs < 0, -1e-12, 1e-12), dirs)
    depth_per_box = np.full((lo.shape[0], size, size), np.inf)
    for o in range(lo.shape[0]):
        t1 = (lo[o] - origin) / safe
        t2 = (hi[o] - origin) / safe
        t_near = np.minimum(t1, t2).max(axis=-1)
        t_far = np.maximum(t1, t2).min(axis=-1)
        hit = (t_far >= t_near) & (t_near > 1e-6)
        depth_per_box[o] = np.where(hit, t_near, np.inf)
    obj = depth_per_box.argmin(axis=0).astype(np.int64)
    depth = depth_per_box.min(axis=0)
    invalid = ~np.isfinite(depth)
    obj[invalid] = -1
    depth = np.where(invalid, 0.0, depth)
    return depth, obj


def _grounding_bundle(rng: np.random.Generator, spec: SyntheticSceneSpec,
                      text_tokens: np.ndarray, heads: int,
                      layers: int, seed: int) -> ParameterBundle:
    """Structured weights that keep signature geometry intact end to end."""
    dim = spec.feature_dim
    tensors = {name: np.zeros(shape)
               for name, shape in tensor_shapes(dim, dim, layers).items()}
    eye = np.eye(dim)

    def sharp_attention(prefix, query_scale=12.0):
        # large query scale concentrates each row on its matching keys,
        # keeping cross-object leakage through the value mix small
        tensors[f"{prefix}.wq"] = query_scale * eye
        tensors[f"{prefix}.wk"] = eye.copy()
        tensors[f"{prefix}.wv"] = eye.copy()
        tensors[f"{prefix}.wo"] = eye.copy()

    # 3D path: small random projection keeps V_3d as mild context
    tensors["adapter.w1"] = 0.05 * rng.standard_normal((dim, dim))
    tensors["adapter.b1"] = np.full(dim, 0.01)
    tensors["adapter.w2"] = 0.05 * rng.standard_normal((dim, dim))
    # 2D path: pass-through branches, attention pulls in instance evidence
    tensors["fuse.dense.w1"] = eye.copy()
    tensors["fuse.dense.w2"] = eye.copy()
    tensors["fuse.inst.w1"] = eye.copy()
    tensors["fuse.inst.w2"] = eye.copy()
    sharp_attention("fuse.attn")
    # gate: input-independent logits favoring the 2D branch
    tensors["gate.b1"] = np.full(dim, 0.1)
    tensors["gate.b2"] = np.array([1.0, 0.0])
    tensors["select.w_vis"] = eye.copy()
    tensors["select.w_txt"] = eye.copy()
    sharp_attention("refine.attn")
    # decoder layers stay at zero: residual-only, queries pass through
    tensors["mask.w"] = eye.copy()
    pooled = text_tokens.mean(axis=0)
    tensors["conf.w"] = 2.0 * pooled / np.linalg.norm(pooled)
    tensors["conf.b"] = np.array([-3.0])
    return ParameterBundle(input_dim=dim, dim=dim, heads=heads,
                           decoder_layers=layers, rng_seed=seed, tensors=tensors)


def gen_fixtures(spec: SyntheticSceneSpec, seed: int, out_dir: str | Path) -> dict:
    """Write a complete fixture directory; returns the path manifest."""
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    views_dir = out_dir / "views"
    dim = spec.feature_dim
    size = spec.image_size

    heads = 4 if dim % 4 == 0 else 1
    signatures, orthogonal = _make_signatures(rng, spec.n_objects, dim, heads)
    lo, hi = _place_boxes(rng, spec.n_objects, spec.extent)
    object_colors = rng.uniform(0.15, 0.95, size=(spec.n_objects, 3))

    # point cloud: uniform samples inside each box, objects contiguous
    points = np.concatenate([
        rng.uniform(lo[o], hi[o], size=(spec.points_per_object, 3))
        for o in range(spec.n_objects)])
    point_object = np.repeat(np.arange(spec.n_objects), spec.points_per_object)
    colors = object_colors[point_object]

    # one pure superpoint per x-slab of each object's points
    assignment = np.zeros(points.shape[0], dtype=np.int32)
    next_id = 0
    for o in range(spec.n_objects):
        sl = slice(o * spec.points_per_object, (o + 1) * spec.points_per_object)
        order = np.argsort(points[sl, 0], kind="stable")
        for chunk in np.array_split(order, spec.fragments_per_object):
            assignment[sl.start + chunk] = next_id
            next_id += 1
    n_superpoints = next_id

    # steep camera ring around the scene
    scene_center = 0.5 * (lo.min(axis=0) + hi.max(axis=0))
    scene_radius = float(np.linalg.norm(hi.max(axis=0) - lo.min(axis=0))) / 2.0
    distance = max(2.5 * scene_radius, 6.0 * spec.extent)
    focal = 0.85 * size
    intrinsics = np.array([[focal, 0.0, (size - 1) / 2.0],
                           [0.0, focal, (size - 1) / 2.0],
                           [0.0, 0.0, 1.0]])
    phase = rng.uniform(0.0, 2.0 * np.pi)

    view_paths, feature_paths, mask_paths = [], [], []
    instance_bank_sizes = []
    for i in range(spec.n_views):
        angle = phase + 2.0 * np.pi * i / spec.n_views
        position = scene_center + np.array([
            0.7 * distance * np.cos(angle),
            0.7 * distance * np.sin(angle),
            0.9 * distance,
        ])
        extrinsics = _look_at_extrinsics(position, scene_center)
        depth, obj = _render_view(intrinsics, extrinsics, size, lo, hi)

        features = np.zeros((size, size, dim))
        valid = obj >= 0
        features[valid] = signatures[obj[valid]]
        features += rng.normal(0.0, spec.noise, size=features.shape)
        features[~valid] = 0.0

        name = f"view_{i:03d}"
        fileio.save_tensor(views_dir / f"{name}_depth.htns", depth.astype(np.float32))
        fileio.save_view_json(views_dir / f"{name}.json", intrinsics, extrinsics,
                              size, size, f"{name}_depth.htns")
        fileio.save_tensor(views_dir / f"{name}_features.htns",
                           features.astype(np.float32))

        records = []
        kept = 0
        for o in range(spec.n_objects):
            mask = ((obj == o) & valid).astype(np.uint8)
            if int(mask.sum()) < MIN_MASK_PIXELS:
                continue
            mask_name = f"{name}_mask_{o:02d}.htns"
            fileio.save_tensor(views_dir / mask_name, mask)
            records.append({
                "tensor": mask_name,
                "pred_iou": float(rng.uniform(0.9, 0.99)),
                "stability": float(rng.uniform(0.93, 0.995)),
            })
            kept += 1
        # one low-quality decoy per view; filtering must drop it
        junk = np.zeros((size, size), dtype=np.uint8)
        jy, jx = rng.integers(0, size - 4, size=2)
        junk[jy:jy + 4, jx:jx + 4] = 1
        junk_name = f"{name}_mask_junk.htns"
        fileio.save_tensor(views_dir / junk_name, junk)
        records.append({
            "tensor": junk_name,
            "pred_iou": float(rng.uniform(0.2, 0.7)),
            "stability": float(rng.uniform(0.3, 0.85)),
        })
        fileio.write_json(views_dir / f"{name}_masks.json", records)
        instance_bank_sizes.append(kept)

        view_paths.append(f"views/{name}.json")
        feature_paths.append(f"views/{name}_features.htns")
        mask_paths.append(f"views/{name}_masks.json")

    # 3D point features: positional context only, no signature content
    point_features = np.zeros((points.shape[0], dim))
    point_features[:, :3] = (points - scene_center) / max(scene_radius, 1e-6)
    point_features[:, 3] = 1.0
    point_features += rng.normal(0.0, 0.1 * spec.noise + 1e-3,
                                 size=point_features.shape)

    if spec.target_ids:
        text_tokens = signatures[list(spec.target_ids)]
    else:
        text_tokens = orthogonal[None, :]

    gt_mask = np.isin(point_object, spec.target_ids).astype(np.uint8)

    fileio.save_ply(out_dir / "scene.ply", points, colors)
    fileio.save_tensor(out_dir / "point_features.htns",
                       point_features.astype(np.float32))
    fileio.save_partition(out_dir / "partition.json", assignment, n_superpoints)
    fileio.save_tensor(out_dir / "text.htns", text_tokens.astype(np.float32))
    fileio.save_tensor(out_dir / "gt_mask.htns", gt_mask)
    fileio.save_tensor(out_dir / "signatures.htns", signatures.astype(np.float32))
    fileio.write_json(out_dir / "truth.json", {
        "sample_id": f"scene-{seed:08d}",
        "category": spec.category,
        "has_distractor": spec.has_distractor,
        "target_object_ids": list(spec.target_ids),
        "gt_mask": "gt_mask.htns",
        "signatures": "signatures.htns",
        "n_objects": spec.n_objects,
        "points_per_object": spec.points_per_object,
    })

    layers = 6
    bundle = _grounding_bundle(rng, spec, text_tokens, heads, layers, seed)
    bundle.save(out_dir / "params")

    n_targets = max(len(spec.target_ids), 1)
    config = PipelineConfig(
        scene="scene.ply",
        point_features="point_features.htns",
        partition="partition.json",
        views=tuple(view_paths),
        features=tuple(feature_paths),
        masks=tuple(mask_paths),
        text="text.htns",
        params="params",
        truth="truth.json",
        dim=dim,
        heads=heads,
        decoder_layers=layers,
        radius=0.8 * spec.extent,
        sigma=1.0,
        tau=0.05,
        n_seeds=n_superpoints,
        num_queries=min(n_superpoints, spec.fragments_per_object * (n_targets + 1)),
        logit_threshold=0.3,
        conf_threshold=0.5,
        rng_seed=seed,
    )
    config.validate()
    save_config(out_dir / "config.json", config)

    return {
        "dir": str(out_dir),
        "config": str(out_dir / "config.json"),
        "n_points": int(points.shape[0]),
        "n_superpoints": int(n_superpoints),
        "category": spec.category,
        "instance_masks_per_view": instance_bank_sizes,
    }
