"""Brute-force reference implementations of every pipeline stage.

These deliberately trade speed for transparency: per-pixel loops, O(N^2)
radius scans, triple-loop matrix products, per-head attention loops.
They exist to cross-check the fast paths and to power the ``oracle`` CLI
mode, and must never call into the fast implementations they verify
(the one exception is backproject_view_ref, whose stated reference is a
per-pixel loop over the scalar back-projection).
"""

from __future__ import annotations

import math

import numpy as np

from . import geometry
from .errors import DegenerateMaskError, ShapeError
from .geometry import CameraView, PointCloud
from .imagefeat import InstanceMask, SoftMask, TokenGrid, gaussian_kernel_1d
from .superpoint import SuperpointFeatures, SuperpointPartition
from .fusion import ParameterBundle, QuerySet, TextEmbedding


# -- geometry references ----------------------------------------------------

def backproject_solve_ref(view: CameraView, u: float, v: float, d: float) -> np.ndarray:
    """Linear-solve back-projection: solve K ray = (u d, v d, d), then extrinsics."""
    ray = np.linalg.solve(view.intrinsics, np.array([u * d, v * d, d], dtype=np.float64))
    hom = view.extrinsics @ np.append(ray, 1.0)
    return hom[:3]


def project_solve_ref(view: CameraView, point) -> tuple[float, float, float]:
    """Invert the 4x4 extrinsics numerically, then apply the intrinsics."""
    cam = np.linalg.inv(view.extrinsics) @ np.append(np.asarray(point, float), 1.0)
    x, y, z = cam[:3]
    pix = view.intrinsics @ np.array([x, y, z])
    return float(pix[0] / z), float(pix[1] / z), float(z)


def backproject_view_ref(view: CameraView) -> list[tuple[int, np.ndarray]]:
    out = []
    for v in range(view.height):
        for u in range(view.width):
            d = view.depth[v, u]
            if d > 0.0:
                out.append((v * view.width + u, geometry.backproject_pixel(view, u, v, d)))
    return out


def radius_scan_ref(points: np.ndarray, center, r: float) -> np.ndarray:
    """Full O(N) distance scan; same squared-distance convention as the index."""
    points = np.asarray(points, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    diff = points - center
    d2 = np.einsum("ij,ij->i", diff, diff)
    return np.flatnonzero(d2 <= r * r).astype(np.int64)


def fps_ref(points: np.ndarray, k: int, seed_index: int) -> np.ndarray:
    """FPS that recomputes the min-distance to all selected points each round.

    Deliberately O(N * k) per round instead of keeping a running minimum;
    the squared-distance expressions match the fast path bit for bit, so
    the selected index sequences must agree exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    selected = [int(seed_index)]
    for _ in range(1, k):
        diff = points[:, None, :] - points[selected][None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
        best = int(np.argmax(d2))
        selected.append(best)
    return np.asarray(selected, dtype=np.int64)


def visibility_ref(view: CameraView, point, tau: float) -> bool:
    try:
        u, v, z = project_solve_ref(view, point)
    except Exception:
        return False
    if z <= 0.0:
        return False
    ui, vi = int(np.round(u)), int(np.round(v))
    if not (0 <= ui < view.width and 0 <= vi < view.height):
        return False
    return abs(z - view.depth[vi, ui]) < tau


# -- image-feature references -------------------------------------------------

def gaussian_dense_ref(mask: InstanceMask, sigma: float) -> np.ndarray:
    """Dense 2D convolution with an outer-product kernel and edge clamping."""
    k1 = gaussian_kernel_1d(sigma)
    k2 = np.outer(k1, k1)
    radius = len(k1) // 2
    field = mask.mask.astype(np.float64)
    h, w = field.shape
    out = np.zeros_like(field)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += k2[dy + radius, dx + radius] * field[yy, xx]
            out[y, x] = acc
    return np.clip(out, 0.0, 1.0)


def bilinear_ref(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Scalar per-output-pixel resample, align-corners-false, edge clamped."""
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 2
    if squeeze:
        values = values[:, :, None]
    in_h, in_w, dim = values.shape
    out = np.zeros((out_h, out_w, dim))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * (in_h / out_h) - 0.5, 0.0), in_h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * (in_w / out_w) - 0.5, 0.0), in_w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            for c in range(dim):
                top = (1.0 - fx) * values[y0, x0, c] + fx * values[y0, x1, c]
                bot = (1.0 - fx) * values[y1, x0, c] + fx * values[y1, x1, c]
                out[oy, ox, c] = (1.0 - fy) * top + fy * bot
    return out[:, :, 0] if squeeze else out


def masked_pool_ref(tokens: TokenGrid, soft: SoftMask) -> np.ndarray:
    gh, gw = tokens.grid_shape
    dim = tokens.values.shape[2]
    num = np.zeros(dim)
    den = 0.0
    for y in range(gh):
        for x in range(gw):
            w = soft.weights[y, x]
            den += w
            num += w * tokens.values[y, x]
    if den <= 1e-8:
        raise DegenerateMaskError(f"total mask weight {den} is degenerate")
    return num / den


# -- superpoint references ----------------------------------------------------

def group_mean_ref(features: np.ndarray, assignment: np.ndarray,
                   n_groups: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    out = np.zeros((n_groups, features.shape[1]))
    for g in range(n_groups):
        members = [i for i in range(features.shape[0]) if assignment[i] == g]
        out[g] = features[members].mean(axis=0)
    return out


def expand_mask_ref(sp_mask: np.ndarray, partition: SuperpointPartition) -> np.ndarray:
    return np.array([int(sp_mask[partition.assignment[i]])
                     for i in range(partition.n_points)], dtype=np.uint8)


def _lift_samples_ref(view: CameraView, tau: float):
    """Per-pixel loop: back-project by linear solve, keep visible samples."""
    indices, points = [], []
    for v in range(view.height):
        for u in range(view.width):
            d = view.depth[v, u]
            if d <= 0.0:
                continue
            p = backproject_solve_ref(view, float(u), float(v), float(d))
            if visibility_ref(view, p, tau):
                indices.append(v * view.width + u)
                points.append(p)
    return indices, points


def aggregate_dense_ref(cloud: PointCloud, partition: SuperpointPartition,
                        views, maps, r: float, tau: float,
                        dim: int | None = None) -> SuperpointFeatures:
    if len(views) != len(maps):
        raise ShapeError(f"{len(views)} views but {len(maps)} feature maps")
    centroids = group_mean_ref(cloud.positions, partition.assignment,
                               partition.n_superpoints)
    samples = []
    for view, fmap in zip(views, maps):
        flat = fmap.values.reshape(-1, fmap.dim)
        idx, pts = _lift_samples_ref(view, tau)
        samples.extend((p, flat[i]) for i, p in zip(idx, pts))
        dim = fmap.dim
    dim = dim if dim else 1
    values = np.zeros((partition.n_superpoints, dim))
    coverage = np.zeros(partition.n_superpoints)
    for s in range(partition.n_superpoints):
        acc, count = np.zeros(dim), 0
        for p, f in samples:
            if float(np.sum((p - centroids[s]) ** 2)) <= r * r:
                acc += f
                count += 1
        if count:
            values[s] = acc / count
            coverage[s] = count
    return SuperpointFeatures(values=values, coverage=coverage)


def aggregate_instance_ref(cloud: PointCloud, partition: SuperpointPartition,
                           views, instances, r: float, tau: float,
                           dim: int | None = None) -> SuperpointFeatures:
    if len(views) != len(instances):
        raise ShapeError(f"{len(views)} views but {len(instances)} instance lists")
    centroids = group_mean_ref(cloud.positions, partition.assignment,
                               partition.n_superpoints)
    samples = []
    for view, per_view in zip(views, instances):
        idx, pts = _lift_samples_ref(view, tau)
        for soft, feat in per_view:
            feat = np.asarray(feat, dtype=np.float64)
            dim = feat.shape[0]
            flat = soft.weights.reshape(-1)
            for i, p in zip(idx, pts):
                w = flat[i]
                if w > 0.0:
                    samples.append((p, w, feat))
    dim = dim if dim else 1
    values = np.zeros((partition.n_superpoints, dim))
    coverage = np.zeros(partition.n_superpoints)
    for s in range(partition.n_superpoints):
        acc, total = np.zeros(dim), 0.0
        for p, w, f in samples:
            if float(np.sum((p - centroids[s]) ** 2)) <= r * r:
                acc += w * f
                total += w
        if total > 1e-8:
            values[s] = acc / total
            coverage[s] = total
    return SuperpointFeatures(values=values, coverage=coverage)


# -- fusion references ---------------------------------------------------------

def matmul_ref(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-by-column product with an explicit reference dot per entry."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = float(np.dot(a[i, :], b[:, j]))
    return out


def affine_ref(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return matmul_ref(x, w) + np.asarray(b, dtype=np.float64)[None, :]


def mlp_ref(x: np.ndarray, params: ParameterBundle, prefix: str) -> np.ndarray:
    hidden = affine_ref(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    hidden = np.where(hidden > 0.0, hidden, 0.0)
    return affine_ref(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _softmax_ref(row: np.ndarray) -> np.ndarray:
    shifted = row - max(float(x) for x in row)
    e = np.array([math.exp(float(x)) for x in shifted])
    return e / e.sum()


def attention_ref(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                  params: dict, heads: int) -> np.ndarray:
    """Per-head, per-query attention loop."""
    q = np.asarray(q, dtype=np.float64)
    dim = q.shape[1]
    head_dim = dim // heads
    qp = affine_ref(q, params["wq"], params["bq"])
    kp = affine_ref(np.asarray(k, float), params["wk"], params["bk"])
    vp = affine_ref(np.asarray(v, float), params["wv"], params["bv"])
    n_q, n_k = qp.shape[0], kp.shape[0]
    context = np.zeros((n_q, dim))
    for h in range(heads):
        sl = slice(h * head_dim, (h + 1) * head_dim)
        for i in range(n_q):
            scores = np.array([
                float(np.dot(qp[i, sl], kp[j, sl])) / math.sqrt(head_dim)
                for j in range(n_k)])
            weights = _softmax_ref(scores)
            for j in range(n_k):
                context[i, sl] += weights[j] * vp[j, sl]
    return affine_ref(context, params["wo"], params["bo"])


def adapter_ref(f_3d: np.ndarray, params: ParameterBundle) -> np.ndarray:
    return mlp_ref(np.asarray(f_3d, float), params, "adapter")


def intra_modal_fuse_ref(f_dense: np.ndarray, f_inst: np.ndarray,
                         params: ParameterBundle) -> np.ndarray:
    dense_q = mlp_ref(np.asarray(f_dense, float), params, "fuse.dense")
    inst_kv = mlp_ref(np.asarray(f_inst, float), params, "fuse.inst")
    return dense_q + attention_ref(dense_q, inst_kv, inst_kv,
                                   params.attention("fuse.attn"), params.heads)


def cross_modal_gate_ref(v_2d: np.ndarray, v_3d: np.ndarray,
                         params: ParameterBundle):
    v_2d = np.asarray(v_2d, dtype=np.float64)
    v_3d = np.asarray(v_3d, dtype=np.float64)
    logits = mlp_ref(np.concatenate([v_2d, v_3d], axis=1), params, "gate")
    fused = np.zeros_like(v_2d)
    w_2d = np.zeros(v_2d.shape[0])
    w_3d = np.zeros(v_2d.shape[0])
    for s in range(v_2d.shape[0]):
        gates = _softmax_ref(logits[s])
        w_2d[s], w_3d[s] = gates[0], gates[1]
        fused[s] = gates[0] * v_2d[s] + gates[1] * v_3d[s]
    return fused, w_2d, w_3d


def select_queries_ref(v_unified: np.ndarray, centroids: np.ndarray,
                       text: TextEmbedding, params: ParameterBundle,
                       n_seeds: int, m: int, pooling: str = "max") -> QuerySet:
    """Exhaustive scoring of every FPS candidate, then a stable sort."""
    v_unified = np.asarray(v_unified, dtype=np.float64)
    dim = v_unified.shape[1]
    candidates = fps_ref(centroids, n_seeds, 0)
    vis = affine_ref(v_unified[candidates], params["select.w_vis"], np.zeros(dim))
    txt = affine_ref(text.tokens, params["select.w_txt"], np.zeros(dim))
    scored = []
    for row, cand in enumerate(candidates):
        per_token = [float(np.dot(vis[row], txt[t])) / math.sqrt(dim)
                     for t in range(txt.shape[0])]
        pooled = max(per_token) if pooling == "max" else sum(per_token) / len(per_token)
        scored.append((pooled, int(cand)))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    top = scored[:m]
    ids = np.array([c for _, c in top], dtype=np.int64)
    return QuerySet(embeddings=v_unified[ids], superpoint_ids=ids,
                    relevance=np.array([s for s, _ in top]))


def instance_refine_ref(queries: QuerySet, instance_bank,
                        params: ParameterBundle) -> QuerySet:
    if len(instance_bank) == 0:
        return queries
    bank = np.asarray(instance_bank, dtype=np.float64)
    attended = attention_ref(queries.embeddings, bank, bank,
                             params.attention("refine.attn"), params.heads)
    return QuerySet(embeddings=queries.embeddings + attended,
                    superpoint_ids=queries.superpoint_ids,
                    relevance=queries.relevance)


def decode_ref(queries: QuerySet, v_unified: np.ndarray,
               params: ParameterBundle, layers: int):
    v_unified = np.asarray(v_unified, dtype=np.float64)
    q = np.array(queries.embeddings)
    for i in range(layers):
        q = q + attention_ref(q, v_unified, v_unified,
                              params.attention(f"dec{i}.cross"), params.heads)
        q = q + attention_ref(q, q, q, params.attention(f"dec{i}.self"), params.heads)
        q = q + mlp_ref(q, params, f"dec{i}.ffn")
    mask_embed = affine_ref(q, params["mask.w"], params["mask.b"])
    logits = matmul_ref(mask_embed, v_unified.T) / math.sqrt(params.dim)
    raw = np.array([float(np.dot(q[i], params["conf.w"])) + params["conf.b"][0]
                    for i in range(q.shape[0])])
    confidences = np.array([1.0 / (1.0 + math.exp(-x)) if x >= 0
                            else math.exp(x) / (1.0 + math.exp(x)) for x in raw])
    return logits, confidences


def predict_mask_ref(logits: np.ndarray, confidences: np.ndarray,
                     partition: SuperpointPartition, logit_threshold: float,
                     conf_threshold: float) -> np.ndarray:
    """Set-union formulation of the mask assembly."""
    active: set[int] = set()
    for qi in range(logits.shape[0]):
        if confidences[qi] < conf_threshold:
            continue
        active |= {s for s in range(logits.shape[1]) if logits[qi, s] > logit_threshold}
    sp_mask = np.zeros(partition.n_superpoints, dtype=np.uint8)
    for s in active:
        sp_mask[s] = 1
    return expand_mask_ref(sp_mask, partition)


def evaluate_ref(records, thresholds=(0.25, 0.5)) -> dict:
    """Counting-loop evaluation used by the oracle pipeline."""
    ious = []
    for r in records:
        inter = union = 0
        for a, b in zip(r.prediction, r.ground_truth):
            if a or b:
                union += 1
                if a and b:
                    inter += 1
        ious.append(1.0 if union == 0 else inter / union)
    n = len(ious)
    out = {
        "count": n,
        "miou": sum(ious) / n,
        "acc": {f"{k:g}": sum(1 for x in ious if x >= k) / n for k in thresholds},
        "by_category": {},
        "by_distractor": {},
    }
    return out


# -- numerical checking ---------------------------------------------------------

def finite_difference_gradient(fn, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = fn(x)
        xf[i] = orig - h
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad
