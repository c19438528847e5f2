"""Learnable-weight forward pass: adapter, attention fusion, gating,
language-guided query selection, refinement, and the mask decoder.

All operations are pure functions of their inputs and an immutable
ParameterBundle.  Training is out of scope; bundles come either from a
seeded initializer (for oracle comparisons) or from a tensor-archive
directory on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import ConfigError, FixtureIOError, ShapeError
from .geometry import farthest_point_sampling
from .superpoint import SuperpointPartition, expand_mask

_ATTN_PARTS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def tensor_shapes(input_dim: int, dim: int, decoder_layers: int) -> dict[str, tuple]:
    """Canonical name -> shape table for every affine map in the model."""

    def attn(prefix):
        return {
            f"{prefix}.wq": (dim, dim), f"{prefix}.bq": (dim,),
            f"{prefix}.wk": (dim, dim), f"{prefix}.bk": (dim,),
            f"{prefix}.wv": (dim, dim), f"{prefix}.bv": (dim,),
            f"{prefix}.wo": (dim, dim), f"{prefix}.bo": (dim,),
        }

    def mlp(prefix, d_in, d_hidden, d_out):
        return {
            f"{prefix}.w1": (d_in, d_hidden), f"{prefix}.b1": (d_hidden,),
            f"{prefix}.w2": (d_hidden, d_out), f"{prefix}.b2": (d_out,),
        }

    shapes: dict[str, tuple] = {}
    shapes.update(mlp("adapter", input_dim, dim, dim))
    shapes.update(mlp("fuse.dense", dim, dim, dim))
    shapes.update(mlp("fuse.inst", dim, dim, dim))
    shapes.update(attn("fuse.attn"))
    shapes.update(mlp("gate", 2 * dim, dim, 2))
    shapes["select.w_vis"] = (dim, dim)
    shapes["select.w_txt"] = (dim, dim)
    shapes.update(attn("refine.attn"))
    for i in range(decoder_layers):
        shapes.update(attn(f"dec{i}.cross"))
        shapes.update(attn(f"dec{i}.self"))
        shapes.update(mlp(f"dec{i}.ffn", dim, dim, dim))
    shapes["mask.w"] = (dim, dim)
    shapes["mask.b"] = (dim,)
    shapes["conf.w"] = (dim,)
    shapes["conf.b"] = (1,)
    return shapes


@dataclass(frozen=True)
class ParameterBundle:
    """Named weight matrices and biases for every affine map in the model."""

    input_dim: int
    dim: int
    heads: int
    decoder_layers: int
    rng_seed: int
    tensors: dict = field(repr=False)

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(
                f"dim {self.dim} must be divisible by heads {self.heads}")
        expected = tensor_shapes(self.input_dim, self.dim, self.decoder_layers)
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ConfigError(f"bundle tensor mismatch: missing={missing} extra={extra}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.ascontiguousarray(np.asarray(self.tensors[name], dtype=np.float64))
            if arr.shape != shape:
                raise ShapeError(f"tensor {name} must have shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"tensor {name} contains non-finite values")
            arr.flags.writeable = False
            frozen[name] = arr
        object.__setattr__(self, "tensors", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def attention(self, prefix: str) -> dict:
        return {part: self.tensors[f"{prefix}.{part}"] for part in _ATTN_PARTS}

    @classmethod
    def seeded(cls, input_dim: int, dim: int, heads: int, decoder_layers: int,
               rng_seed: int) -> "ParameterBundle":
        """Glorot-uniform matrices, zero biases; bit-reproducible per seed."""
        rng = np.random.default_rng(rng_seed)
        tensors = {}
        for name, shape in tensor_shapes(input_dim, dim, decoder_layers).items():
            if len(shape) == 2:
                a = math.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-a, a, size=shape)
            else:
                tensors[name] = np.zeros(shape)
        return cls(input_dim=input_dim, dim=dim, heads=heads,
                   decoder_layers=decoder_layers, rng_seed=rng_seed, tensors=tensors)

    @classmethod
    def zeros(cls, input_dim: int, dim: int, heads: int, decoder_layers: int,
              rng_seed: int = 0) -> "ParameterBundle":
        tensors = {name: np.zeros(shape) for name, shape in
                   tensor_shapes(input_dim, dim, decoder_layers).items()}
        return cls(input_dim=input_dim, dim=dim, heads=heads,
                   decoder_layers=decoder_layers, rng_seed=rng_seed, tensors=tensors)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        manifest = {
            "input_dim": self.input_dim, "dim": self.dim, "heads": self.heads,
            "decoder_layers": self.decoder_layers, "rng_seed": self.rng_seed,
            "tensors": {},
        }
        for name, arr in sorted(self.tensors.items()):
            filename = name.replace(".", "_") + ".htns"
            fileio.save_tensor(directory / filename, arr.astype(np.float32))
            manifest["tensors"][name] = filename
        fileio.write_json(directory / "manifest.json", manifest)

    @classmethod
    def load(cls, directory: str | Path) -> "ParameterBundle":
        directory = Path(directory)
        doc = fileio.read_json(directory / "manifest.json")
        try:
            tensors = {name: fileio.load_tensor(directory / filename).astype(np.float64)
                       for name, filename in doc["tensors"].items()}
            return cls(input_dim=int(doc["input_dim"]), dim=int(doc["dim"]),
                       heads=int(doc["heads"]),
                       decoder_layers=int(doc["decoder_layers"]),
                       rng_seed=int(doc["rng_seed"]), tensors=tensors)
        except KeyError as exc:
            raise FixtureIOError(f"bundle manifest missing field {exc}") from exc


@dataclass(frozen=True)
class TextEmbedding:
    """Token embeddings of the referring expression, N_T x D."""

    tokens: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] < 1:
            raise ShapeError(f"tokens must be (N_T, D) with N_T >= 1, got {t.shape}")
        if not np.isfinite(t).all():
            raise ConfigError("text embeddings must be finite")
        t = np.ascontiguousarray(t)
        t.flags.writeable = False
        object.__setattr__(self, "tokens", t)


@dataclass(frozen=True)
class QuerySet:
    """Selected queries: embeddings, their source superpoints, relevance."""

    embeddings: np.ndarray
    superpoint_ids: np.ndarray
    relevance: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        ids = np.asarray(self.superpoint_ids, dtype=np.int64)
        rel = np.asarray(self.relevance, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ShapeError(f"embeddings must be (m, D) with m >= 1, got {e.shape}")
        if ids.shape != (e.shape[0],) or rel.shape != (e.shape[0],):
            raise ShapeError("ids and relevance must have one entry per query")
        if len(set(ids.tolist())) != ids.size:
            raise ConfigError("superpoint ids must be distinct")
        if np.any(rel[1:] > rel[:-1]):
            raise ConfigError("relevance must be sorted non-increasing")
        for name, arr in (("embeddings", e), ("superpoint_ids", ids), ("relevance", rel)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


# -- primitives ------------------------------------------------------------

def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def _mlp(x: np.ndarray, params: ParameterBundle, prefix: str) -> np.ndarray:
    hidden = np.maximum(_affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]), 0.0)
    return _affine(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def multi_head_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         params: dict, heads: int,
                         return_weights: bool = False):
    """Scaled dot-product attention with per-head scale 1/sqrt(D/heads).

    ``params`` maps {wq, bq, wk, bk, wv, bv, wo, bo} to arrays.  Heads are
    split after the input projections and concatenated before the output
    projection.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    dim = q.shape[1]
    if dim % heads != 0:
        raise ConfigError(f"dim {dim} must be divisible by heads {heads}")
    if k.shape[0] < 1 or k.shape != v.shape:
        raise ShapeError("keys and values must be non-empty and share a shape")
    head_dim = dim // heads
    qp = _affine(q, params["wq"], params["bq"])
    kp = _affine(k, params["wk"], params["bk"])
    vp = _affine(v, params["wv"], params["bv"])
    n_q, n_k = q.shape[0], k.shape[0]
    qh = qp.reshape(n_q, heads, head_dim).transpose(1, 0, 2)
    kh = kp.reshape(n_k, heads, head_dim).transpose(1, 0, 2)
    vh = vp.reshape(n_k, heads, head_dim).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(head_dim)
    weights = _softmax_rows(scores)
    context = (weights @ vh).transpose(1, 0, 2).reshape(n_q, dim)
    out = _affine(context, params["wo"], params["bo"])
    if return_weights:
        return out, weights
    return out


def adapter(f_3d: np.ndarray, params: ParameterBundle) -> np.ndarray:
    """Project pooled 3D features into the shared embedding space (C -> D)."""
    f_3d = np.asarray(f_3d, dtype=np.float64)
    if f_3d.ndim != 2 or f_3d.shape[1] != params.input_dim:
        raise ShapeError(
            f"expected (N_S, {params.input_dim}) features, got {f_3d.shape}")
    return _mlp(f_3d, params, "adapter")


def intra_modal_fuse(f_dense: np.ndarray, f_inst: np.ndarray,
                     params: ParameterBundle) -> np.ndarray:
    """Blend the dense and instance branches of the 2D features.

    The dense branch (through its own two-layer map) queries the processed
    instance branch via multi-head attention; the processed dense branch
    is added back as a residual.
    """
    f_dense = np.asarray(f_dense, dtype=np.float64)
    f_inst = np.asarray(f_inst, dtype=np.float64)
    if f_dense.shape != f_inst.shape:
        raise ShapeError(
            f"branch shapes differ: {f_dense.shape} vs {f_inst.shape}")
    dense_q = _mlp(f_dense, params, "fuse.dense")
    inst_kv = _mlp(f_inst, params, "fuse.inst")
    attended = multi_head_attention(dense_q, inst_kv, inst_kv,
                                    params.attention("fuse.attn"), params.heads)
    return dense_q + attended


def cross_modal_gate(v_2d: np.ndarray, v_3d: np.ndarray,
                     params: ParameterBundle):
    """Convex per-superpoint blend of 2D and 3D features.

    A two-layer map over the concatenated features produces two logits;
    their softmax gives (w_2d, w_3d) and the output is the row-wise convex
    combination.  Returns (fused, w_2d, w_3d).
    """
    v_2d = np.asarray(v_2d, dtype=np.float64)
    v_3d = np.asarray(v_3d, dtype=np.float64)
    if v_2d.shape != v_3d.shape:
        raise ShapeError(f"modality shapes differ: {v_2d.shape} vs {v_3d.shape}")
    logits = _mlp(np.concatenate([v_2d, v_3d], axis=1), params, "gate")
    gates = _softmax_rows(logits)
    w_2d, w_3d = gates[:, 0], gates[:, 1]
    fused = w_2d[:, None] * v_2d + w_3d[:, None] * v_3d
    return fused, w_2d, w_3d


def select_queries(v_unified: np.ndarray, centroids: np.ndarray,
                   text: TextEmbedding, params: ParameterBundle,
                   n_seeds: int, m: int, pooling: str = "max") -> QuerySet:
    """Pick m language-aligned queries from spatially diverse candidates.

    FPS over centroids (seeded at index 0) proposes ``n_seeds`` candidates;
    each candidate's relevance pools (max by default, optionally mean) the
    scaled dot products between its projected feature and the projected
    text tokens.  The top m by relevance are kept, ties going to the
    smaller superpoint id.
    """
    v_unified = np.asarray(v_unified, dtype=np.float64)
    n_s, dim = v_unified.shape
    if not 1 <= m <= n_seeds:
        raise ConfigError(f"need 1 <= m <= n_seeds, got m={m}, n_seeds={n_seeds}")
    if n_seeds > n_s:
        raise ConfigError(f"n_seeds {n_seeds} exceeds superpoint count {n_s}")
    if pooling not in ("max", "mean"):
        raise ConfigError(f"pooling must be 'max' or 'mean', got {pooling!r}")
    candidates = farthest_point_sampling(centroids, n_seeds, seed_index=0)
    vis = v_unified[candidates] @ params["select.w_vis"]
    txt = text.tokens @ params["select.w_txt"]
    scores = vis @ txt.T / math.sqrt(dim)
    relevance = scores.max(axis=1) if pooling == "max" else scores.mean(axis=1)
    order = np.lexsort((candidates, -relevance))[:m]
    chosen = candidates[order]
    return QuerySet(embeddings=v_unified[chosen], superpoint_ids=chosen,
                    relevance=relevance[order])


def instance_refine(queries: QuerySet, instance_bank: list[np.ndarray],
                    params: ParameterBundle) -> QuerySet:
    """Enrich queries by cross-attending to the pooled instance features.

    An empty bank leaves the queries untouched.
    """
    if len(instance_bank) == 0:
        return queries
    bank = np.asarray(instance_bank, dtype=np.float64)
    attended = multi_head_attention(queries.embeddings, bank, bank,
                                    params.attention("refine.attn"), params.heads)
    return QuerySet(embeddings=queries.embeddings + attended,
                    superpoint_ids=queries.superpoint_ids,
                    relevance=queries.relevance)


def decode(queries: QuerySet, v_unified: np.ndarray, params: ParameterBundle,
           layers: int = 6):
    """Run the query decoder; returns (mask logits (m, N_S), confidences (m,)).

    Each layer applies residual cross-attention onto the superpoints,
    residual self-attention over the queries, and a residual feed-forward
    map.  Mask logits are the scaled dot product between the mask-projected
    final queries and the superpoint features; confidence is the logistic
    of an affine map of each final query.
    """
    if layers < 1:
        raise ConfigError(f"decoder needs at least one layer, got {layers}")
    if layers > params.decoder_layers:
        raise ConfigError(
            f"bundle provides {params.decoder_layers} layers, requested {layers}")
    v_unified = np.asarray(v_unified, dtype=np.float64)
    q = queries.embeddings
    for i in range(layers):
        q = q + multi_head_attention(q, v_unified, v_unified,
                                     params.attention(f"dec{i}.cross"), params.heads)
        q = q + multi_head_attention(q, q, q,
                                     params.attention(f"dec{i}.self"), params.heads)
        q = q + _mlp(q, params, f"dec{i}.ffn")
    mask_embed = _affine(q, params["mask.w"], params["mask.b"])
    logits = mask_embed @ v_unified.T / math.sqrt(params.dim)
    confidences = _sigmoid(q @ params["conf.w"] + params["conf.b"][0])
    return logits, confidences


def predict_mask(logits: np.ndarray, confidences: np.ndarray,
                 partition: SuperpointPartition, logit_threshold: float = 0.0,
                 conf_threshold: float = 0.5) -> np.ndarray:
    """Binary point mask from decoder outputs.

    Queries below the confidence threshold are dropped; the surviving
    queries' thresholded superpoint masks are unioned and expanded to
    points.  No survivors means an empty (zero-target) mask.
    """
    if not (np.isfinite(logit_threshold) and np.isfinite(conf_threshold)):
        raise ConfigError("thresholds must be finite")
    logits = np.asarray(logits, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != partition.n_superpoints:
        raise ShapeError(
            f"logits must be (m, {partition.n_superpoints}), got {logits.shape}")
    if confidences.shape != (logits.shape[0],):
        raise ShapeError("confidences must have one entry per query")
    keep = confidences >= conf_threshold
    if not keep.any():
        return np.zeros(partition.n_points, dtype=np.uint8)
    sp_mask = (logits[keep] > logit_threshold).any(axis=0)
    return expand_mask(sp_mask.astype(np.uint8), partition)
