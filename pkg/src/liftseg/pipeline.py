"""End-to-end pipeline orchestration.

Stage order: pool point features -> adapter -> lifting/aggregation (per
toggles) -> intra-modal fusion -> cross-modal gate (or element-wise
addition when gated fusion is off) -> query selection -> instance
refinement -> decoder -> mask prediction -> evaluation.  Each stage runs
under a wrapper that re-raises failures as StageError with the stage name
attached.

The same orchestration runs with two operation tables: the fast
implementations, and the brute-force references from the oracle module.
Both write prediction, logits, report, and record files so runs can be
diffed.  Reports contain no timestamps or timings, so identical inputs
produce byte-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio, fusion, geometry, imagefeat, lossmetrics, oracle, superpoint
from .config import PipelineConfig
from .errors import ConfigError, StageError
from .fusion import ParameterBundle, TextEmbedding
from .imagefeat import FeatureMap, InstanceMask, SoftMask, TokenGrid
from .lossmetrics import EvalRecord


@dataclass(frozen=True)
class StageOps:
    """The operations a pipeline run dispatches through."""

    pool_point_features: callable
    superpoint_centroids: callable
    adapter: callable
    aggregate_dense: callable
    aggregate_instance: callable
    filter_masks: callable
    gaussian_soften: callable
    bilinear_resize: callable
    upsample_features: callable
    masked_pool: callable
    intra_modal_fuse: callable
    cross_modal_gate: callable
    select_queries: callable
    instance_refine: callable
    decode: callable
    predict_mask: callable
    evaluate: callable


REAL_OPS = StageOps(
    pool_point_features=superpoint.pool_point_features,
    superpoint_centroids=superpoint.superpoint_centroids,
    adapter=fusion.adapter,
    aggregate_dense=superpoint.aggregate_dense,
    aggregate_instance=superpoint.aggregate_instance,
    filter_masks=imagefeat.filter_masks,
    gaussian_soften=imagefeat.gaussian_soften,
    bilinear_resize=imagefeat.bilinear_resize,
    upsample_features=imagefeat.upsample_features,
    masked_pool=imagefeat.masked_pool,
    intra_modal_fuse=fusion.intra_modal_fuse,
    cross_modal_gate=fusion.cross_modal_gate,
    select_queries=fusion.select_queries,
    instance_refine=fusion.instance_refine,
    decode=fusion.decode,
    predict_mask=fusion.predict_mask,
    evaluate=lossmetrics.evaluate,
)


def _oracle_upsample(tokens: TokenGrid, out_h: int, out_w: int) -> FeatureMap:
    return FeatureMap(values=oracle.bilinear_ref(tokens.values, out_h, out_w))


def _oracle_soften(mask: InstanceMask, sigma: float) -> SoftMask:
    return SoftMask(weights=oracle.gaussian_dense_ref(mask, sigma))


def _oracle_resize(soft: SoftMask, out_h: int, out_w: int) -> SoftMask:
    return SoftMask(weights=oracle.bilinear_ref(soft.weights, out_h, out_w))


def _oracle_pool(features: np.ndarray, partition) -> np.ndarray:
    return oracle.group_mean_ref(features, partition.assignment,
                                 partition.n_superpoints)


ORACLE_OPS = StageOps(
    pool_point_features=_oracle_pool,
    superpoint_centroids=lambda cloud, partition: _oracle_pool(cloud.positions, partition),
    adapter=oracle.adapter_ref,
    aggregate_dense=oracle.aggregate_dense_ref,
    aggregate_instance=oracle.aggregate_instance_ref,
    filter_masks=imagefeat.filter_masks,
    gaussian_soften=_oracle_soften,
    bilinear_resize=_oracle_resize,
    upsample_features=_oracle_upsample,
    masked_pool=oracle.masked_pool_ref,
    intra_modal_fuse=oracle.intra_modal_fuse_ref,
    cross_modal_gate=oracle.cross_modal_gate_ref,
    select_queries=oracle.select_queries_ref,
    instance_refine=oracle.instance_refine_ref,
    decode=oracle.decode_ref,
    predict_mask=oracle.predict_mask_ref,
    evaluate=oracle.evaluate_ref,
)


@dataclass
class PipelineInputs:
    cloud: geometry.PointCloud
    point_features: np.ndarray
    partition: superpoint.SuperpointPartition
    views: list
    tokens: list
    masks: list
    text: TextEmbedding
    bundle: ParameterBundle
    truth: dict
    gt_mask: np.ndarray


def load_inputs(config: PipelineConfig) -> PipelineInputs:
    """Load and validate every fixture referenced by the config."""
    config.validate()
    positions, colors = fileio.load_ply(config.scene)
    cloud = geometry.PointCloud(positions=positions, colors=colors)
    point_features = fileio.load_tensor(config.point_features).astype(np.float64)
    partition = fileio.load_partition(config.partition)
    if partition.n_points != cloud.n_points:
        raise ConfigError(
            f"partition covers {partition.n_points} points, scene has {cloud.n_points}")
    views = [fileio.load_view(p) for p in config.views]
    tokens = [TokenGrid(values=fileio.load_tensor(p).astype(np.float64))
              for p in config.features]
    masks = []
    for path in config.masks:
        records = fileio.read_json(path)
        base = Path(path).parent
        per_view = [
            InstanceMask(
                mask=fileio.load_tensor(base / rec["tensor"]),
                pred_iou=float(rec["pred_iou"]),
                stability=float(rec["stability"]),
            )
            for rec in records
        ]
        masks.append(per_view)
    text = TextEmbedding(tokens=fileio.load_tensor(config.text).astype(np.float64))
    bundle = ParameterBundle.load(config.params)
    if bundle.dim != config.dim or bundle.heads != config.heads:
        raise ConfigError(
            f"bundle dims (D={bundle.dim}, heads={bundle.heads}) do not match "
            f"config (D={config.dim}, heads={config.heads})")
    if bundle.decoder_layers < config.decoder_layers:
        raise ConfigError(
            f"bundle has {bundle.decoder_layers} decoder layers, config wants "
            f"{config.decoder_layers}")
    if text.tokens.shape[1] != config.dim:
        raise ConfigError(
            f"text embedding dim {text.tokens.shape[1]} != config dim {config.dim}")
    if point_features.shape[1] != bundle.input_dim:
        raise ConfigError(
            f"point features dim {point_features.shape[1]} != bundle input dim "
            f"{bundle.input_dim}")
    for grid, view in zip(tokens, views):
        if grid.values.shape[2] != config.dim:
            raise ConfigError("feature map dim does not match config dim")
    truth = fileio.read_json(config.truth)
    gt_mask = fileio.load_tensor(
        Path(config.truth).parent / truth["gt_mask"]).astype(np.uint8)
    if gt_mask.shape != (cloud.n_points,):
        raise ConfigError("ground-truth mask length does not match the scene")
    return PipelineInputs(cloud=cloud, point_features=point_features,
                          partition=partition, views=views, tokens=tokens,
                          masks=masks, text=text, bundle=bundle, truth=truth,
                          gt_mask=gt_mask)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _instance_branch(inputs: PipelineInputs, config: PipelineConfig, ops: StageOps):
    """Filter, soften, resize, and pool each view's instance masks."""
    per_view = []
    bank = []
    for view, grid, masks in zip(inputs.views, inputs.tokens, inputs.masks):
        kept = ops.filter_masks(masks, config.theta_iou, config.theta_stab)
        gh, gw = grid.grid_shape
        entries = []
        for mask in kept:
            soft = ops.gaussian_soften(mask, config.sigma)
            pooled = ops.masked_pool(grid, ops.bilinear_resize(soft, gh, gw))
            entries.append((soft, pooled))
            bank.append(pooled)
        per_view.append(entries)
    return per_view, bank


def _diagnostic_losses(config: PipelineConfig, logits: np.ndarray,
                       confidences: np.ndarray, gt_sp: np.ndarray,
                       queries: fusion.QuerySet, text: TextEmbedding) -> dict:
    """Report-only loss values for the decoded queries against ground truth."""
    best = int(np.argmax(confidences))
    target = gt_sp.astype(np.float64)
    bce, _ = lossmetrics.bce_loss(logits[best], target)
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits[best], -60.0, 60.0)))
    dice, _ = lossmetrics.dice_loss(probs, target)
    per_query_iou = np.array([
        lossmetrics.iou((logits[i] > config.logit_threshold).astype(np.uint8),
                        gt_sp) for i in range(logits.shape[0])])
    conf, _ = lossmetrics.confidence_loss(confidences, per_query_iou)
    positives = per_query_iou >= 0.5
    weights = config.loss_weights
    losses = {"bce": bce, "dice": dice, "confidence": conf, "contrastive": None}
    combined = weights[0] * bce + weights[1] * dice + weights[2] * conf
    if positives.any():
        contrastive, _, _ = lossmetrics.contrastive_alignment(
            queries.embeddings, text.tokens.mean(axis=0), positives,
            config.temperature)
        losses["contrastive"] = contrastive
        combined += weights[3] * contrastive
    losses["combined"] = combined
    return losses


def execute(config: PipelineConfig, out_dir: str | Path, ops: StageOps) -> dict:
    """Run all stages and write prediction, logits, report, and record files."""
    out_dir = Path(out_dir)
    inputs = load_inputs(config)
    n_s = inputs.partition.n_superpoints

    f_3d = _stage("pool_point_features", ops.pool_point_features,
                  inputs.point_features, inputs.partition)
    centroids = _stage("superpoint_centroids", ops.superpoint_centroids,
                       inputs.cloud, inputs.partition)
    v_3d = _stage("adapter", ops.adapter, f_3d, inputs.bundle)

    dense_maps = _stage(
        "upsample_features",
        lambda: [ops.upsample_features(grid, view.height, view.width)
                 for grid, view in zip(inputs.tokens, inputs.views)])
    f_dense = _stage("aggregate_dense", ops.aggregate_dense,
                     inputs.cloud, inputs.partition, inputs.views, dense_maps,
                     config.radius, config.tau)

    bank: list = []
    if config.enable_vsd:
        per_view, bank = _stage("instance_branch", _instance_branch,
                                inputs, config, ops)
        r_inst = config.radius_instance if config.radius_instance else config.radius
        f_inst = _stage("aggregate_instance", ops.aggregate_instance,
                        inputs.cloud, inputs.partition, inputs.views, per_view,
                        r_inst, config.tau, dim=config.dim)
        v_2d = _stage("intra_modal_fuse", ops.intra_modal_fuse,
                      f_dense.values, f_inst.values, inputs.bundle)
    else:
        v_2d = f_dense.values

    if config.enable_mlf:
        v_unified, w_2d, w_3d = _stage("cross_modal_gate", ops.cross_modal_gate,
                                       v_2d, v_3d, inputs.bundle)
    else:
        v_unified = v_2d + v_3d
        w_2d = w_3d = None

    n_seeds = min(config.n_seeds, n_s)
    n_queries = min(config.num_queries, n_seeds)
    queries = _stage("select_queries", ops.select_queries,
                     v_unified, centroids, inputs.text, inputs.bundle,
                     n_seeds, n_queries, config.relevance_pooling)
    if config.enable_vsd:
        queries = _stage("instance_refine", ops.instance_refine,
                         queries, bank, inputs.bundle)
    logits, confidences = _stage("decode", ops.decode,
                                 queries, v_unified, inputs.bundle,
                                 config.decoder_layers)
    prediction = _stage("predict_mask", ops.predict_mask,
                        logits, confidences, inputs.partition,
                        config.logit_threshold, config.conf_threshold)

    record = EvalRecord(
        sample_id=inputs.truth.get("sample_id", out_dir.name),
        prediction=prediction,
        ground_truth=inputs.gt_mask,
        category=inputs.truth["category"],
        has_distractor=bool(inputs.truth["has_distractor"]),
    )
    metrics = _stage("evaluate", ops.evaluate, [record], (0.25, 0.5))

    gt_sp = (_stage("pool_gt", superpoint.pool_point_features,
                    inputs.gt_mask[:, None].astype(np.float64), inputs.partition)
             [:, 0] > 0.5).astype(np.uint8)
    losses = _stage("diagnostic_losses", _diagnostic_losses,
                    config, logits, confidences, gt_sp, queries, inputs.text)

    fileio.save_tensor(out_dir / "prediction.htns", prediction)
    fileio.save_tensor(out_dir / "logits.htns", logits.astype(np.float32))
    report = {
        "config": config.to_json_dict(),
        "metrics": metrics,
        "losses": losses,
        "summary": {
            "n_points": int(inputs.cloud.n_points),
            "n_superpoints": int(n_s),
            "n_queries": int(queries.size),
            "queries_kept": int(np.count_nonzero(confidences >= config.conf_threshold)),
            "predicted_points": int(prediction.sum()),
            "instance_bank": len(bank),
            "gate_mean_w2d": None if w_2d is None else float(np.mean(w_2d)),
        },
    }
    fileio.write_json(out_dir / "report.json", report)
    fileio.write_json(out_dir / "record.json", {
        "sample_id": record.sample_id,
        "prediction": "prediction.htns",
        "gt_mask": str(Path(config.truth).parent / inputs.truth["gt_mask"]),
        "category": record.category,
        "has_distractor": record.has_distractor,
    })
    return report


def run_pipeline(config: PipelineConfig, out_dir: str | Path) -> dict:
    """Fast implementations for every stage."""
    return execute(config, out_dir, REAL_OPS)


def run_oracle(config: PipelineConfig, out_dir: str | Path) -> dict:
    """Brute-force references for every stage; same outputs, for diffing."""
    return execute(config, out_dir, ORACLE_OPS)


def load_record(path: str | Path) -> EvalRecord:
    """Read a record.json written by a run and rehydrate its masks."""
    doc = fileio.read_json(path)
    base = Path(path).parent
    pred = fileio.load_tensor(base / doc["prediction"])
    gt_path = Path(doc["gt_mask"])
    if not gt_path.is_absolute():
        gt_path = base / gt_path
    gt = fileio.load_tensor(gt_path)
    return EvalRecord(sample_id=doc["sample_id"], prediction=pred,
                      ground_truth=gt, category=doc["category"],
                      has_distractor=bool(doc["has_distractor"]))
