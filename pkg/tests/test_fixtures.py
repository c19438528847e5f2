"""Synthetic scene generator: determinism, rendering consistency, signature
geometry, and partition purity."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from liftseg import ConfigError, gen_fixtures, load_config
from liftseg import fileio, geometry
from liftseg.fixtures import SyntheticSceneSpec


def _dir_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture") / "scene"
    spec = SyntheticSceneSpec(n_objects=4, points_per_object=300, n_views=2,
                              image_size=24, target_ids=(1,))
    manifest = gen_fixtures(spec, 77, out)
    return spec, out, manifest


class TestDeterminism:
    def test_identical_reruns_are_byte_identical(self, tmp_path):
        spec = SyntheticSceneSpec(n_objects=3, points_per_object=120, n_views=2,
                                  image_size=16)
        gen_fixtures(spec, 5, tmp_path / "a")
        gen_fixtures(spec, 5, tmp_path / "b")
        a = _dir_digest(tmp_path / "a")
        b = _dir_digest(tmp_path / "b")
        assert a == b
        assert len(a) > 10

    def test_different_seeds_differ(self, tmp_path):
        spec = SyntheticSceneSpec(n_objects=3, points_per_object=120, n_views=1,
                                  image_size=16)
        gen_fixtures(spec, 5, tmp_path / "a")
        gen_fixtures(spec, 6, tmp_path / "b")
        assert _dir_digest(tmp_path / "a") != _dir_digest(tmp_path / "b")


class TestSignatures:
    def test_object_signatures_orthogonal_nonnegative(self, scene):
        _, out, _ = scene
        signatures = fileio.load_tensor(out / "signatures.htns").astype(np.float64)
        assert signatures.min() >= 0.0
        gram = signatures @ signatures.T
        off_diag = gram - np.diag(np.diag(gram))
        assert np.abs(off_diag).max() < 1e-6

    def test_zero_target_text_orthogonal(self, tmp_path):
        spec = SyntheticSceneSpec(n_objects=4, points_per_object=100, n_views=1,
                                  image_size=16, target_ids=())
        gen_fixtures(spec, 3, tmp_path / "zt")
        signatures = fileio.load_tensor(tmp_path / "zt/signatures.htns").astype(np.float64)
        text = fileio.load_tensor(tmp_path / "zt/text.htns").astype(np.float64)
        norms = np.linalg.norm(signatures, axis=1) * np.linalg.norm(text[0])
        cosines = np.abs(signatures @ text[0]) / norms
        assert cosines.max() < 0.1

    def test_single_target_text_is_signature(self, scene):
        _, out, _ = scene
        signatures = fileio.load_tensor(out / "signatures.htns")
        text = fileio.load_tensor(out / "text.htns")
        np.testing.assert_array_equal(text[0], signatures[1])


class TestRendering:
    def test_lifted_pixels_inside_object_boxes(self, tmp_path):
        spec = SyntheticSceneSpec(n_objects=1, points_per_object=200, n_views=1,
                                  image_size=24, target_ids=(0,))
        gen_fixtures(spec, 11, tmp_path / "one")
        config = load_config(tmp_path / "one/config.json")
        view = fileio.load_view(config.views[0])
        positions, _ = fileio.load_ply(config.scene)
        lo = positions.min(axis=0) - 5e-2
        hi = positions.max(axis=0) + 5e-2
        entries = geometry.backproject_view(view)
        assert len(entries) > 0
        for _, point in entries:
            assert np.all(point >= lo) and np.all(point <= hi)

    def test_depth_valid_and_zero_marked(self, scene):
        _, out, _ = scene
        config = load_config(out / "config.json")
        for path in config.views:
            view = fileio.load_view(path)
            assert np.isfinite(view.depth).all()
            assert view.depth.min() >= 0.0
            assert (view.depth > 0).any()
            assert (view.depth == 0).any()  # background pixels exist

    def test_instance_masks_cover_visible_objects(self, scene):
        _, out, manifest = scene
        assert all(n >= 1 for n in manifest["instance_masks_per_view"])
        config = load_config(out / "config.json")
        records = fileio.read_json(config.masks[0])
        # exactly one decoy below the quality thresholds per view
        low = [r for r in records
               if r["pred_iou"] < config.theta_iou or r["stability"] < config.theta_stab]
        assert len(low) == 1


class TestPartitionAndTruth:
    def test_partition_pure_per_object(self, scene):
        spec, out, manifest = scene
        part = fileio.load_partition(out / "partition.json")
        point_object = np.repeat(np.arange(spec.n_objects), spec.points_per_object)
        for s in range(part.n_superpoints):
            owners = np.unique(point_object[part.assignment == s])
            assert owners.size == 1
        assert part.n_superpoints == spec.n_objects * spec.fragments_per_object

    def test_ground_truth_matches_targets(self, scene):
        spec, out, _ = scene
        gt = fileio.load_tensor(out / "gt_mask.htns")
        expected = np.zeros(spec.n_objects * spec.points_per_object, dtype=np.uint8)
        start = spec.target_ids[0] * spec.points_per_object
        expected[start:start + spec.points_per_object] = 1
        np.testing.assert_array_equal(gt, expected)

    def test_truth_metadata(self, scene):
        _, out, _ = scene
        truth = fileio.read_json(out / "truth.json")
        assert truth["category"] == "ST"
        assert truth["has_distractor"] is True
        assert truth["target_object_ids"] == [1]

    def test_config_validates_and_loads(self, scene):
        _, out, _ = scene
        config = load_config(out / "config.json")
        config.validate()
        assert config.n_seeds == 16
        assert config.dim == 64


class TestSpecValidation:
    def test_bad_targets(self):
        with pytest.raises(ConfigError):
            SyntheticSceneSpec(n_objects=2, target_ids=(5,))

    def test_dim_too_small(self):
        with pytest.raises(ConfigError):
            SyntheticSceneSpec(n_objects=4, feature_dim=8)

    def test_category_derivation(self):
        assert SyntheticSceneSpec(target_ids=()).category == "ZT"
        assert SyntheticSceneSpec(target_ids=(0,)).category == "ST"
        assert SyntheticSceneSpec(target_ids=(0, 1)).category == "MT"
