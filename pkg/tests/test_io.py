"""Tensor file format, PLY, camera view JSON, partitions, and config
round-trips, plus atomicity of writes."""

import numpy as np
import pytest

from liftseg import ConfigError, FixtureIOError
from liftseg import fileio
from liftseg.config import PipelineConfig, load_config, save_config
from liftseg.superpoint import SuperpointPartition


class TestTensorFormat:
    @pytest.mark.parametrize("arr", [
        np.arange(12, dtype=np.float32).reshape(3, 4),
        np.arange(8, dtype=np.uint8).reshape(2, 2, 2),
        np.arange(-3, 3, dtype=np.int32),
        np.zeros((1,), dtype=np.float32),
    ])
    def test_round_trip(self, tmp_path, arr):
        path = tmp_path / "t.htns"
        fileio.save_tensor(path, arr)
        out = fileio.load_tensor(path)
        np.testing.assert_array_equal(out, arr)
        assert out.shape == arr.shape

    def test_float64_saved_as_float32(self, tmp_path):
        arr = np.array([1.5, 2.25, np.pi])
        fileio.save_tensor(tmp_path / "t.htns", arr)
        out = fileio.load_tensor(tmp_path / "t.htns")
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out, arr.astype(np.float32))

    def test_header_layout(self, tmp_path):
        fileio.save_tensor(tmp_path / "t.htns", np.zeros((2, 3), dtype=np.float32))
        raw = (tmp_path / "t.htns").read_bytes()
        assert raw[:4] == b"HTNS"
        assert raw[4] == 1  # version
        assert raw[5] == 1  # float32 code
        assert raw[6] == 2  # rank
        dims = np.frombuffer(raw[7:23], dtype="<u8")
        np.testing.assert_array_equal(dims, [2, 3])
        assert len(raw) == 23 + 2 * 3 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.htns"
        path.write_bytes(b"NOPE" + bytes(10))
        with pytest.raises(FixtureIOError):
            fileio.load_tensor(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.htns"
        path.write_bytes(b"HTNS" + bytes([9, 1, 0]))
        with pytest.raises(FixtureIOError):
            fileio.load_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.htns"
        fileio.save_tensor(path, np.zeros((4, 4), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FixtureIOError):
            fileio.load_tensor(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FixtureIOError):
            fileio.load_tensor(tmp_path / "absent.htns")

    def test_no_temp_files_left(self, tmp_path):
        fileio.save_tensor(tmp_path / "t.htns", np.zeros(3, dtype=np.float32))
        leftovers = [p for p in tmp_path.iterdir() if p.name != "t.htns"]
        assert leftovers == []


class TestPly:
    def test_round_trip_with_colors(self, tmp_path, rng):
        positions = rng.uniform(-1, 1, size=(50, 3))
        colors = rng.uniform(0, 1, size=(50, 3))
        fileio.save_ply(tmp_path / "c.ply", positions, colors)
        pos, col = fileio.load_ply(tmp_path / "c.ply")
        np.testing.assert_allclose(pos, positions.astype(np.float32), atol=1e-7)
        assert col is not None
        np.testing.assert_allclose(col, colors, atol=1.0 / 255.0)

    def test_round_trip_without_colors(self, tmp_path, rng):
        positions = rng.uniform(-1, 1, size=(10, 3))
        fileio.save_ply(tmp_path / "p.ply", positions)
        pos, col = fileio.load_ply(tmp_path / "p.ply")
        assert col is None
        np.testing.assert_allclose(pos, positions.astype(np.float32), atol=1e-7)

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_bytes(b"garbage")
        with pytest.raises(FixtureIOError):
            fileio.load_ply(path)

    def test_rejects_size_mismatch(self, tmp_path, rng):
        path = tmp_path / "x.ply"
        fileio.save_ply(path, rng.uniform(-1, 1, size=(5, 3)))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FixtureIOError):
            fileio.load_ply(path)


class TestViewAndPartition:
    def test_view_round_trip(self, tmp_path, rng):
        depth = rng.uniform(0, 3, size=(6, 9)).astype(np.float32)
        fileio.save_tensor(tmp_path / "d.htns", depth)
        k = np.array([[50.0, 0.0, 4.0], [0.0, 55.0, 3.0], [0.0, 0.0, 1.0]])
        fileio.save_view_json(tmp_path / "v.json", k, np.eye(4), 9, 6, "d.htns")
        view = fileio.load_view(tmp_path / "v.json")
        np.testing.assert_array_equal(view.intrinsics, k)
        np.testing.assert_array_equal(view.extrinsics, np.eye(4))
        assert (view.height, view.width) == (6, 9)
        np.testing.assert_allclose(view.depth, depth, atol=1e-7)

    def test_view_missing_field(self, tmp_path):
        fileio.write_json(tmp_path / "v.json", {"width": 2})
        with pytest.raises(FixtureIOError):
            fileio.load_view(tmp_path / "v.json")

    def test_partition_round_trip(self, tmp_path):
        assignment = np.array([0, 1, 1, 2, 0], dtype=np.int32)
        fileio.save_partition(tmp_path / "part.json", assignment, 3)
        part = fileio.load_partition(tmp_path / "part.json")
        assert isinstance(part, SuperpointPartition)
        np.testing.assert_array_equal(part.assignment, assignment)
        assert part.n_superpoints == 3


class TestConfig:
    def test_round_trip_identity(self, tmp_path):
        config = PipelineConfig(
            views=("views/a.json",), features=("views/a_f.htns",),
            masks=("views/a_m.json",), dim=32, heads=4, radius=0.2,
            enable_mlf=False, rng_seed=9)
        save_config(tmp_path / "config.json", config)
        loaded = load_config(tmp_path / "config.json", resolve=False)
        assert loaded == config

    def test_resolve_paths(self, tmp_path):
        config = PipelineConfig(views=("v.json",), features=("f.htns",),
                                masks=("m.json",))
        save_config(tmp_path / "config.json", config)
        loaded = load_config(tmp_path / "config.json")
        assert loaded.scene == str(tmp_path / "scene.ply")
        assert loaded.views[0] == str(tmp_path / "v.json")

    def test_unknown_key_rejected(self, tmp_path):
        doc = PipelineConfig(views=("v",), features=("f",), masks=("m",)).to_json_dict()
        doc["mystery"] = 1
        fileio.write_json(tmp_path / "config.json", doc)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "config.json")

    @pytest.mark.parametrize("bad", [
        {"dim": 10, "heads": 4},
        {"radius": 0.0},
        {"radius_instance": -0.2},
        {"relevance_pooling": "median"},
        {"theta_iou": 1.5},
        {"decoder_layers": 0},
        {"loss_weights": (1.0, 1.0)},
        {"views": (), "features": (), "masks": ()},
        {"views": ("a", "b")},
    ])
    def test_validation(self, bad):
        config = PipelineConfig(views=("v",), features=("f",), masks=("m",))
        with pytest.raises(ConfigError):
            config.replace(**bad).validate()

    def test_json_is_sorted_and_stable(self, tmp_path):
        config = PipelineConfig(views=("v",), features=("f",), masks=("m",))
        save_config(tmp_path / "a.json", config)
        save_config(tmp_path / "b.json", config)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
