"""Forward-pass tests: adapter, attention, fusion, gating, selection,
refinement, decoding, and mask assembly, each against its brute-force
reference."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from liftseg import ConfigError, ShapeError
from liftseg import fusion, oracle
from liftseg.fusion import ParameterBundle, QuerySet, TextEmbedding, tensor_shapes
from liftseg.superpoint import SuperpointPartition

from conftest import small_bundle


def _identityish_bundle(dim=4, heads=2, layers=1):
    """All-zero bundle with identity adapter/select maps for hand checks."""
    tensors = {name: np.zeros(shape)
               for name, shape in tensor_shapes(dim, dim, layers).items()}
    eye = np.eye(dim)
    for name in ("adapter.w1", "adapter.w2", "select.w_vis", "select.w_txt"):
        tensors[name] = eye.copy()
    return ParameterBundle(input_dim=dim, dim=dim, heads=heads,
                           decoder_layers=layers, rng_seed=0, tensors=tensors)


class TestParameterBundle:
    def test_seeded_is_bit_reproducible(self):
        a = ParameterBundle.seeded(6, 8, 2, 2, 11)
        b = ParameterBundle.seeded(6, 8, 2, 2, 11)
        for name in a.tensors:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seeds_differ(self):
        a = ParameterBundle.seeded(6, 8, 2, 2, 1)
        b = ParameterBundle.seeded(6, 8, 2, 2, 2)
        assert any(not np.array_equal(a[n], b[n]) for n in a.tensors)

    def test_shape_validation(self):
        tensors = {name: np.zeros(shape)
                   for name, shape in tensor_shapes(4, 4, 1).items()}
        tensors["mask.w"] = np.zeros((4, 5))
        with pytest.raises(ShapeError):
            ParameterBundle(input_dim=4, dim=4, heads=2, decoder_layers=1,
                            rng_seed=0, tensors=tensors)

    def test_missing_tensor(self):
        tensors = {name: np.zeros(shape)
                   for name, shape in tensor_shapes(4, 4, 1).items()}
        tensors.pop("conf.w")
        with pytest.raises(ConfigError):
            ParameterBundle(input_dim=4, dim=4, heads=2, decoder_layers=1,
                            rng_seed=0, tensors=tensors)

    def test_heads_divide_dim(self):
        with pytest.raises(ConfigError):
            ParameterBundle.seeded(4, 6, 4, 1, 0)

    def test_save_load_round_trip(self, tmp_path):
        bundle = small_bundle()
        bundle.save(tmp_path / "params")
        loaded = ParameterBundle.load(tmp_path / "params")
        assert (loaded.input_dim, loaded.dim, loaded.heads,
                loaded.decoder_layers, loaded.rng_seed) == (6, 8, 2, 2, 3)
        for name in bundle.tensors:
            np.testing.assert_array_equal(
                loaded[name], bundle[name].astype(np.float32).astype(np.float64))


class TestMultiHeadAttention:
    def test_single_key_ignores_scores(self, rng):
        bundle = small_bundle()
        params = bundle.attention("fuse.attn")
        q = rng.standard_normal((5, 8))
        k = rng.standard_normal((1, 8))
        v = rng.standard_normal((1, 8))
        out = fusion.multi_head_attention(q, k, v, params, heads=2)
        projected = (v @ params["wv"] + params["bv"]) @ params["wo"] + params["bo"]
        for row in out:
            np.testing.assert_allclose(row, projected[0], atol=1e-12)

    def test_identical_keys_give_uniform_weights(self, rng):
        bundle = small_bundle()
        params = bundle.attention("fuse.attn")
        q = rng.standard_normal((3, 8))
        k = np.tile(rng.standard_normal(8), (6, 1))
        v = rng.standard_normal((6, 8))
        _, weights = fusion.multi_head_attention(q, k, v, params, heads=2,
                                                 return_weights=True)
        np.testing.assert_allclose(weights, np.full_like(weights, 1.0 / 6.0),
                                   atol=1e-12)

    def test_matches_reference(self, rng):
        bundle = small_bundle(seed=9)
        params = bundle.attention("refine.attn")
        q = rng.standard_normal((4, 8))
        k = rng.standard_normal((7, 8))
        v = rng.standard_normal((7, 8))
        got = fusion.multi_head_attention(q, k, v, params, heads=4)
        ref = oracle.attention_ref(q, k, v, params, heads=4)
        np.testing.assert_allclose(got, ref, atol=1e-5)

    def test_rows_sum_to_one(self, rng):
        bundle = small_bundle(seed=5)
        params = bundle.attention("fuse.attn")
        q = rng.standard_normal((6, 8)) * 5
        kv = rng.standard_normal((9, 8)) * 5
        _, weights = fusion.multi_head_attention(q, kv, kv, params, heads=2,
                                                 return_weights=True)
        np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)
        assert weights.min() >= 0.0 and weights.max() <= 1.0

    def test_kv_permutation_invariance(self, rng):
        bundle = small_bundle(seed=8)
        params = bundle.attention("fuse.attn")
        q = rng.standard_normal((5, 8))
        kv = rng.standard_normal((9, 8))
        perm = rng.permutation(9)
        a = fusion.multi_head_attention(q, kv, kv, params, heads=2)
        b = fusion.multi_head_attention(q, kv[perm], kv[perm], params, heads=2)
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_heads_must_divide(self, rng):
        params = small_bundle().attention("fuse.attn")
        with pytest.raises(ConfigError):
            fusion.multi_head_attention(np.zeros((2, 8)), np.zeros((2, 8)),
                                        np.zeros((2, 8)), params, heads=3)


class TestAdapter:
    def test_zero_parameters(self):
        bundle = ParameterBundle.zeros(6, 8, 2, 1)
        out = fusion.adapter(np.ones((3, 6)), bundle)
        np.testing.assert_array_equal(out, np.zeros((3, 8)))

    def test_identity_on_nonnegative(self, rng):
        bundle = _identityish_bundle()
        x = rng.uniform(0.0, 2.0, size=(5, 4))
        np.testing.assert_allclose(fusion.adapter(x, bundle), x, atol=1e-12)

    def test_matches_matmul_oracle(self, rng):
        bundle = small_bundle(seed=17)
        x = rng.standard_normal((4, 6))
        np.testing.assert_allclose(fusion.adapter(x, bundle),
                                   oracle.adapter_ref(x, bundle), atol=1e-5)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            fusion.adapter(np.zeros((3, 5)), small_bundle())


class TestIntraModalFuse:
    def test_zero_instance_branch_residual_only(self, rng):
        bundle = small_bundle(seed=21)
        dense = rng.standard_normal((4, 8))
        out = fusion.intra_modal_fuse(dense, np.zeros((4, 8)), bundle)
        # zero biases in the seeded bundle make the processed instance branch,
        # hence values and attention output, exactly zero
        dense_q = np.maximum(dense @ bundle["fuse.dense.w1"], 0.0) @ bundle["fuse.dense.w2"]
        np.testing.assert_allclose(out, dense_q, atol=1e-12)

    def test_deterministic(self, rng):
        bundle = small_bundle(seed=2)
        x = rng.standard_normal((5, 8))
        a = fusion.intra_modal_fuse(x, x, bundle)
        b = fusion.intra_modal_fuse(x, x, bundle)
        np.testing.assert_array_equal(a, b)
        assert np.isfinite(a).all()

    def test_matches_composed_oracle(self, rng):
        bundle = small_bundle(seed=13)
        dense = rng.standard_normal((5, 8))
        inst = rng.standard_normal((5, 8))
        got = fusion.intra_modal_fuse(dense, inst, bundle)
        ref = oracle.intra_modal_fuse_ref(dense, inst, bundle)
        np.testing.assert_allclose(got, ref, atol=1e-5)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            fusion.intra_modal_fuse(np.zeros((3, 8)), np.zeros((4, 8)),
                                    small_bundle())


class TestCrossModalGate:
    def test_zero_gate_averages(self, rng):
        bundle = ParameterBundle.zeros(6, 8, 2, 1)
        v2 = rng.standard_normal((4, 8))
        v3 = rng.standard_normal((4, 8))
        fused, w2, w3 = fusion.cross_modal_gate(v2, v3, bundle)
        np.testing.assert_allclose(w2, 0.5)
        np.testing.assert_allclose(w3, 0.5)
        np.testing.assert_allclose(fused, 0.5 * (v2 + v3), atol=1e-12)

    def test_identical_inputs_pass_through(self, rng):
        bundle = small_bundle(seed=4)
        x = rng.standard_normal((6, 8))
        fused, _, _ = fusion.cross_modal_gate(x, x, bundle)
        np.testing.assert_allclose(fused, x, atol=1e-9)

    def test_matches_scalar_oracle(self, rng):
        bundle = small_bundle(seed=30)
        v2 = rng.standard_normal((5, 8))
        v3 = rng.standard_normal((5, 8))
        fused, w2, w3 = fusion.cross_modal_gate(v2, v3, bundle)
        ref_fused, ref_w2, ref_w3 = oracle.cross_modal_gate_ref(v2, v3, bundle)
        np.testing.assert_allclose(fused, ref_fused, atol=1e-6)
        np.testing.assert_allclose(w2, ref_w2, atol=1e-6)
        np.testing.assert_allclose(w3, ref_w3, atol=1e-6)
        np.testing.assert_allclose(w2 + w3, 1.0, atol=1e-6)

    @given(st.integers(0, 10_000))
    def test_convexity_property(self, case):
        rng = np.random.default_rng(case)
        bundle = small_bundle(seed=case % 7)
        v2 = rng.standard_normal((3, 8)) * 3
        v3 = rng.standard_normal((3, 8)) * 3
        fused, w2, w3 = fusion.cross_modal_gate(v2, v3, bundle)
        np.testing.assert_allclose(w2 + w3, 1.0, atol=1e-6)
        lo = np.minimum(v2, v3)
        hi = np.maximum(v2, v3)
        assert np.all(fused >= lo - 1e-9)
        assert np.all(fused <= hi + 1e-9)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            fusion.cross_modal_gate(np.zeros((2, 8)), np.zeros((3, 8)),
                                    small_bundle())


def _spread_centroids(n):
    out = np.zeros((n, 3))
    out[:, 0] = np.arange(n)
    return out


class TestSelectQueries:
    def test_no_pruning_when_m_equals_seeds(self, rng):
        bundle = _identityish_bundle()
        v = rng.uniform(0, 1, size=(5, 4))
        text = TextEmbedding(tokens=rng.uniform(0, 1, size=(2, 4)))
        qs = fusion.select_queries(v, _spread_centroids(5), text, bundle, 5, 5)
        assert sorted(qs.superpoint_ids.tolist()) == [0, 1, 2, 3, 4]
        assert np.all(np.diff(qs.relevance) <= 1e-12)

    def test_dot_product_ranking(self):
        bundle = _identityish_bundle()
        v = np.array([[1.0, 0.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0, 0.0],
                      [0.0, 0.0, 1.0, 0.0]])
        text = TextEmbedding(tokens=np.array([[0.0, 1.0, 0.0, 0.0]]))
        qs = fusion.select_queries(v, _spread_centroids(3), text, bundle, 3, 1)
        assert qs.superpoint_ids.tolist() == [1]
        np.testing.assert_allclose(qs.embeddings[0], v[1])

    def test_matches_exhaustive_oracle(self, rng):
        bundle = small_bundle(seed=19)
        v = rng.standard_normal((12, 8))
        cents = rng.uniform(-1, 1, size=(12, 3))
        text = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        for pooling in ("max", "mean"):
            got = fusion.select_queries(v, cents, text, bundle, 8, 4, pooling)
            ref = oracle.select_queries_ref(v, cents, text, bundle, 8, 4, pooling)
            np.testing.assert_array_equal(got.superpoint_ids, ref.superpoint_ids)
            np.testing.assert_allclose(got.relevance, ref.relevance, atol=1e-9)

    def test_bad_pooling_mode(self, rng):
        bundle = small_bundle()
        v = rng.standard_normal((5, 8))
        text = TextEmbedding(tokens=rng.standard_normal((1, 8)))
        with pytest.raises(ConfigError):
            fusion.select_queries(v, _spread_centroids(5), text, bundle, 5, 2,
                                  pooling="median")

    def test_m_larger_than_seeds(self, rng):
        bundle = small_bundle()
        v = rng.standard_normal((5, 8))
        text = TextEmbedding(tokens=rng.standard_normal((1, 8)))
        with pytest.raises(ConfigError):
            fusion.select_queries(v, _spread_centroids(5), text, bundle, 3, 4)

    def test_seeds_larger_than_superpoints(self, rng):
        bundle = small_bundle()
        v = rng.standard_normal((5, 8))
        text = TextEmbedding(tokens=rng.standard_normal((1, 8)))
        with pytest.raises(ConfigError):
            fusion.select_queries(v, _spread_centroids(5), text, bundle, 6, 2)

    def test_ids_distinct_and_sorted_relevance(self, rng):
        bundle = small_bundle(seed=23)
        v = rng.standard_normal((10, 8))
        text = TextEmbedding(tokens=rng.standard_normal((2, 8)))
        qs = fusion.select_queries(v, _spread_centroids(10), text, bundle, 10, 6)
        assert len(set(qs.superpoint_ids.tolist())) == 6
        assert np.all(np.diff(qs.relevance) <= 1e-12)


class TestInstanceRefine:
    def _queries(self, rng):
        emb = rng.standard_normal((3, 8))
        return QuerySet(embeddings=emb, superpoint_ids=np.array([4, 1, 7]),
                        relevance=np.array([0.9, 0.5, 0.1]))

    def test_empty_bank_is_identity(self, rng):
        qs = self._queries(rng)
        assert fusion.instance_refine(qs, [], small_bundle()) is qs

    def test_single_bank_entry_shifts_uniformly(self, rng):
        bundle = small_bundle(seed=31)
        qs = self._queries(rng)
        bank = [rng.standard_normal(8)]
        out = fusion.instance_refine(qs, bank, bundle)
        shifts = out.embeddings - qs.embeddings
        for row in shifts[1:]:
            np.testing.assert_allclose(row, shifts[0], atol=1e-12)

    def test_matches_oracle(self, rng):
        bundle = small_bundle(seed=37)
        qs = self._queries(rng)
        bank = [rng.standard_normal(8) for _ in range(5)]
        got = fusion.instance_refine(qs, bank, bundle)
        ref = oracle.instance_refine_ref(qs, bank, bundle)
        np.testing.assert_allclose(got.embeddings, ref.embeddings, atol=1e-5)
        np.testing.assert_array_equal(got.superpoint_ids, qs.superpoint_ids)


class TestDecode:
    def _queries(self, rng, dim=8):
        emb = rng.standard_normal((3, dim))
        return QuerySet(embeddings=emb, superpoint_ids=np.array([0, 2, 5]),
                        relevance=np.array([1.0, 0.5, 0.2]))

    def test_zero_parameters_constant_network(self, rng):
        bundle = ParameterBundle.zeros(6, 8, 2, 2)
        qs = self._queries(rng)
        v = rng.standard_normal((6, 8))
        logits, conf = fusion.decode(qs, v, bundle, layers=2)
        assert np.all(logits == logits[0, 0])
        np.testing.assert_array_equal(conf, np.full(3, 0.5))

    def test_output_shapes(self, rng):
        bundle = small_bundle(seed=41)
        qs = self._queries(rng)
        v = rng.standard_normal((7, 8))
        logits, conf = fusion.decode(qs, v, bundle, layers=2)
        assert logits.shape == (3, 7)
        assert conf.shape == (3,)
        assert np.isfinite(logits).all()
        assert np.all((conf >= 0) & (conf <= 1))

    def test_single_layer_matches_oracle(self, rng):
        bundle = small_bundle(seed=43)
        qs = self._queries(rng)
        v = rng.standard_normal((6, 8))
        got_logits, got_conf = fusion.decode(qs, v, bundle, layers=1)
        ref_logits, ref_conf = oracle.decode_ref(qs, v, bundle, layers=1)
        np.testing.assert_allclose(got_logits, ref_logits, atol=1e-4)
        np.testing.assert_allclose(got_conf, ref_conf, atol=1e-6)

    def test_layer_bounds(self, rng):
        bundle = small_bundle()
        qs = self._queries(rng)
        v = rng.standard_normal((6, 8))
        with pytest.raises(ConfigError):
            fusion.decode(qs, v, bundle, layers=0)
        with pytest.raises(ConfigError):
            fusion.decode(qs, v, bundle, layers=3)


class TestPredictMask:
    def _partition(self):
        return SuperpointPartition(assignment=np.array([0, 0, 1, 1, 2]),
                                   n_superpoints=3)

    def test_all_low_confidence_empty(self):
        logits = np.full((2, 3), 10.0)
        conf = np.array([0.1, 0.2])
        out = fusion.predict_mask(logits, conf, self._partition(), 0.0, 0.5)
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_single_superpoint(self):
        logits = np.array([[5.0, -5.0, -5.0]])
        out = fusion.predict_mask(logits, np.array([0.9]), self._partition(), 0.0, 0.5)
        np.testing.assert_array_equal(out, [1, 1, 0, 0, 0])

    def test_union_matches_set_oracle(self, rng):
        part = self._partition()
        logits = rng.standard_normal((4, 3))
        conf = rng.random(4)
        got = fusion.predict_mask(logits, conf, part, 0.2, 0.5)
        ref = oracle.predict_mask_ref(logits, conf, part, 0.2, 0.5)
        np.testing.assert_array_equal(got, ref)

    def test_overlapping_queries_union(self):
        part = self._partition()
        logits = np.array([[5.0, 5.0, -5.0], [-5.0, 5.0, 5.0]])
        conf = np.array([0.9, 0.9])
        out = fusion.predict_mask(logits, conf, part, 0.0, 0.5)
        np.testing.assert_array_equal(out, [1, 1, 1, 1, 1])

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            fusion.predict_mask(np.zeros((1, 3)), np.zeros(1), self._partition(),
                                np.nan, 0.5)


class TestForwardStability:
    def test_bit_stable_forward(self, rng):
        bundle = small_bundle(seed=51)
        v2 = rng.standard_normal((6, 8))
        v3 = rng.standard_normal((6, 8))
        cents = rng.uniform(-1, 1, size=(6, 3))
        text = TextEmbedding(tokens=rng.standard_normal((2, 8)))

        def forward():
            fused, _, _ = fusion.cross_modal_gate(
                fusion.intra_modal_fuse(v2, v3, bundle), v3, bundle)
            qs = fusion.select_queries(fused, cents, text, bundle, 6, 3)
            return fusion.decode(qs, fused, bundle, layers=2)

        logits_a, conf_a = forward()
        logits_b, conf_b = forward()
        np.testing.assert_array_equal(logits_a, logits_b)
        np.testing.assert_array_equal(conf_a, conf_b)
