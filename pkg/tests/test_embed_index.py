import numpy as np
import pytest

from conftest import all_train, tiny_encoder_config
from nmid import dataio, encoder
from nmid.embed_index import (
    EmbeddingStore,
    IndexError_,
    build_index,
    cosine,
    sample_random,
    top_k_similar,
)
from nmid.encoder import EncoderCheckpoint


def _store(m=20, d=6, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"img_{i:03d}" for i in range(m)]
    return EmbeddingStore(ids=ids, matrix=rng.normal(size=(m, d)))


class TestCosine:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=8)
        assert abs(cosine(z, z) - 1.0) <= 1e-12

    def test_orthogonal_basis(self):
        assert cosine(np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == 0.0

    def test_hand_value(self):
        # dot=32, |a|=sqrt(14), |b|=sqrt(77): 32/sqrt(1078)
        value = cosine(np.array([1.0, 2, 3]), np.array([4.0, 5, 6]))
        assert abs(value - 32.0 / np.sqrt(1078.0)) <= 1e-12
        assert abs(value - 0.9746318461970762) <= 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(IndexError_):
            cosine(np.zeros(3), np.ones(3))


class TestTopK:
    def test_k_zero_empty(self):
        assert top_k_similar(_store(), np.ones(6), 0) == []

    def test_stored_row_ranks_first(self):
        store = _store(seed=1)
        query = store.matrix[7].copy()
        top = top_k_similar(store, query, 3)
        assert top[0].id == "img_007"
        assert abs(top[0].score - 1.0) <= 1e-12

    def test_matches_full_scan_oracle(self):
        store = _store(m=100, d=8, seed=2)
        rng = np.random.default_rng(3)
        query = rng.normal(size=8)
        top = top_k_similar(store, query, 7)
        # brute-force oracle: full scan + sort
        sims = [(cosine(query, store.matrix[i]), store.ids[i]) for i in range(100)]
        expected = [i for _, i in sorted(sims, key=lambda p: (-p[0], p[1]))[:7]]
        assert [n.id for n in top] == expected

    def test_euclidean_matches_oracle(self):
        store = _store(m=50, d=5, seed=4)
        query = np.random.default_rng(5).normal(size=5)
        top = top_k_similar(store, query, 6, metric="euclidean")
        dists = [(np.linalg.norm(store.matrix[i] - query), store.ids[i])
                 for i in range(50)]
        expected = [i for _, i in sorted(dists)[:6]]
        assert [n.id for n in top] == expected
        scores = [n.score for n in top]
        assert scores == sorted(scores)

    def test_prefix_property(self):
        store = _store(m=30, seed=6)
        query = np.random.default_rng(7).normal(size=6)
        full = top_k_similar(store, query, 30)
        for k in (1, 5, 12):
            assert [n.id for n in top_k_similar(store, query, k)] == \
                [n.id for n in full[:k]]

    def test_k_exceeding_m_returns_all(self):
        store = _store(m=5)
        assert len(top_k_similar(store, np.ones(6), 99)) == 5

    def test_unit_norm_rankings_coincide(self):
        store = _store(m=40, d=4, seed=8)
        unit = EmbeddingStore(
            ids=store.ids,
            matrix=store.matrix / np.linalg.norm(store.matrix, axis=1, keepdims=True))
        q = np.random.default_rng(9).normal(size=4)
        q /= np.linalg.norm(q)
        by_cos = [n.id for n in top_k_similar(unit, q, 40, "cosine")]
        by_euc = [n.id for n in top_k_similar(unit, q, 40, "euclidean")]
        assert by_cos == by_euc

    def test_tie_break_by_id(self):
        matrix = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        store = EmbeddingStore(ids=["b", "a", "c"], matrix=matrix)
        top = top_k_similar(store, np.array([1.0, 0.0]), 2)
        assert [n.id for n in top] == ["a", "b"]

    def test_zero_query_rejected(self):
        with pytest.raises(IndexError_):
            top_k_similar(_store(), np.zeros(6), 3)


class TestRandomSampler:
    def test_k_equals_m_is_permutation(self):
        store = _store(m=10)
        picks = sample_random(store, 10, seed=3)
        assert sorted(n.id for n in picks) == sorted(store.ids)

    def test_same_seed_identical(self):
        store = _store(m=15)
        a = [n.id for n in sample_random(store, 5, seed=42)]
        b = [n.id for n in sample_random(store, 5, seed=42)]
        assert a == b

    def test_uniformity_three_sigma(self):
        store = _store(m=10)
        counts = {i: 0 for i in store.ids}
        for seed in range(10_000):
            counts[sample_random(store, 1, seed=seed)[0].id] += 1
        expected = 1000.0
        sigma = np.sqrt(10_000 * 0.1 * 0.9)
        for c in counts.values():
            assert abs(c - expected) <= 3 * sigma

    def test_k_too_large_rejected(self):
        with pytest.raises(IndexError_):
            sample_random(_store(m=4), 5, seed=0)


class TestStoreIO:
    def test_save_load_round_trip(self, tmp_path):
        store = _store(m=12, d=5, seed=10)
        path = store.save(tmp_path / "store.bin")
        loaded = EmbeddingStore.load(path)
        assert loaded.ids == store.ids
        # payload is f32 by contract; equality at f32 resolution
        assert np.allclose(loaded.matrix, store.matrix, atol=1e-6)
        assert loaded.metric == "cosine"

    def test_norm_cache_consistency(self):
        store = _store(m=9, seed=11)
        recomputed = np.linalg.norm(store.matrix, axis=1)
        assert np.abs(store.norms - recomputed).max() <= 1e-10

    def test_truncated_payload_rejected(self, tmp_path):
        store = _store(m=6)
        path = store.save(tmp_path / "store.bin")
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(IndexError_, match="truncated"):
            EmbeddingStore.load(path)


@pytest.fixture(scope="module")
def small_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("idx")
    manifest = all_train(dataio.generate_synthetic_dataset(root, 3, 10, 16, seed=4))
    cfg = tiny_encoder_config()
    checkpoint = EncoderCheckpoint(params=encoder.init_params(cfg), config=cfg)
    return manifest, checkpoint


class TestBuildIndex:
    def test_row_count_and_dim(self, small_setup):
        manifest, checkpoint = small_setup
        store = build_index(manifest, checkpoint)
        assert len(store) == 30
        assert store.dim == checkpoint.config.embed_dim

    def test_rows_equal_forward_exactly(self, small_setup):
        manifest, checkpoint = small_setup
        store = build_index(manifest, checkpoint)
        cfg = checkpoint.config
        pre = dataio.PreprocessConfig(cfg.image_height, cfg.image_width,
                                      mode="encoder-signed")
        rec = manifest.records[5]
        img = dataio.ensure_channels(
            dataio.preprocess_encoder(dataio.decode_image(rec.path), pre),
            cfg.channels)
        direct = encoder.forward(img, checkpoint.params, cfg)
        assert np.array_equal(store.row(rec.id), direct)

    def test_rebuild_bit_identical(self, small_setup, tmp_path):
        manifest, checkpoint = small_setup
        p1 = build_index(manifest, checkpoint).save(tmp_path / "a.bin")
        p2 = build_index(manifest, checkpoint).save(tmp_path / "b.bin")
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_split_rejected(self, small_setup):
        manifest, checkpoint = small_setup
        with pytest.raises(IndexError_):
            build_index(manifest, checkpoint, split="test")
