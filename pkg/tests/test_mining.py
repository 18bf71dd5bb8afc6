import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmid import dataio
from nmid.mining import (
    MiningError,
    fit_pca,
    hardness_scores,
    kmeans,
    kmeans_inertia_trace,
    make_split,
    mine_manifest,
    project,
    reconstruct,
    select_components,
    silhouette,
)


def silhouette_oracle(Z, labels):
    """O(n^2) direct transcription of the definition."""
    n = len(Z)
    scores = np.zeros(n)
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            scores[i] = 0.0
            continue
        a = np.mean([np.linalg.norm(Z[i] - Z[j]) for j in same])
        b = min(
            np.mean([np.linalg.norm(Z[i] - Z[j])
                     for j in range(n) if labels[j] == c])
            for c in set(labels) if c != labels[i])
        scores[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return scores


class TestPca:
    def test_collinear_data(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=40)
        X = np.column_stack([t, 2 * t])
        model = fit_pca(X, 2)
        direction = np.array([1.0, 2.0]) / np.sqrt(5.0)
        assert np.allclose(np.abs(model.components[0] @ direction), 1.0, atol=1e-8)
        assert model.eigenvalues[1] <= 1e-8

    def test_projected_covariance_diagonal(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 6)) @ rng.normal(size=(6, 6))
        model = fit_pca(X, 4)
        Z = project(model, X)
        cov = np.cov(Z, rowvar=False)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() <= 1e-8
        assert np.allclose(np.diag(cov), model.eigenvalues[:4], atol=1e-8)

    def test_eigenvalues_match_dense_oracle(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 5))
        model = fit_pca(X, 5)
        oracle = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
        assert np.abs(model.eigenvalues - oracle).max() <= 1e-8

    def test_gram_side_matches_covariance_side(self):
        # D > M forces the Gram path; spectrum must agree with dense eigh
        rng = np.random.default_rng(3)
        X = rng.normal(size=(12, 30))
        model = fit_pca(X, 8)
        oracle = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1][:8]
        assert np.abs(model.eigenvalues - oracle).max() <= 1e-8
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(8)).max() <= 1e-8

    def test_orthonormal_and_variance_bound(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(30, 7))
        model = fit_pca(X, 7)
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(7)).max() <= 1e-8
        assert model.eigenvalues.sum() <= model.total_variance + 1e-8

    def test_project_mean_is_zero(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(15, 4))
        model = fit_pca(X, 3)
        assert np.allclose(project(model, X.mean(axis=0)), 0.0, atol=1e-10)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(25, 5))
        model = fit_pca(X, 5)
        Z = project(model, X)
        assert np.abs(reconstruct(model, Z) - X).max() <= 1e-8

    def test_single_component_collinear_reconstruction(self):
        rng = np.random.default_rng(7)
        t = rng.normal(size=30)
        X = np.column_stack([t, -3 * t, 0.5 * t])
        model = fit_pca(X, 1)
        Z = project(model, X)
        assert np.abs(reconstruct(model, Z) - X).max() <= 1e-8

    def test_degenerate_all_equal_flagged(self):
        X = np.ones((10, 4))
        model = fit_pca(X, 2)
        assert model.degenerate
        assert np.all(model.eigenvalues <= 1e-12)

    def test_bad_component_count(self):
        with pytest.raises(MiningError):
            fit_pca(np.eye(4), 5)

    def test_dim_mismatch_on_project(self):
        model = fit_pca(np.random.default_rng(0).normal(size=(10, 4)), 2)
        with pytest.raises(MiningError, match="mismatch"):
            project(model, np.zeros((3, 7)))

    def test_select_components_variance_target(self):
        rng = np.random.default_rng(8)
        basis, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        scales = np.array([10.0, 5.0, 1.0, 0.1, 0.01, 0.001])
        X = rng.normal(size=(200, 6)) * scales @ basis.T
        model = fit_pca(X, 6)
        n = select_components(model, variance_target=0.95, cap=50)
        ratios = model.explained_ratio()
        assert ratios[n - 1] >= 0.95
        assert n == 1 or ratios[n - 2] < 0.95


def _blobs(seed=0, per=20, centers=((0, 0), (40, 0), (0, 40)), sigma=1.0):
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for ci, (cx, cy) in enumerate(centers):
        points.append(rng.normal((cx, cy), sigma, size=(per, 2)))
        labels.extend([ci] * per)
    return np.vstack(points), np.array(labels)


class TestKmeans:
    def test_k_equals_m(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(6, 3))
        model = kmeans(Z, 6, seed=1)
        assert model.inertia <= 1e-12
        assert len(set(model.assignments.tolist())) == 6

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(80, 4))
        trace = kmeans_inertia_trace(Z, 5, seed=3)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_three_blob_purity(self):
        Z, truth = _blobs(seed=2)
        model = kmeans(Z, 3, seed=0)
        for c in range(3):
            members = truth[model.assignments == c]
            assert len(members) > 0
            assert (members == members[0]).all()  # pure cluster

    def test_fixed_point_reinit(self):
        Z, _ = _blobs(seed=3)
        model = kmeans(Z, 3, seed=5, tol=1e-12)
        again = kmeans(Z, 3, seed=99, init_centroids=model.centroids, tol=1e-12)
        assert np.array_equal(model.assignments, again.assignments)
        assert np.allclose(model.centroids, again.centroids, atol=0)
        assert again.inertia == model.inertia

    def test_inertia_matches_definition(self):
        rng = np.random.default_rng(4)
        Z = rng.normal(size=(40, 3))
        model = kmeans(Z, 4, seed=2)
        direct = sum(np.linalg.norm(Z[i] - model.centroids[model.assignments[i]]) ** 2
                     for i in range(len(Z)))
        assert abs(model.inertia - direct) <= 1e-8

    def test_k_larger_than_m_rejected(self):
        with pytest.raises(MiningError):
            kmeans(np.zeros((3, 2)), 4)

    def test_seeded_determinism(self):
        Z, _ = _blobs(seed=5, sigma=4.0)
        m1 = kmeans(Z, 3, seed=11)
        m2 = kmeans(Z, 3, seed=11)
        assert np.array_equal(m1.assignments, m2.assignments)
        assert np.array_equal(m1.centroids, m2.centroids)


class TestSilhouette:
    def test_two_tight_far_pairs(self):
        Z = np.array([[0.0, 0], [0.1, 0], [100, 0], [100.1, 0]])
        scores = silhouette(Z, np.array([0, 0, 1, 1]))
        assert np.all(scores > 0.95)

    def test_singleton_scores_zero(self):
        Z = np.array([[0.0, 0], [0.2, 0], [50.0, 0]])
        scores = silhouette(Z, np.array([0, 0, 1]))
        assert scores[2] == 0.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(6)
        Z = rng.normal(size=(12, 3))
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2])
        assert np.abs(silhouette(Z, labels)
                      - silhouette_oracle(Z, labels)).max() <= 1e-10

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_range_and_oracle_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 30))
        Z = rng.normal(size=(n, 2))
        labels = rng.integers(0, 3, size=n)
        if len(set(labels.tolist())) < 2:
            labels[0] = (labels[1] + 1) % 3
        scores = silhouette(Z, labels)
        assert np.all(scores >= -1.0 - 1e-12) and np.all(scores <= 1.0 + 1e-12)
        assert np.abs(scores - silhouette_oracle(Z, labels)).max() <= 1e-10

    def test_single_cluster_rejected(self):
        with pytest.raises(MiningError):
            silhouette(np.zeros((4, 2)), np.zeros(4, dtype=int))


class TestHardness:
    def test_extremes(self):
        distances = np.array([0.1, 0.5, 0.9])
        silhouettes = np.array([0.9, 0.5, -0.2])
        h = hardness_scores(distances, silhouettes)
        assert h[2] == 1.0  # max distance, min silhouette
        assert h[0] == 0.0

    def test_full_ties(self):
        h = hardness_scores(np.full(5, 2.0), np.full(5, 0.3))
        assert np.allclose(h, 0.5)

    def test_five_point_hand_case(self):
        distances = np.array([3.0, 1.0, 4.0, 1.0, 2.0])
        silhouettes = np.array([0.2, 0.8, -0.5, 0.9, 0.2])
        # ranks asc distance (ties averaged): [3, 0.5, 4, 0.5, 2]
        # ranks desc silhouette: sil ranks asc = [1.5, 3, 0, 4, 1.5] -> desc = [2.5, 1, 4, 0, 2.5]
        expected = (np.array([3, 0.5, 4, 0.5, 2])
                    + np.array([2.5, 1, 4, 0, 2.5])) / 8.0
        assert np.allclose(hardness_scores(distances, silhouettes), expected)

    def test_range(self):
        rng = np.random.default_rng(0)
        h = hardness_scores(rng.random(50), rng.random(50))
        assert h.min() >= 0.0 and h.max() <= 1.0


class TestMakeSplit:
    def _manifest(self, synthetic_dataset):
        _, manifest = synthetic_dataset
        return manifest

    def test_ten_by_twenty_exact_counts(self, synthetic_dataset):
        manifest = self._manifest(synthetic_dataset)
        rng = np.random.default_rng(0)
        hardness = {r.id: float(rng.random()) for r in manifest.records}
        split = make_split(manifest, hardness, fraction=0.10)
        for label in manifest.label_set:
            ids = [r.id for r in manifest.records if r.label == label]
            test_ids = [i for i in ids if split.splits[i] == "test"]
            assert len(test_ids) == 2  # ceil(0.1 * 20)
            # and they are the per-class hardest
            hardest = sorted(ids, key=lambda i: (-hardness[i], i))[:2]
            assert sorted(test_ids) == sorted(hardest)

    def test_fraction_zero_all_train(self, synthetic_dataset):
        manifest = self._manifest(synthetic_dataset)
        hardness = {r.id: 0.5 for r in manifest.records}
        split = make_split(manifest, hardness, fraction=0.0)
        assert all(v == "train" for v in split.splits.values())

    def test_mean_hardness_direction(self, synthetic_dataset):
        manifest = self._manifest(synthetic_dataset)
        rng = np.random.default_rng(1)
        hardness = {r.id: float(rng.random()) for r in manifest.records}
        split = make_split(manifest, hardness, fraction=0.10)
        test_h = [hardness[i] for i, s in split.splits.items() if s == "test"]
        train_h = [hardness[i] for i, s in split.splits.items() if s == "train"]
        assert np.mean(test_h) > np.mean(train_h)

    def test_determinism(self, synthetic_dataset):
        manifest = self._manifest(synthetic_dataset)
        hardness = {r.id: float(i % 7) for i, r in enumerate(manifest.records)}
        s1 = make_split(manifest, hardness, 0.1)
        s2 = make_split(manifest, hardness, 0.1)
        assert s1.splits == s2.splits

    def test_missing_score_rejected(self, synthetic_dataset):
        manifest = self._manifest(synthetic_dataset)
        with pytest.raises(MiningError, match="missing"):
            make_split(manifest, {}, 0.1)


class TestMineManifest:
    def test_end_to_end_on_synthetic(self, synthetic_dataset):
        _, manifest = synthetic_dataset
        pre = dataio.PreprocessConfig(32, 32, mode="mining-zscore")
        rows = [dataio.preprocess_mining(dataio.decode_image(r.path), pre)[0]
                for r in manifest.records]
        result = mine_manifest(manifest, np.vstack(rows),
                               [r.id for r in manifest.records],
                               clusters=10, fraction=0.10, seed=0)
        mined = result.manifest
        assert sum(1 for r in mined.records if r.split == "test") == 20
        assert sum(1 for r in mined.records if r.split == "train") == 180
        assert all(r.hardness is not None for r in mined.records)
        test_h = [r.hardness for r in mined.records if r.split == "test"]
        train_h = [r.hardness for r in mined.records if r.split == "train"]
        assert np.mean(test_h) > np.mean(train_h)
        assert result.n_components <= 50
