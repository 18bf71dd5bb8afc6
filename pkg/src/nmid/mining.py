"""Hard-example mining: PCA, K-Means, silhouette and the hard test split.

Feature vectors (z-scored flattened images) are reduced with PCA, grouped
with seeded k-means++ / Lloyd iterations, and scored: a large distance to
the assigned centroid and a low silhouette both mark an image as hard to
classify. Per-class, the hardest fraction becomes the fixed test split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dataio import DatasetManifest


class MiningError(Exception):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray         # (D,)
    components: np.ndarray   # (n_components, D), orthonormal rows
    eigenvalues: np.ndarray  # (n_components,), non-increasing
    total_variance: float    # trace of the covariance matrix
    degenerate: bool = False

    def explained_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.eigenvalues)
        return np.cumsum(self.eigenvalues) / self.total_variance


@dataclass
class ClusterModel:
    centroids: np.ndarray    # (K, D)
    assignments: np.ndarray  # (M,) ints in [0, K)
    inertia: float
    iterations: int


@dataclass
class HardnessReport:
    centroid_distance: np.ndarray
    silhouette: np.ndarray
    hardness: np.ndarray


@dataclass
class SplitAssignment:
    splits: dict[str, str]  # image id -> "train" | "test"
    test_fraction: float


def fit_pca(X: np.ndarray, n_components: int) -> PcaModel:
    """Eigendecomposition of the sample covariance (divide by M-1).

    Solves on the covariance side when D <= M, otherwise on the Gram side
    (same nonzero spectrum, components recovered by back-projection).
    Component sign convention: the largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    m, d = X.shape
    if m < 2:
        raise MiningError("PCA requires at least two samples")
    if not (1 <= n_components <= min(m, d)):
        raise MiningError(f"n_components must be in [1, {min(m, d)}]")
    mean = X.mean(axis=0)
    centered = X - mean
    total_variance = float((centered * centered).sum() / (m - 1))

    if d <= m:
        cov = centered.T @ centered / (m - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:n_components]
        eigenvalues = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / (m - 1)
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:n_components]
        eigenvalues = eigvals[order]
        rank_floor = max(eigvals.max(), 0.0) * 1e-12
        rows = []
        for lam, vec in zip(eigenvalues, eigvecs[:, order].T):
            if lam <= rank_floor:
                raise MiningError(
                    "n_components exceeds the numerical rank of the data")
            w = centered.T @ vec
            rows.append(w / np.linalg.norm(w))
        components = np.vstack(rows)

    eigenvalues = np.clip(eigenvalues, 0.0, None)
    # sign convention for reproducibility
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    degenerate = total_variance <= 1e-12
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues,
                    total_variance=total_variance, degenerate=degenerate)


def select_components(model: PcaModel, variance_target: float = 0.95,
                      cap: int = 50) -> int:
    """Smallest component count explaining >= variance_target, capped."""
    ratios = model.explained_ratio()
    limit = min(cap, len(ratios))
    for i in range(limit):
        if ratios[i] >= variance_target:
            return i + 1
    return limit


def project(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.mean.shape[0]:
        raise MiningError(
            f"dimension mismatch: data has {X.shape[-1]} columns, "
            f"model expects {model.mean.shape[0]}")
    return (X - model.mean) @ model.components.T


def reconstruct(model: PcaModel, Z: np.ndarray) -> np.ndarray:
    return np.asarray(Z) @ model.components + model.mean


def _squared_distances(Z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (M,K) squared Euclidean distances via the expanded form
    zz = (Z * Z).sum(axis=1)[:, None]
    cc = (centroids * centroids).sum(axis=1)[None, :]
    d2 = zz + cc - 2.0 * Z @ centroids.T
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = Z.shape[0]
    chosen = [int(rng.integers(0, m))]
    d2 = ((Z - Z[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at distance zero: pick any unchosen point
            remaining = [i for i in range(m) if i not in chosen]
            nxt = int(rng.choice(remaining))
        else:
            nxt = int(rng.choice(m, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((Z - Z[nxt]) ** 2).sum(axis=1))
    return Z[chosen].copy()


def kmeans(Z: np.ndarray, k: int, seed: int = 0, max_iters: int = 300,
           tol: float = 1e-4, init_centroids: np.ndarray | None = None) -> ClusterModel:
    """Seeded k-means++ init and Lloyd iterations.

    Assignment ties break toward the lowest cluster id; an emptied cluster
    is re-seeded to the point farthest from its assigned centroid.
    Stops when the largest centroid shift drops below ``tol``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    m = Z.shape[0]
    if k > m:
        raise MiningError(f"cannot form {k} clusters from {m} points")
    rng = np.random.default_rng(seed)
    centroids = (np.asarray(init_centroids, dtype=np.float64).copy()
                 if init_centroids is not None else _kmeans_pp_init(Z, k, rng))

    assignments = np.zeros(m, dtype=int)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = _squared_distances(Z, centroids)
        assignments = d2.argmin(axis=1)  # argmin takes the lowest id on ties
        new_centroids = centroids.copy()
        for c in range(k):
            members = assignments == c
            if members.any():
                new_centroids[c] = Z[members].mean(axis=0)
        empty = [c for c in range(k) if not (assignments == c).any()]
        for c in empty:
            point_d2 = _squared_distances(Z, new_centroids)[
                np.arange(m), assignments]
            far = int(point_d2.argmax())
            new_centroids[c] = Z[far]
            assignments[far] = c
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < tol:
            break
    d2 = _squared_distances(Z, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(m), assignments].sum())
    return ClusterModel(centroids=centroids, assignments=assignments,
                        inertia=inertia, iterations=iterations)


def kmeans_inertia_trace(Z: np.ndarray, k: int, seed: int = 0,
                         max_iters: int = 300, tol: float = 1e-4) -> list[float]:
    """Inertia after each assignment phase (for the monotonicity property)."""
    Z = np.asarray(Z, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(Z, k, rng)
    trace = []
    for _ in range(max_iters):
        d2 = _squared_distances(Z, centroids)
        assignments = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(Z.shape[0]), assignments].sum()))
        new_centroids = centroids.copy()
        for c in range(k):
            members = assignments == c
            if members.any():
                new_centroids[c] = Z[members].mean(axis=0)
        if np.linalg.norm(new_centroids - centroids, axis=1).max() < tol:
            break
        centroids = new_centroids
    return trace


def _pairwise_distances(Z: np.ndarray, block: int = 128) -> np.ndarray:
    # direct differences (not the expanded form): silhouette is checked
    # against an O(n^2) oracle at 1e-10, tighter than the expansion's error
    m = Z.shape[0]
    out = np.empty((m, m))
    for lo in range(0, m, block):
        hi = min(lo + block, m)
        diff = Z[lo:hi, None, :] - Z[None, :, :]
        out[lo:hi] = np.sqrt((diff * diff).sum(axis=-1))
    return out


def silhouette(Z: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    """Per-point silhouette (b-a)/max(a,b); singleton clusters score 0."""
    Z = np.asarray(Z, dtype=np.float64)
    assignments = np.asarray(assignments)
    labels = np.unique(assignments)
    if len(labels) < 2:
        raise MiningError("silhouette requires at least two clusters")
    m = Z.shape[0]
    dists = _pairwise_distances(Z)
    scores = np.zeros(m)
    cluster_masks = {c: assignments == c for c in labels}
    for i in range(m):
        own = cluster_masks[assignments[i]]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = dists[i, own].sum() / (n_own - 1)  # excludes self (distance 0)
        b = min(dists[i, cluster_masks[c]].mean()
                for c in labels if c != assignments[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return scores


def hardness_scores(distances: np.ndarray, silhouettes: np.ndarray) -> np.ndarray:
    """Rank-based hardness in [0,1]: far from centroid and low silhouette.

    hardness = (rank(distance ascending) + rank(-silhouette ascending))
               / (2 (M-1)), ranks 0-based and averaged over ties, so the
    point with the largest distance and the smallest silhouette scores 1.
    """
    distances = np.asarray(distances, dtype=np.float64)
    silhouettes = np.asarray(silhouettes, dtype=np.float64)
    if distances.shape != silhouettes.shape:
        raise MiningError("distances and silhouettes must align")
    m = distances.shape[0]
    if m < 2:
        raise MiningError("hardness needs at least two points")
    r_dist = rankdata(distances) - 1.0
    r_sil = rankdata(-silhouettes) - 1.0
    return (r_dist + r_sil) / (2.0 * (m - 1))


def make_split(manifest: DatasetManifest, hardness: dict[str, float],
               fraction: float = 0.10) -> SplitAssignment:
    """Send the per-class hardest ceil(fraction * class size) images to test.

    Stratified per class so no class vanishes from either side; ties on
    hardness break by id for determinism.
    """
    if not (0.0 <= fraction < 1.0):
        raise MiningError("fraction must lie in [0, 1)")
    for rec in manifest.records:
        if rec.id not in hardness:
            raise MiningError(f"missing hardness score for {rec.id}")
    splits: dict[str, str] = {}
    for label in manifest.label_set:
        recs = [r for r in manifest.records if r.label == label]
        if len(recs) < 2:
            raise MiningError(f"class {label!r} has fewer than 2 images")
        n_test = int(np.ceil(fraction * len(recs))) if fraction > 0 else 0
        ordered = sorted(recs, key=lambda r: (-hardness[r.id], r.id))
        for idx, rec in enumerate(ordered):
            splits[rec.id] = "test" if idx < n_test else "train"
    return SplitAssignment(splits=splits, test_fraction=fraction)


def apply_split(manifest: DatasetManifest, split: SplitAssignment,
                hardness: dict[str, float] | None = None) -> DatasetManifest:
    """New manifest with split (and optionally hardness) columns filled in."""
    from .dataio import ManifestRecord

    records = []
    for rec in manifest.records:
        records.append(ManifestRecord(
            id=rec.id, path=rec.path, label=rec.label,
            split=split.splits[rec.id],
            hardness=(hardness or {}).get(rec.id, rec.hardness),
        ))
    return DatasetManifest(records=records, label_set=list(manifest.label_set))


@dataclass
class MiningResult:
    pca: PcaModel
    clusters: ClusterModel
    report: HardnessReport
    split: SplitAssignment
    manifest: DatasetManifest
    n_components: int
    flagged_constant: list[str] = field(default_factory=list)


def mine_manifest(manifest: DatasetManifest, features: np.ndarray,
                  ids: list[str], clusters: int = 10, fraction: float = 0.10,
                  variance_target: float = 0.95, max_components: int = 50,
                  seed: int = 0) -> MiningResult:
    """Full mining pass: PCA -> k-means -> hardness -> stratified split."""
    m, d = features.shape
    probe = fit_pca(features, max(1, min(max_components, m - 1, d)))
    if probe.degenerate:
        raise MiningError("features are degenerate (all rows equal)")
    n_comp = select_components(probe, variance_target, max_components)
    model = PcaModel(mean=probe.mean, components=probe.components[:n_comp],
                     eigenvalues=probe.eigenvalues[:n_comp],
                     total_variance=probe.total_variance)
    z = project(model, features)
    cm = kmeans(z, min(clusters, z.shape[0]), seed=seed)
    dist = np.sqrt(((z - cm.centroids[cm.assignments]) ** 2).sum(axis=1))
    sil = silhouette(z, cm.assignments)
    hard = hardness_scores(dist, sil)
    hardness_by_id = dict(zip(ids, hard.tolist()))
    split = make_split(manifest, hardness_by_id, fraction)
    report = HardnessReport(centroid_distance=dist, silhouette=sil, hardness=hard)
    return MiningResult(
        pca=model, clusters=cm, report=report, split=split,
        manifest=apply_split(manifest, split, hardness_by_id),
        n_components=n_comp,
    )
