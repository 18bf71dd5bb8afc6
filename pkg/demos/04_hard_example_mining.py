"""Hard-example mining: which images deserve to be the test set?

Flattened z-scored images go through PCA (enough components for 95% of the
variance), k-means with one cluster per expected category, and two
difficulty signals: distance to the assigned centroid and the silhouette
score. Their rank combination is the hardness score; the hardest tenth of
each class becomes the fixed test split.
"""

import tempfile

import numpy as np

from nmid import dataio, mining

workdir = tempfile.mkdtemp(prefix="nmid-demo-")
manifest = dataio.generate_synthetic_dataset(workdir, 8, 25, 64, seed=9)
print(f"{len(manifest)} images, {len(manifest.label_set)} classes")

pre = dataio.PreprocessConfig(48, 48, mode="mining-zscore")
features = np.vstack([
    dataio.preprocess_mining(dataio.decode_image(r.path), pre)[0]
    for r in manifest.records])
print(f"feature matrix {features.shape} (z-scored, flattened)")

result = mining.mine_manifest(
    manifest, features, [r.id for r in manifest.records],
    clusters=8, fraction=0.10, variance_target=0.95, seed=0)

ratios = result.pca.explained_ratio()
print(f"\nPCA kept {result.n_components} components "
      f"({ratios[result.n_components - 1] * 100:.1f}% of variance)")
print(f"k-means converged after {result.clusters.iterations} iterations, "
      f"inertia {result.clusters.inertia:.1f}")

sil = result.report.silhouette
hard = result.report.hardness
print(f"silhouette range [{sil.min():+.3f}, {sil.max():+.3f}], "
      f"hardness range [{hard.min():.3f}, {hard.max():.3f}]")

mined = result.manifest
test_recs = [r for r in mined.records if r.split == "test"]
train_recs = [r for r in mined.records if r.split == "train"]
print(f"\nsplit: {len(train_recs)} train / {len(test_recs)} test")
print(f"mean hardness  train {np.mean([r.hardness for r in train_recs]):.3f}"
      f"  vs  test {np.mean([r.hardness for r in test_recs]):.3f}")

print("\nhardest examples per the combined score:")
for rec in sorted(mined.records, key=lambda r: -r.hardness)[:5]:
    print(f"  {rec.id:<28} hardness={rec.hardness:.3f} split={rec.split}")
