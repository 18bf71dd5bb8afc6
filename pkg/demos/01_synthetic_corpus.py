"""Generate the seeded synthetic micrograph stand-in corpus and poke at it.

The pipeline needs an image corpus with real class structure but no
external downloads: ten procedural grayscale texture families (stripes,
blobs, grids, ...) with per-image jitter. This script writes a small copy,
shows the manifest, and verifies the classes are separable with a plain
1-NN classifier on raw pixels.
"""

import tempfile
from pathlib import Path

import numpy as np

from nmid import dataio

workdir = Path(tempfile.mkdtemp(prefix="nmid-demo-"))
print(f"writing corpus under {workdir}")

manifest = dataio.generate_synthetic_dataset(
    workdir, n_classes=6, per_class=12, size=64, seed=7)
print(f"{len(manifest)} images across {len(manifest.label_set)} classes:")
print(" ", ", ".join(manifest.label_set))

print("\nfirst records:")
for rec in manifest.records[:3]:
    print(f"  id={rec.id}  label={rec.label}  split={rec.split}")

manifest_path = manifest.save(workdir / "manifest.jsonl")
print(f"\nmanifest saved to {manifest_path} (JSON Lines, keys id/path/label/split/hardness)")

# determinism: the same seed reproduces files byte for byte
again = dataio.generate_synthetic_dataset(
    workdir / "again", n_classes=6, per_class=12, size=64, seed=7)
identical = all(
    Path(a.path).read_bytes() == Path(b.path).read_bytes()
    for a, b in zip(manifest.records, again.records))
print(f"re-generation with the same seed is byte-identical: {identical}")

# 1-NN on raw pixels, 20% held out: the classes should be cleanly separable
X = np.vstack([dataio.decode_image(r.path).pixels for r in manifest.records])
y = np.array([r.label for r in manifest.records])
rng = np.random.default_rng(0)
idx = rng.permutation(len(y))
n_test = len(y) // 5
test, train = idx[:n_test], idx[n_test:]
hits = sum(y[train][((X[train] - X[i]) ** 2).sum(axis=1).argmin()] == y[i]
           for i in test)
print(f"raw-pixel 1-NN accuracy on a held-out 20%: {hits / n_test:.2f}")
