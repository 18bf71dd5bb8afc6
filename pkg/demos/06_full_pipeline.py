"""The whole pipeline through the staged runner, small enough to watch.

Equivalent to `nmid --config <file> run-all`: generate data, scan it into
a manifest, mine the hard test split, train the encoder, build the
embedding store, describe + synthesize through mock backends (queueing
review items), classify the test split few-shot, and score it.
"""

import json
import tempfile
import time
from pathlib import Path

from nmid import pipeline

CONFIG = """
[output]
dir = "out"

[dataset]
root = "out/data"

[dataset.synthetic]
classes = 5
per_class = 30
size = 64
seed = 7

[encoder]
image_height = 64
image_width = 64
channels = 1
patch_size = 32
embed_dim = 64
layers = 1
heads = 4
head_dim = 16
local_window = 2
seed = 0

[train]
epochs = 3
lr = 1e-3
batch_size = 24
val_fraction = 0.1
seed = 0

[augment]
crop_lo = 0.8
crop_hi = 1.0
seed = 0

[mining]
clusters = 5
test_fraction = 0.10
target_height = 64
target_width = 64

[retrieval]
metric = "cosine"
k = 3
sampler = "similarity"

[describe]
per_class = 1
images_per_transcript = 2
"""

workdir = Path(tempfile.mkdtemp(prefix="nmid-demo-"))
(workdir / "nmid.toml").write_text(CONFIG, encoding="utf-8")
cfg = pipeline.load_config(workdir / "nmid.toml")

start = time.monotonic()
for result in pipeline.run_all(cfg):
    status = "skipped" if result.skipped else "done"
    print(f"stage={result.name:<10} {status}")
print(f"\npipeline finished in {time.monotonic() - start:.1f}s")

report = json.loads((cfg.out_dir / "evaluate" / "report.json").read_text())
print("\nTop-N accuracy on the hard test split (mock classifier):")
for n, value in report["top_n"].items():
    print(f"  top-{n}: {value:.3f}")

print("\nper-class F1:")
for label, row in report["per_class"].items():
    print(f"  {label:<10} f1={row['f1']:.3f} (support {row['support']})")

# a second run does nothing: every stage's inputs are digest-stamped
print("\nre-running run-all:")
for result in pipeline.run_all(cfg):
    print(f"stage={result.name:<10} {'skipped' if result.skipped else 'done'}")

print(f"\nreview queue for the human curation step: "
      f"{cfg.out_dir / 'review' / 'curation.log.jsonl'}")
print("serve it with:  nmid --config <config> review-serve")
