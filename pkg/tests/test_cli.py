import json
import subprocess
import sys

import pytest

from nmid import pipeline
TINY_CONFIG = """
[output]
dir = "out"

[dataset]
root = "out/data"

[dataset.synthetic]
classes = 3
per_class = 8
size = 32
seed = 5

[encoder]
image_height = 32
image_width = 32
channels = 1
patch_size = 16
embed_dim = 16
layers = 1
heads = 2
head_dim = 8
local_window = 2
seed = 0

[train]
epochs = 2
lr = 1e-3
batch_size = 8
val_fraction = 0.15
seed = 0

[augment]
crop_lo = 0.8
crop_hi = 1.0
seed = 0

[mining]
clusters = 3
test_fraction = 0.10
target_height = 32
target_width = 32

[retrieval]
metric = "cosine"
k = 2
sampler = "similarity"
seed = 0

[describe]
per_class = 1
images_per_transcript = 1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("cliwork")
    (wd / "nmid.toml").write_text(TINY_CONFIG, encoding="utf-8")
    return wd


@pytest.fixture(scope="module")
def completed_run(workdir):
    cfg = pipeline.load_config(workdir / "nmid.toml")
    results = pipeline.run_all(cfg)
    return workdir, cfg, results


class TestRunAll:
    def test_all_stages_complete(self, completed_run):
        _, cfg, results = completed_run
        assert [r.name for r in results] == list(pipeline.STAGE_ORDER)
        assert not any(r.skipped for r in results)
        report = cfg.out_dir / "evaluate" / "report.json"
        assert report.is_file()
        doc = json.loads(report.read_text())
        values = [doc["top_n"][k] for k in ("1", "2", "3", "5")]
        assert values == sorted(values)

    def test_rerun_performs_zero_recomputation(self, completed_run):
        workdir, cfg, _ = completed_run
        results = pipeline.run_all(cfg)
        assert all(r.skipped for r in results)

    def test_artifacts_land_under_stage_dirs(self, completed_run):
        _, cfg, _ = completed_run
        for stage, artifact in [("prepare", "manifest.jsonl"),
                                ("mine", "manifest.jsonl"),
                                ("train", "encoder.ckpt"),
                                ("embed", "store.bin"),
                                ("describe", "transcripts.jsonl"),
                                ("synthesize", "items.json"),
                                ("classify", "predictions.jsonl")]:
            assert (cfg.out_dir / stage / artifact).is_file(), stage

    def test_synthesize_enqueued_pending_items(self, completed_run):
        _, cfg, _ = completed_run
        from nmid.curation import CurationQueue
        queue = CurationQueue(cfg.out_dir / "review" / "curation.log.jsonl")
        items = queue.list_items("pending")
        assert len(items) == 3  # one describe sample per class
        assert all(len(it.synthetic_refs) == 1 for it in items)


class TestClassifyDeterminism:
    def test_random_sampler_reproducible(self, completed_run):
        workdir, cfg, _ = completed_run
        r1 = pipeline.stage_classify(cfg, sampler="random", k=2, seed=3)
        first = r1.outputs["predictions"].read_bytes()
        # force recomputation rather than a stamp skip
        (cfg.out_dir / "classify" / ".stamp").unlink()
        r2 = pipeline.stage_classify(cfg, sampler="random", k=2, seed=3)
        assert not r2.skipped
        assert r2.outputs["predictions"].read_bytes() == first

    def test_seed_changes_predictions_digest(self, completed_run):
        workdir, cfg, _ = completed_run
        a = pipeline.stage_classify(cfg, sampler="random", k=2, seed=3)
        blob_a = a.outputs["predictions"].read_bytes()
        b = pipeline.stage_classify(cfg, sampler="random", k=2, seed=4)
        blob_b = b.outputs["predictions"].read_bytes()
        assert blob_a != blob_b  # different demo draws


class TestFailFast:
    def test_evaluate_without_predictions_names_missing_file(self, tmp_path):
        (tmp_path / "nmid.toml").write_text(TINY_CONFIG, encoding="utf-8")
        cfg = pipeline.load_config(tmp_path / "nmid.toml")
        with pytest.raises(pipeline.PipelineError) as err:
            pipeline.stage_evaluate(cfg)
        assert "predictions" in str(err.value)
        assert "evaluate" in str(err.value)

    def test_mine_without_prepare(self, tmp_path):
        (tmp_path / "nmid.toml").write_text(TINY_CONFIG, encoding="utf-8")
        cfg = pipeline.load_config(tmp_path / "nmid.toml")
        with pytest.raises(pipeline.PipelineError, match="manifest"):
            pipeline.stage_mine(cfg)


class TestCliProcess:
    def test_exit_codes_and_stage_report(self, workdir, completed_run):
        # artifacts exist: a re-run must skip everything and exit 0
        proc = subprocess.run(
            [sys.executable, "-m", "nmid.cli", "--config",
             str(workdir / "nmid.toml"), "run-all"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "stage=evaluate" in proc.stdout
        assert "skipped" in proc.stdout

    def test_missing_artifact_exit_nonzero_names_stage(self, tmp_path):
        (tmp_path / "nmid.toml").write_text(TINY_CONFIG, encoding="utf-8")
        proc = subprocess.run(
            [sys.executable, "-m", "nmid.cli", "--config",
             str(tmp_path / "nmid.toml"), "evaluate"],
            capture_output=True, text=True)
        assert proc.returncode == 1
        assert "evaluate" in proc.stderr

    def test_bad_config_exit_two(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "nmid.cli", "--config",
             str(tmp_path / "missing.toml"), "run-all"],
            capture_output=True, text=True)
        assert proc.returncode == 2

    def test_help_lists_subcommands(self):
        proc = subprocess.run([sys.executable, "-m", "nmid.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for cmd in ("gen-data", "prepare", "mine", "train", "embed", "describe",
                    "synthesize", "review-serve", "classify", "evaluate",
                    "run-all"):
            assert cmd in proc.stdout
