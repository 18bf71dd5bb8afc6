"""Stage orchestration behind the CLI: one artifact directory per stage,
digest stamps for idempotent re-runs, TOML configuration.

Stage order: gen-data -> prepare -> mine -> train -> embed -> describe ->
synthesize -> classify -> evaluate. Each stage fails fast if an upstream
artifact is missing and skips itself when its inputs are unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import curation, dataio, embed_index, evaluation, gateway, mining, prompts
from .encoder import EncoderCheckpoint, EncoderConfig, forward, load_checkpoint, save_checkpoint
from .messages import ImageGenRequest
from .training import AugmentationConfig, TrainConfig, train

log = logging.getLogger(__name__)

STAGE_ORDER = ("gen-data", "prepare", "mine", "train", "embed",
               "describe", "synthesize", "classify", "evaluate")


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class SyntheticSpec:
    classes: int = 10
    per_class: int = 200
    size: int = 64
    seed: int = 7


@dataclass
class MiningSpec:
    clusters: int = 10
    test_fraction: float = 0.10
    variance_target: float = 0.95
    max_components: int = 50
    seed: int = 0
    target_height: int = 64
    target_width: int = 64


@dataclass
class RetrievalSpec:
    metric: str = "cosine"
    k: int = 1
    sampler: str = "similarity"
    seed: int = 0


@dataclass
class BackendSpec:
    chat: str = "mock-vqa"
    classifier: str = "mock-classifier"
    imagegen: str = "mock-imagegen"


@dataclass
class DescribeSpec:
    per_class: int = 1
    category_hint: bool = True
    images_per_transcript: int = 2


@dataclass
class GatewaySpec:
    max_retries: int = 3
    backoff_base: float = 0.01
    rate_per_sec: float = 500.0
    burst: int = 50


@dataclass
class PipelineConfig:
    out_dir: Path
    dataset_root: Path
    synthetic: SyntheticSpec | None
    encoder: EncoderConfig
    train: TrainConfig
    augment: AugmentationConfig
    mining: MiningSpec
    retrieval: RetrievalSpec
    backends: BackendSpec
    describe: DescribeSpec
    gateway: GatewaySpec
    review_token: str = ""

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path) -> "PipelineConfig":
        def section(name):
            return dict(doc.get(name, {}))

        out_dir = base_dir / doc.get("output", {}).get("dir", "out")
        dataset_root = base_dir / doc.get("dataset", {}).get("root", "out/data")
        synth_doc = doc.get("dataset", {}).get("synthetic")
        synthetic = SyntheticSpec(**synth_doc) if synth_doc is not None else None
        aug_doc = section("augment")
        if "crop_lo" in aug_doc or "crop_hi" in aug_doc:
            aug_doc["crop_scale_range"] = (
                aug_doc.pop("crop_lo", 0.6), aug_doc.pop("crop_hi", 1.0))
        return cls(
            out_dir=out_dir,
            dataset_root=dataset_root,
            synthetic=synthetic,
            encoder=EncoderConfig(**section("encoder")),
            train=TrainConfig(**section("train")),
            augment=AugmentationConfig(**aug_doc),
            mining=MiningSpec(**section("mining")),
            retrieval=RetrievalSpec(**section("retrieval")),
            backends=BackendSpec(**section("backends")),
            describe=DescribeSpec(**section("describe")),
            gateway=GatewaySpec(**section("gateway")),
            review_token=doc.get("review", {}).get("token", ""),
        )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return PipelineConfig.from_dict(doc, path.parent.resolve())


@dataclass
class StageResult:
    name: str
    skipped: bool
    outputs: dict[str, Path] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Stamping: a stage skips itself when the digest of its config slice and
# input artifacts matches the stored stamp and its outputs are intact.
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_inputs(config_slice: dict, input_files: list[Path]) -> str:
    doc = {
        "config": config_slice,
        "inputs": {str(p): _sha256_file(p) for p in sorted(input_files)},
    }
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def _stage_dir(cfg: PipelineConfig, name: str) -> Path:
    d = cfg.out_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _stamp_path(cfg: PipelineConfig, name: str) -> Path:
    return _stage_dir(cfg, name) / ".stamp"


def _check_stamp(cfg: PipelineConfig, name: str, inputs_digest: str) -> dict | None:
    stamp = _stamp_path(cfg, name)
    if not stamp.is_file():
        return None
    try:
        doc = json.loads(stamp.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if doc.get("inputs") != inputs_digest:
        return None
    for out_path, digest in doc.get("outputs", {}).items():
        p = Path(out_path)
        if not p.is_file() or _sha256_file(p) != digest:
            return None
    return doc


def _write_stamp(cfg: PipelineConfig, name: str, inputs_digest: str,
                 outputs: dict[str, Path]):
    doc = {
        "inputs": inputs_digest,
        "outputs": {str(p): _sha256_file(p) for p in outputs.values()},
    }
    _stamp_path(cfg, name).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _require(stage: str, paths: dict[str, Path]):
    missing = [f"{name} ({path})" for name, path in paths.items()
               if not Path(path).exists()]
    if missing:
        raise PipelineError(stage, "missing required inputs: " + ", ".join(missing))


def _dataset_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode("utf-8"))
            h.update(_sha256_file(p).encode("ascii"))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_gen_data(cfg: PipelineConfig) -> StageResult:
    name = "gen-data"
    if cfg.synthetic is None:
        raise PipelineError(name, "config has no [dataset.synthetic] section")
    spec = cfg.synthetic
    config_slice = {"synthetic": vars(spec), "root": str(cfg.dataset_root)}
    inputs_digest = _digest_inputs(config_slice, [])
    manifest_path = _stage_dir(cfg, name) / "manifest.jsonl"
    outputs = {"manifest": manifest_path}
    if _check_stamp(cfg, name, inputs_digest) and cfg.dataset_root.is_dir():
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.generate_synthetic_dataset(
        cfg.dataset_root, spec.classes, spec.per_class, spec.size, spec.seed)
    manifest.save(manifest_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_prepare(cfg: PipelineConfig) -> StageResult:
    name = "prepare"
    _require(name, {"dataset root": cfg.dataset_root})
    inputs_digest = _digest_inputs(
        {"root": str(cfg.dataset_root), "data": _dataset_digest(cfg.dataset_root)}, [])
    manifest_path = _stage_dir(cfg, name) / "manifest.jsonl"
    outputs = {"manifest": manifest_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.load_dataset(cfg.dataset_root)
    if manifest.skipped:
        log.warning("prepare: excluded %d undecodable files", len(manifest.skipped))
    manifest.save(manifest_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_mine(cfg: PipelineConfig) -> StageResult:
    name = "mine"
    src = _stage_dir(cfg, "prepare") / "manifest.jsonl"
    _require(name, {"prepared manifest": src})
    inputs_digest = _digest_inputs({"mining": vars(cfg.mining)}, [src])
    out_manifest = _stage_dir(cfg, name) / "manifest.jsonl"
    out_report = _stage_dir(cfg, name) / "mining_report.json"
    outputs = {"manifest": out_manifest, "report": out_report}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)

    manifest = dataio.DatasetManifest.load(src)
    pre = dataio.PreprocessConfig(
        target_height=cfg.mining.target_height,
        target_width=cfg.mining.target_width, mode="mining-zscore")
    rows, flagged = [], []
    for rec in manifest.records:
        vec, is_constant = dataio.preprocess_mining(dataio.decode_image(rec.path), pre)
        rows.append(vec)
        if is_constant:
            flagged.append(rec.id)
    features = np.vstack(rows)
    result = mining.mine_manifest(
        manifest, features, [r.id for r in manifest.records],
        clusters=cfg.mining.clusters, fraction=cfg.mining.test_fraction,
        variance_target=cfg.mining.variance_target,
        max_components=cfg.mining.max_components, seed=cfg.mining.seed)
    result.manifest.save(out_manifest)
    report = {
        "n_components": result.n_components,
        "kmeans_iterations": result.clusters.iterations,
        "inertia": result.clusters.inertia,
        "flagged_constant": flagged,
        "test_count": sum(1 for s in result.split.splits.values() if s == "test"),
        "train_count": sum(1 for s in result.split.splits.values() if s == "train"),
    }
    out_report.write_text(json.dumps(report, indent=2), encoding="utf-8")
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_train(cfg: PipelineConfig) -> StageResult:
    name = "train"
    src = _stage_dir(cfg, "mine") / "manifest.jsonl"
    _require(name, {"mined manifest": src})
    config_slice = {"encoder": cfg.encoder.to_json(), "train": vars(cfg.train),
                    "augment": {**vars(cfg.augment),
                                "crop_scale_range": list(cfg.augment.crop_scale_range)}}
    inputs_digest = _digest_inputs(config_slice, [src])
    ckpt_path = _stage_dir(cfg, name) / "encoder.ckpt"
    report_path = _stage_dir(cfg, name) / "train_report.json"
    outputs = {"checkpoint": ckpt_path, "report": report_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.DatasetManifest.load(src)
    checkpoint, report = train(manifest, cfg.encoder, cfg.train, cfg.augment)
    save_checkpoint(checkpoint.params, checkpoint.config, ckpt_path)
    report.save(report_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_embed(cfg: PipelineConfig) -> StageResult:
    name = "embed"
    manifest_path = _stage_dir(cfg, "mine") / "manifest.jsonl"
    ckpt_path = _stage_dir(cfg, "train") / "encoder.ckpt"
    _require(name, {"mined manifest": manifest_path, "checkpoint": ckpt_path})
    inputs_digest = _digest_inputs({}, [manifest_path, ckpt_path])
    store_path = _stage_dir(cfg, name) / "store.bin"
    outputs = {"store": store_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.DatasetManifest.load(manifest_path)
    params, enc_cfg = load_checkpoint(ckpt_path)
    store = embed_index.build_index(
        manifest, EncoderCheckpoint(params=params, config=enc_cfg))
    store.save(store_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def _make_gateway(cfg: PipelineConfig, backends: dict) -> gateway.Gateway:
    policy = gateway.GatewayPolicy(
        max_retries=cfg.gateway.max_retries,
        backoff_base=cfg.gateway.backoff_base,
        rate_per_sec=cfg.gateway.rate_per_sec,
        burst=cfg.gateway.burst,
        cache_dir=cfg.out_dir / "gateway-cache",
    )
    return gateway.Gateway(policy, backends)


def _describe_sample(manifest: dataio.DatasetManifest, per_class: int):
    chosen = []
    for label in manifest.label_set:
        recs = sorted((r for r in manifest.by_split("train") if r.label == label),
                      key=lambda r: r.id)
        chosen.extend(recs[:per_class])
    return chosen


def stage_describe(cfg: PipelineConfig) -> StageResult:
    name = "describe"
    manifest_path = _stage_dir(cfg, "mine") / "manifest.jsonl"
    _require(name, {"mined manifest": manifest_path})
    config_slice = {"describe": vars(cfg.describe), "chat": cfg.backends.chat}
    inputs_digest = _digest_inputs(config_slice, [manifest_path])
    out_path = _stage_dir(cfg, name) / "transcripts.jsonl"
    outputs = {"transcripts": out_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.DatasetManifest.load(manifest_path)
    backend = gateway.make_chat_backend(cfg.backends.chat) \
        if cfg.backends.chat != "mock-classifier" else None
    if backend is None:
        raise PipelineError(name, "describe cannot use the classifier backend")
    gw = _make_gateway(cfg, {cfg.backends.chat: backend})
    questions = prompts.cot_prompts()
    transcripts = []
    for rec in _describe_sample(manifest, cfg.describe.per_class):
        image_bytes = Path(rec.path).read_bytes()
        pairs = []
        for pid, question in enumerate(questions, start=1):
            req = prompts.build_vqa_request(
                image_bytes, question,
                category_hint=rec.label if cfg.describe.category_hint else None,
                backend=cfg.backends.chat)
            resp = gw.send_chat(cfg.backends.chat, req)
            pairs.append(prompts.QaPair(prompt_id=pid, question=question,
                                        answer=resp.text))
        transcripts.append(prompts.VqaTranscript(
            image_id=rec.id, pairs=pairs, backend=cfg.backends.chat, ts=0.0))
    prompts.save_transcripts(transcripts, out_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_synthesize(cfg: PipelineConfig) -> StageResult:
    name = "synthesize"
    transcripts_path = _stage_dir(cfg, "describe") / "transcripts.jsonl"
    manifest_path = _stage_dir(cfg, "mine") / "manifest.jsonl"
    _require(name, {"transcripts": transcripts_path, "mined manifest": manifest_path})
    config_slice = {"imagegen": cfg.backends.imagegen,
                    "count": cfg.describe.images_per_transcript}
    inputs_digest = _digest_inputs(config_slice, [transcripts_path, manifest_path])
    items_path = _stage_dir(cfg, name) / "items.json"
    outputs = {"items": items_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.DatasetManifest.load(manifest_path)
    by_id = {r.id: r for r in manifest.records}
    backend = gateway.MockImageGenBackend() if cfg.backends.imagegen == "mock-imagegen" \
        else None
    if backend is None:
        raise PipelineError(name, f"unknown imagegen backend {cfg.backends.imagegen!r}")
    gw = _make_gateway(cfg, {cfg.backends.imagegen: backend})
    size = cfg.synthetic.size if cfg.synthetic else 64
    queue = curation.CurationQueue(cfg.out_dir / "review" / "curation.log.jsonl")
    items = []
    for transcript in prompts.load_transcripts(transcripts_path):
        rec = by_id.get(transcript.image_id)
        if rec is None:
            raise PipelineError(name, f"transcript references unknown image "
                                      f"{transcript.image_id!r}")
        prompt = prompts.build_synthesis_prompt(transcript)
        refs = gw.generate_images(cfg.backends.imagegen, ImageGenRequest(
            prompt=prompt, count=cfg.describe.images_per_transcript, size=size))
        item_id = queue.enqueue(
            source_image=rec.path, label=rec.label, transcript=transcript,
            synthetic_refs=[str(p) for p in refs], ts=0.0)
        items.append({"item_id": item_id, "image_id": rec.id,
                      "synthetics": [str(p) for p in refs]})
    items_path.write_text(json.dumps({"items": items}, indent=2), encoding="utf-8")
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def _embed_image_file(path: str, checkpoint: EncoderCheckpoint) -> np.ndarray:
    enc_cfg = checkpoint.config
    pre = dataio.PreprocessConfig(target_height=enc_cfg.image_height,
                                  target_width=enc_cfg.image_width,
                                  mode="encoder-signed")
    arr = dataio.preprocess_encoder(dataio.decode_image(path), pre)
    return forward(dataio.ensure_channels(arr, enc_cfg.channels),
                   checkpoint.params, enc_cfg)


def _query_seed(base_seed: int, image_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stage_classify(cfg: PipelineConfig, sampler: str | None = None,
                   k: int | None = None, seed: int | None = None) -> StageResult:
    name = "classify"
    manifest_path = _stage_dir(cfg, "mine") / "manifest.jsonl"
    ckpt_path = _stage_dir(cfg, "train") / "encoder.ckpt"
    store_path = _stage_dir(cfg, "embed") / "store.bin"
    _require(name, {"mined manifest": manifest_path, "checkpoint": ckpt_path,
                    "embedding store": store_path})
    sampler = sampler or cfg.retrieval.sampler
    k = cfg.retrieval.k if k is None else k
    seed = cfg.retrieval.seed if seed is None else seed
    if sampler not in ("similarity", "random"):
        raise PipelineError(name, f"unknown sampler {sampler!r}")
    config_slice = {"sampler": sampler, "k": k, "seed": seed,
                    "metric": cfg.retrieval.metric,
                    "classifier": cfg.backends.classifier}
    inputs_digest = _digest_inputs(config_slice,
                                   [manifest_path, ckpt_path, store_path])
    pred_path = _stage_dir(cfg, name) / "predictions.jsonl"
    outputs = {"predictions": pred_path}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)

    manifest = dataio.DatasetManifest.load(manifest_path)
    params, enc_cfg = load_checkpoint(ckpt_path)
    checkpoint = EncoderCheckpoint(params=params, config=enc_cfg)
    store = embed_index.EmbeddingStore.load(store_path)
    train_by_id = {r.id: r for r in manifest.by_split("train")}
    backend = gateway.make_chat_backend(
        cfg.backends.classifier, store=store, checkpoint=checkpoint)
    gw = _make_gateway(cfg, {cfg.backends.classifier: backend})

    records = []
    for rec in manifest.by_split("test"):
        query_bytes = Path(rec.path).read_bytes()
        if sampler == "similarity":
            query_emb = _embed_image_file(rec.path, checkpoint)
            neighbors = embed_index.top_k_similar(
                store, query_emb, k, metric=cfg.retrieval.metric)
        else:
            neighbors = embed_index.sample_random(
                store, k, seed=_query_seed(seed, rec.id))
        demos = []
        for nb in neighbors:
            demo_rec = train_by_id[nb.id]
            demos.append((Path(demo_rec.path).read_bytes(), demo_rec.label))
        req = prompts.build_fewshot_prompt(
            demos, query_bytes, manifest.label_set,
            backend=cfg.backends.classifier)
        resp = gw.send_chat(cfg.backends.classifier, req)
        try:
            predicted = prompts.parse_ranked_labels(resp.text, manifest.label_set).labels
        except prompts.UnparseableResponse:
            predicted = []
        records.append(evaluation.PredictionRecord(
            image_id=rec.id, true_label=rec.label, predicted=predicted,
            raw_text=resp.text))
    evaluation.save_predictions(records, pred_path)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


def stage_evaluate(cfg: PipelineConfig) -> StageResult:
    name = "evaluate"
    pred_path = _stage_dir(cfg, "classify") / "predictions.jsonl"
    manifest_path = _stage_dir(cfg, "mine") / "manifest.jsonl"
    _require(name, {"predictions": pred_path, "mined manifest": manifest_path})
    inputs_digest = _digest_inputs({}, [pred_path, manifest_path])
    out_dir = _stage_dir(cfg, name)
    outputs = {"report": out_dir / "report.json", "csv": out_dir / "report.csv",
               "confusion": out_dir / "confusion.csv"}
    if _check_stamp(cfg, name, inputs_digest):
        return StageResult(name, skipped=True, outputs=outputs)
    manifest = dataio.DatasetManifest.load(manifest_path)
    records = evaluation.load_predictions(pred_path)
    report = evaluation.build_report(records, manifest.label_set)
    evaluation.emit_report(report, out_dir)
    _write_stamp(cfg, name, inputs_digest, outputs)
    return StageResult(name, skipped=False, outputs=outputs)


STAGES = {
    "gen-data": stage_gen_data,
    "prepare": stage_prepare,
    "mine": stage_mine,
    "train": stage_train,
    "embed": stage_embed,
    "describe": stage_describe,
    "synthesize": stage_synthesize,
    "classify": stage_classify,
    "evaluate": stage_evaluate,
}


def run_all(cfg: PipelineConfig) -> list[StageResult]:
    results = []
    for name in STAGE_ORDER:
        if name == "gen-data" and cfg.synthetic is None:
            continue  # external dataset: nothing to generate
        results.append(STAGES[name](cfg))
    return results
