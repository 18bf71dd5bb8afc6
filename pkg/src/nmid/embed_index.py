"""Exact-scan store of holistic image embeddings for demonstration sampling.

Desk-scale corpora make approximate indexes pointless: retrieval is a full
scan, so oracle equality with a sort is trivial and ties are broken by id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .encoder import EncoderCheckpoint, forward_batch

log = logging.getLogger(__name__)

STORE_VERSION = 1


class IndexError_(Exception):
    pass


@dataclass
class Neighbor:
    id: str
    score: float | None


@dataclass
class EmbeddingStore:
    ids: list[str]
    matrix: np.ndarray            # (M, d)
    metric: str = "cosine"
    norms: np.ndarray = field(init=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.isfinite(self.matrix).all():
            raise IndexError_("embedding matrix contains non-finite values")
        if len(self.ids) != self.matrix.shape[0]:
            raise IndexError_("ids do not align with matrix rows")
        if len(set(self.ids)) != len(self.ids):
            raise IndexError_("duplicate ids in store")
        self.norms = np.linalg.norm(self.matrix, axis=1)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, image_id: str) -> np.ndarray:
        return self.matrix[self.ids.index(image_id)]

    def save(self, path: str | Path) -> Path:
        """JSON header line + little-endian f32 row-major blob."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = json.dumps({
            "version": STORE_VERSION,
            "d": int(self.matrix.shape[1]),
            "metric": self.metric,
            "ids": self.ids,
        })
        with open(path, "wb") as fh:
            fh.write(header.encode("utf-8") + b"\n")
            fh.write(self.matrix.astype("<f4").tobytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        path = Path(path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            blob = fh.read()
        if header.get("version") != STORE_VERSION:
            raise IndexError_(f"unsupported store version in {path}")
        ids = header["ids"]
        d = header["d"]
        expected = len(ids) * d * 4
        if len(blob) != expected:
            raise IndexError_(f"store payload truncated: {path}")
        matrix = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(len(ids), d)
        return cls(ids=list(ids), matrix=matrix, metric=header.get("metric", "cosine"))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise IndexError_("cosine similarity undefined for zero vectors")
    return float(a @ b / (na * nb))


def build_index(manifest: dataio.DatasetManifest, checkpoint: EncoderCheckpoint,
                split: str = "train", batch_size: int = 64) -> EmbeddingStore:
    """Embed every image in the given split through the encoder."""
    records = manifest.by_split(split)
    if not records:
        raise IndexError_(f"no records in split {split!r}")
    cfg = checkpoint.config
    pre = dataio.PreprocessConfig(
        target_height=cfg.image_height, target_width=cfg.image_width,
        mode="encoder-signed")
    ids, rows = [], []
    batch, batch_ids = [], []

    def flush():
        if not batch:
            return
        emb = forward_batch(batch, checkpoint.params, cfg)
        rows.append(emb)
        ids.extend(batch_ids)
        batch.clear()
        batch_ids.clear()

    for rec in records:
        try:
            img = dataio.decode_image(rec.path)
        except Exception:
            log.warning("skipping undecodable %s", rec.path)
            continue
        arr = dataio.ensure_channels(dataio.preprocess_encoder(img, pre), cfg.channels)
        batch.append(arr)
        batch_ids.append(rec.id)
        if len(batch) == batch_size:
            flush()
    flush()
    if not ids:
        raise IndexError_("no decodable images in split")
    return EmbeddingStore(ids=ids, matrix=np.vstack(rows))


def top_k_similar(store: EmbeddingStore, query: np.ndarray, k: int,
                  metric: str = "cosine") -> list[Neighbor]:
    """Exact top-K by cosine (descending) or Euclidean (ascending distance).

    Ties break by ascending id; K larger than the store returns everything.
    """
    if k < 0:
        raise IndexError_("k must be non-negative")
    if k == 0:
        return []
    query = np.asarray(query, dtype=np.float64)
    if metric == "cosine":
        qn = np.linalg.norm(query)
        if qn == 0.0:
            raise IndexError_("zero-norm query under cosine metric")
        if np.any(store.norms == 0.0):
            raise IndexError_("store contains zero-norm rows under cosine metric")
        scores = store.matrix @ query / (store.norms * qn)
        keyed = sorted(range(len(store)), key=lambda i: (-scores[i], store.ids[i]))
    elif metric == "euclidean":
        scores = np.linalg.norm(store.matrix - query, axis=1)
        keyed = sorted(range(len(store)), key=lambda i: (scores[i], store.ids[i]))
    else:
        raise IndexError_(f"unknown metric {metric!r}")
    return [Neighbor(id=store.ids[i], score=float(scores[i])) for i in keyed[:k]]


def sample_random(store: EmbeddingStore, k: int, seed: int) -> list[Neighbor]:
    """Uniform sample of K ids without replacement; scores absent."""
    if k > len(store):
        raise IndexError_(f"cannot sample {k} from {len(store)} rows")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(store), size=k, replace=False)
    return [Neighbor(id=store.ids[int(i)], score=None) for i in picks]
