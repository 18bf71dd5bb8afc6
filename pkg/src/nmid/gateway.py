"""Pluggable chat / text-to-image backends with retries, a token-bucket
rate limiter and a content-addressed response cache.

The deterministic mock backends make the whole pipeline runnable offline;
the real HTTP backend ("gpt4v-like") speaks a minimal JSON chat schema
configured from ``NMID_BACKEND_URL`` / ``NMID_BACKEND_KEY``.

Cache layout: ``<cache>/<backend>/<digest>.json|.png``; keys are digests
of the backend id plus the canonical request bytes, so equal requests to
different backends never collide.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataio
from .embed_index import EmbeddingStore, cosine
from .encoder import EncoderCheckpoint, forward
from .messages import ChatPart, ChatRequest, ChatResponse, ImageGenRequest

log = logging.getLogger(__name__)

__all__ = [
    "ChatPart", "ChatRequest", "ChatResponse", "ImageGenRequest",
    "GatewayPolicy", "Gateway", "BackendError", "GatewayError",
    "TokenBucket", "canonical_request_bytes", "request_digest",
    "MockVqaBackend", "MockClassifierBackend", "MockImageGenBackend",
    "HttpChatBackend", "make_chat_backend",
]


class BackendError(Exception):
    """A single failed backend call; the gateway may retry it."""


class GatewayError(Exception):
    """Terminal gateway failure (retries exhausted, bad configuration)."""


@dataclass
class GatewayPolicy:
    max_retries: int = 3
    backoff_base: float = 0.05   # seconds; doubles per retry, with jitter
    rate_per_sec: float = 20.0
    burst: int = 5
    cache_dir: str | Path = "gateway-cache"
    timeout: float = 30.0
    jitter_seed: int = 0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.rate_per_sec <= 0:
            raise ValueError("rate_per_sec must be positive")


class TokenBucket:
    """Classic token bucket: at most burst + rate*window calls per window."""

    def __init__(self, rate: float, burst: int, clock=time.monotonic,
                 sleep=time.sleep):
        self.rate = rate
        self.burst = burst
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(burst)
        self._last = clock()

    def acquire(self):
        while True:
            now = self._clock()
            self._tokens = min(float(self.burst),
                               self._tokens + (now - self._last) * self.rate)
            self._last = now
            # tolerance keeps a ~1e-16 token deficit from spinning forever
            # when the clock's float granularity swallows the final wait
            if self._tokens >= 1.0 - 1e-9:
                self._tokens = max(0.0, self._tokens - 1.0)
                return
            self._sleep((1.0 - self._tokens) / self.rate)


def canonical_request_bytes(req: ChatRequest) -> bytes:
    """Order-stable canonical form; image payloads appear as digests."""
    parts = []
    for p in req.parts:
        if p.kind == "text":
            parts.append({"type": "text", "text": p.text})
        else:
            parts.append({
                "type": "image",
                "mime": p.mime,
                "sha256": hashlib.sha256(p.data).hexdigest(),
            })
    doc = {"backend": req.backend, "params": req.params, "parts": parts}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def request_digest(backend_id: str, payload: bytes) -> str:
    return hashlib.sha256(backend_id.encode("utf-8") + b"\x00" + payload).hexdigest()


def _canonical_imagegen_bytes(req: ImageGenRequest) -> bytes:
    doc = {"prompt": req.prompt, "count": req.count, "size": req.size}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class Gateway:
    """Shared front door for all model calls: cache, rate limit, retries."""

    def __init__(self, policy: GatewayPolicy, backends: dict[str, object],
                 clock=time.monotonic, sleep=time.sleep):
        self.policy = policy
        self.backends = dict(backends)
        self._sleep = sleep
        self._bucket = TokenBucket(policy.rate_per_sec, policy.burst, clock, sleep)
        self._jitter = np.random.default_rng(policy.jitter_seed)
        self.call_counts: dict[str, int] = {}

    def _backend(self, name: str):
        if name not in self.backends:
            raise GatewayError(f"backend {name!r} not registered")
        return self.backends[name]

    def _cache_path(self, backend_name: str, digest: str, suffix: str) -> Path:
        return Path(self.policy.cache_dir) / backend_name / f"{digest}.{suffix}"

    def _with_retries(self, backend_name: str, call):
        last_error = None
        for attempt in range(1, self.policy.max_retries + 2):
            self._bucket.acquire()
            self.call_counts[backend_name] = self.call_counts.get(backend_name, 0) + 1
            try:
                return call(), attempt
            except BackendError as exc:
                last_error = exc
                if attempt > self.policy.max_retries:
                    break
                delay = self.policy.backoff_base * (2 ** (attempt - 1))
                delay *= 1.0 + 0.25 * float(self._jitter.random())
                log.warning("backend %s failed (attempt %d): %s; retrying in %.3fs",
                            backend_name, attempt, exc, delay)
                self._sleep(delay)
        raise GatewayError(
            f"backend {backend_name!r} failed after retries: {last_error}")

    def send_chat(self, backend_name: str, req: ChatRequest) -> ChatResponse:
        backend = self._backend(backend_name)
        digest = request_digest(backend_name, canonical_request_bytes(req))
        cache_file = self._cache_path(backend_name, digest, "json")
        cached = self._cache_probe(cache_file)
        if cached is not None:
            return ChatResponse(text=cached["text"], backend=backend_name,
                                usage=cached.get("usage", {}), cached=True)
        text, attempts = self._with_retries(backend_name, lambda: backend.complete(req))
        if not text:
            raise GatewayError(f"backend {backend_name!r} returned empty text")
        usage = {"attempts": attempts, "parts": len(req.parts)}
        self._cache_store(cache_file, json.dumps(
            {"text": text, "usage": usage}).encode("utf-8"))
        return ChatResponse(text=text, backend=backend_name, usage=usage, cached=False)

    def generate_images(self, backend_name: str, req: ImageGenRequest) -> list[Path]:
        backend = self._backend(backend_name)
        digest = request_digest(backend_name, _canonical_imagegen_bytes(req))
        index_file = self._cache_path(backend_name, digest, "json")
        cached = self._cache_probe(index_file)
        if cached is not None:
            paths = [index_file.parent / name for name in cached["images"]]
            if all(p.is_file() for p in paths):
                return paths
        blobs, _ = self._with_retries(backend_name, lambda: backend.generate(req))
        if len(blobs) != req.count:
            raise GatewayError(
                f"backend {backend_name!r} returned {len(blobs)} images, wanted {req.count}")
        names = []
        for blob in blobs:
            name = hashlib.sha256(blob).hexdigest() + ".png"
            self._cache_store(index_file.parent / name, blob)
            names.append(name)
        self._cache_store(index_file, json.dumps({"images": names}).encode("utf-8"))
        return [index_file.parent / name for name in names]

    def _cache_probe(self, path: Path) -> dict | None:
        try:
            if path.is_file():
                return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            log.warning("cache probe failed for %s: %s", path, exc)
        return None

    def _cache_store(self, path: Path, data: bytes):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, data)
        except OSError as exc:
            log.warning("cache write failed for %s (continuing uncached): %s", path, exc)


# ---------------------------------------------------------------------------
# Deterministic mock backends (no network IO, ever)
# ---------------------------------------------------------------------------

_VQA_STRUCTURES = ("lamellar", "granular", "dendritic", "columnar", "porous",
                   "banded", "cellular", "fibrous")
_VQA_TEXTURES = ("smooth", "rough", "striated", "mottled", "faceted", "wavy")
_VQA_SCALES = ("sub-micron", "micron-scale", "tens of nanometers",
               "hundreds of nanometers")


class MockVqaBackend:
    """Answers any structured question from a template keyed on
    (question text, image digest): same inputs, same answer."""

    name = "mock-vqa"

    def complete(self, req: ChatRequest) -> str:
        question = ""
        image_digest = ""
        for part in req.parts:
            if part.kind == "image":
                image_digest = hashlib.sha256(part.data).hexdigest()
            elif part.text:
                question = part.text
        seed_hex = hashlib.sha256(
            (question + "\x00" + image_digest).encode("utf-8")).hexdigest()
        rng = np.random.default_rng(int(seed_hex[:16], 16))
        structure = _VQA_STRUCTURES[int(rng.integers(len(_VQA_STRUCTURES)))]
        texture = _VQA_TEXTURES[int(rng.integers(len(_VQA_TEXTURES)))]
        scale = _VQA_SCALES[int(rng.integers(len(_VQA_SCALES)))]
        return (f"The micrograph shows a {structure} arrangement with a {texture} "
                f"surface at {scale} resolution; features are consistent across "
                f"the field of view (signature {seed_hex[:12]}).")


class MockClassifierBackend:
    """Few-shot classifier stand-in: embeds the query with the real encoder
    and ranks labels by summed cosine similarity of their demonstrations.

    Labels without demonstrations rank last, in label order. Acts as the
    1-NN oracle when exactly one demonstration is supplied per query.
    """

    name = "mock-classifier"

    def __init__(self, store: EmbeddingStore, checkpoint: EncoderCheckpoint):
        self.store = store
        self.checkpoint = checkpoint
        self._embed_cache: dict[str, np.ndarray] = {}

    def _embed(self, image_bytes: bytes) -> np.ndarray:
        key = hashlib.sha256(image_bytes).hexdigest()
        if key not in self._embed_cache:
            cfg = self.checkpoint.config
            with Image.open(io.BytesIO(image_bytes)) as img:
                if img.mode in ("L", "1", "I", "I;16", "F"):
                    img = img.convert("L")
                else:
                    img = img.convert("RGB")
                arr = np.asarray(img, dtype=np.float64) / 255.0
            if arr.ndim == 2:
                arr = arr[:, :, None]
            arr = dataio.resize_bilinear(arr, cfg.image_height, cfg.image_width)
            arr = dataio.ensure_channels(2.0 * arr - 1.0, cfg.channels)
            self._embed_cache[key] = forward(arr, self.checkpoint.params, cfg)
        return self._embed_cache[key]

    @staticmethod
    def _parse(req: ChatRequest):
        demos: list[tuple[bytes, str]] = []
        query: bytes | None = None
        label_set: list[str] = []
        pending_image: bytes | None = None
        for part in req.parts:
            if part.kind == "image":
                if pending_image is not None:
                    query = pending_image  # image without a label: the query
                pending_image = part.data
            elif part.text.startswith("Label: "):
                if pending_image is None:
                    raise BackendError("label text without a preceding image")
                demos.append((pending_image, part.text[len("Label: "):]))
                pending_image = None
            elif "chosen from: " in part.text:
                tail = part.text.split("chosen from: ", 1)[1].rstrip(".")
                label_set = [s.strip() for s in tail.split(",") if s.strip()]
        if pending_image is not None:
            query = pending_image
        if query is None:
            raise BackendError("few-shot request has no query image")
        if not label_set:
            label_set = sorted({label for _, label in demos})
        return demos, query, label_set

    def complete(self, req: ChatRequest) -> str:
        demos, query, label_set = self._parse(req)
        query_emb = self._embed(query)
        scores: dict[str, float] = {}
        for image_bytes, label in demos:
            if label not in label_set:
                continue
            sim = cosine(query_emb, self._embed(image_bytes))
            scores[label] = scores.get(label, 0.0) + sim
        with_demos = sorted(scores, key=lambda lab: (-scores[lab], lab))
        without = sorted(lab for lab in label_set if lab not in scores)
        ranking = (with_demos + without)[:5]
        return "\n".join(f"{i + 1}. {label}" for i, label in enumerate(ranking))


class MockImageGenBackend:
    """Renders seeded procedural textures; the family is picked by hashing
    the prompt, and image i draws from seed (hash, i) so a multi-image
    request yields pairwise-distinct outputs."""

    name = "mock-imagegen"

    def generate(self, req: ImageGenRequest) -> list[bytes]:
        digest = hashlib.sha256(req.prompt.encode("utf-8")).hexdigest()
        families = list(dataio.TEXTURE_FAMILIES.values())
        family = families[int(digest[:8], 16) % len(families)]
        blobs = []
        for i in range(req.count):
            rng = np.random.default_rng([int(digest[:8], 16), i])
            tex = family(req.size, rng)
            tex = np.clip(tex + rng.normal(0.0, 0.02, tex.shape), 0.0, 1.0)
            data = np.round(tex * 255.0).astype(np.uint8)
            buf = io.BytesIO()
            Image.fromarray(data, mode="L").save(buf, format="PNG")
            blobs.append(buf.getvalue())
        return blobs


class HttpChatBackend:
    """Minimal JSON-over-HTTPS chat backend ("gpt4v-like").

    POSTs {parts, params} with bearer auth to ``NMID_BACKEND_URL`` and
    expects {"text": ...} back. Never used by the test suite.
    """

    name = "gpt4v-like"

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 30.0):
        self.base_url = base_url or os.environ.get("NMID_BACKEND_URL", "")
        self.api_key = api_key or os.environ.get("NMID_BACKEND_KEY", "")
        self.timeout = timeout
        if not self.base_url:
            raise GatewayError(
                "gpt4v-like backend needs NMID_BACKEND_URL (and NMID_BACKEND_KEY)")

    def complete(self, req: ChatRequest) -> str:
        import base64

        import requests

        payload_parts = []
        for p in req.parts:
            if p.kind == "text":
                payload_parts.append({"type": "text", "text": p.text})
            else:
                payload_parts.append({
                    "type": "image",
                    "mime": p.mime,
                    "data": base64.b64encode(p.data).decode("ascii"),
                })
        try:
            resp = requests.post(
                self.base_url.rstrip("/") + "/chat",
                json={"parts": payload_parts, "params": req.params},
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["text"]
        except Exception as exc:  # noqa: BLE001 - any transport error is retryable
            raise BackendError(str(exc)) from exc


def make_chat_backend(name: str, *, store: EmbeddingStore | None = None,
                      checkpoint: EncoderCheckpoint | None = None):
    if name == "mock-vqa":
        return MockVqaBackend()
    if name == "mock-classifier":
        if store is None or checkpoint is None:
            raise GatewayError("mock-classifier needs an embedding store and checkpoint")
        return MockClassifierBackend(store, checkpoint)
    if name == "gpt4v-like":
        return HttpChatBackend()
    raise GatewayError(f"unknown chat backend {name!r}")
