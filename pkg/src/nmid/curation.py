"""Human curation of generated artifacts: review queue, append-only event
log, and the HTTP API the review frontend drives.

Each review item bundles a source image, its label, the generated Q&A
transcript and the synthetic image files awaiting accept/reject. State is
an in-memory projection of ``curation.log.jsonl``; replaying the log
reproduces it exactly, so decisions survive restarts. Decided items are
immutable.
"""

from __future__ import annotations

import hashlib
import json
import mimetypes
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .dataio import DatasetManifest
from .prompts import QaPair, VqaTranscript


class CurationError(Exception):
    pass


class UnknownItem(CurationError):
    pass


class AlreadyDecided(CurationError):
    pass


class InvalidItem(CurationError):
    pass


VERDICTS = ("accept", "reject")


@dataclass
class Decision:
    verdict: str
    note: str
    ts: float


@dataclass
class ReviewItem:
    id: str
    source_image: str
    label: str
    transcript: VqaTranscript
    synthetic_refs: list[str]
    status: str = "pending"
    decision: Decision | None = None
    enqueued_ts: float = 0.0


def _transcript_rows(transcript: VqaTranscript) -> list[dict]:
    return [
        {"prompt_id": p.prompt_id, "question": p.question, "answer": p.answer}
        for p in transcript.pairs
    ]


def _item_payload(source_image: str, label: str, transcript: VqaTranscript,
                  synthetic_refs: list[str], salt: str = "") -> dict:
    payload = {
        "source_image": source_image,
        "label": label,
        "transcript": {
            "image_id": transcript.image_id,
            "backend": transcript.backend,
            "pairs": _transcript_rows(transcript),
        },
        "synthetic_refs": list(synthetic_refs),
    }
    if salt:
        # corrections to a decided item re-enter the queue as a new id
        payload["salt"] = salt
    return payload


def _content_id(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class CurationQueue:
    """Single-writer review queue backed by an append-only JSONL log."""

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self._lock = threading.Lock()
        self._items: dict[str, ReviewItem] = {}
        self._order: list[str] = []
        self._assets: dict[str, str] = {}  # content digest -> file path
        if self.log_path.is_file():
            self._replay()

    # -- event handling ------------------------------------------------------

    def _append_event(self, event: dict):
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()

    def _replay(self):
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["event"] == "enqueued":
                    self._apply_enqueue(event["payload"], event["ts"])
                elif event["event"] == "decided":
                    self._apply_decide(event["id"], event["payload"], event["ts"])

    def _apply_enqueue(self, payload: dict, ts: float) -> str:
        item_id = _content_id(payload)
        if item_id in self._items:
            return item_id  # idempotent re-enqueue
        transcript = VqaTranscript(
            image_id=payload["transcript"]["image_id"],
            backend=payload["transcript"]["backend"],
            pairs=[QaPair(**row) for row in payload["transcript"]["pairs"]],
        )
        item = ReviewItem(
            id=item_id,
            source_image=payload["source_image"],
            label=payload["label"],
            transcript=transcript,
            synthetic_refs=list(payload["synthetic_refs"]),
            enqueued_ts=ts,
        )
        self._items[item_id] = item
        self._order.append(item_id)
        self._register_asset(item.source_image)
        for ref in item.synthetic_refs:
            self._register_asset(ref)
        return item_id

    def _apply_decide(self, item_id: str, payload: dict, ts: float) -> ReviewItem:
        item = self._items.get(item_id)
        if item is None:
            raise UnknownItem(item_id)
        if item.status != "pending":
            raise AlreadyDecided(item_id)
        verdict = payload["verdict"]
        if verdict not in VERDICTS:
            raise InvalidItem(f"verdict must be one of {VERDICTS}")
        item.status = "accepted" if verdict == "accept" else "rejected"
        item.decision = Decision(verdict=verdict, note=payload.get("note", ""), ts=ts)
        return item

    def _register_asset(self, path_str: str):
        path = Path(path_str)
        if path.is_file():
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            self._assets[digest] = str(path)

    # -- public API ----------------------------------------------------------

    def enqueue(self, source_image: str, label: str, transcript: VqaTranscript,
                synthetic_refs: list[str], ts: float | None = None,
                salt: str = "") -> str:
        if not transcript.pairs:
            raise InvalidItem("item needs a non-empty transcript")
        if not synthetic_refs:
            raise InvalidItem("item needs at least one synthetic image")
        payload = _item_payload(source_image, label, transcript, synthetic_refs, salt)
        with self._lock:
            item_id = _content_id(payload)
            if item_id in self._items:
                return item_id
            ts = time.time() if ts is None else ts
            self._apply_enqueue(payload, ts)
            self._append_event({"event": "enqueued", "id": item_id,
                                "payload": payload, "ts": ts})
            return item_id

    def decide(self, item_id: str, verdict: str, note: str = "",
               ts: float | None = None) -> ReviewItem:
        with self._lock:
            ts = time.time() if ts is None else ts
            item = self._apply_decide(item_id, {"verdict": verdict, "note": note}, ts)
            self._append_event({"event": "decided", "id": item_id,
                                "payload": {"verdict": verdict, "note": note},
                                "ts": ts})
            return item

    def get(self, item_id: str) -> ReviewItem:
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise UnknownItem(item_id)
            return item

    def list_items(self, status: str | None = None) -> list[ReviewItem]:
        with self._lock:
            items = [self._items[i] for i in self._order]
        if status:
            items = [it for it in items if it.status == status]
        return items

    def asset_path(self, digest: str) -> str | None:
        return self._assets.get(digest)

    def asset_digest(self, path_str: str) -> str | None:
        for digest, path in self._assets.items():
            if path == path_str:
                return digest
        return None


def build_augmented_manifest(train_manifest: DatasetManifest | None,
                             queue: CurationQueue) -> list[dict]:
    """Original train records plus accepted synthetics, decision order.

    Accepted synthetic images inherit their source image's label; pending
    and rejected items contribute nothing.
    """
    records: list[dict] = []
    if train_manifest is not None:
        for rec in train_manifest.by_split("train"):
            records.append({
                "id": rec.id, "path": rec.path, "label": rec.label,
                "split": "train", "hardness": rec.hardness, "provenance": None,
            })
    accepted = [it for it in queue.list_items("accepted")]
    accepted.sort(key=lambda it: (it.decision.ts, it.id))
    for item in accepted:
        for ref in item.synthetic_refs:
            if not Path(ref).is_file():
                raise CurationError(f"accepted synthetic file missing: {ref}")
            records.append({
                "id": f"synthetic/{item.id[:12]}/{Path(ref).name}",
                "path": ref, "label": item.label, "split": "train",
                "hardness": None, "provenance": item.id,
            })
    return records


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------


def _item_summary(queue: CurationQueue, item: ReviewItem) -> dict:
    digest = queue.asset_digest(item.source_image)
    return {
        "id": item.id,
        "label": item.label,
        "status": item.status,
        "enqueued_ts": item.enqueued_ts,
        "thumbnail": f"/assets/{digest}" if digest else None,
    }


def _item_detail(queue: CurationQueue, item: ReviewItem) -> dict:
    src_digest = queue.asset_digest(item.source_image)
    synths = []
    for ref in item.synthetic_refs:
        digest = queue.asset_digest(ref)
        synths.append({"path": ref, "asset": f"/assets/{digest}" if digest else None})
    detail = _item_summary(queue, item)
    detail.update({
        "source_image": {"path": item.source_image,
                         "asset": f"/assets/{src_digest}" if src_digest else None},
        "transcript": _transcript_rows(item.transcript),
        "synthetics": synths,
        "decision": (
            {"verdict": item.decision.verdict, "note": item.decision.note,
             "ts": item.decision.ts} if item.decision else None),
    })
    return detail


class _Handler(BaseHTTPRequestHandler):
    server_version = "nmid-curation/1"

    # The server instance carries: queue, manifest, ui_dir, token.

    def log_message(self, fmt, *args):  # quiet the default stderr chatter
        pass

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Authorization")

    def _send_json(self, status: int, body: dict | list):
        blob = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _send_bytes(self, status: int, blob: bytes, content_type: str):
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _authorized(self) -> bool:
        token = self.server.token
        if not token:
            return True
        header = self.headers.get("Authorization", "")
        return header == f"Bearer {token}"

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvalidItem(f"malformed JSON body: {exc}") from exc

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/" or url.path == "/ui":
                self.send_response(302)
                self._cors()
                self.send_header("Location", "/ui/")
                self.end_headers()
                return
            if parts and parts[0] == "ui":
                return self._serve_ui(parts[1:])
            if parts and parts[0] == "assets" and len(parts) == 2:
                return self._serve_asset(parts[1])
            if not self._authorized():
                return self._send_json(401, {"error": "unauthorized"})
            if url.path == "/api/queue":
                status = parse_qs(url.query).get("status", [None])[0]
                items = self.server.queue.list_items(status)
                return self._send_json(200, {
                    "items": [_item_summary(self.server.queue, it) for it in items]})
            if len(parts) == 3 and parts[:2] == ["api", "items"]:
                item = self.server.queue.get(parts[2])
                return self._send_json(200, _item_detail(self.server.queue, item))
            if url.path == "/api/manifest/augmented":
                records = build_augmented_manifest(
                    self.server.manifest, self.server.queue)
                return self._send_json(200, {"records": records})
            self._send_json(404, {"error": "no such route"})
        except UnknownItem:
            self._send_json(404, {"error": "unknown item"})
        except CurationError as exc:
            self._send_json(400, {"error": str(exc)})

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if not self._authorized():
                return self._send_json(401, {"error": "unauthorized"})
            if url.path == "/api/items":
                body = self._read_body()
                transcript = VqaTranscript(
                    image_id=body["transcript"]["image_id"],
                    backend=body["transcript"].get("backend", "unknown"),
                    pairs=[QaPair(**row) for row in body["transcript"]["pairs"]],
                )
                item_id = self.server.queue.enqueue(
                    source_image=body["source_image"], label=body["label"],
                    transcript=transcript,
                    synthetic_refs=body["synthetic_refs"],
                    salt=body.get("salt", ""))
                return self._send_json(201, {"id": item_id})
            if len(parts) == 4 and parts[:2] == ["api", "items"] and parts[3] == "decision":
                body = self._read_body()
                verdict = body.get("verdict")
                if verdict not in VERDICTS:
                    return self._send_json(400, {"error": "verdict must be accept or reject"})
                item = self.server.queue.decide(parts[2], verdict, body.get("note", ""))
                return self._send_json(200, _item_detail(self.server.queue, item))
            self._send_json(404, {"error": "no such route"})
        except UnknownItem:
            self._send_json(404, {"error": "unknown item"})
        except AlreadyDecided:
            self._send_json(409, {"error": "item already decided"})
        except (InvalidItem, KeyError, TypeError) as exc:
            self._send_json(400, {"error": f"malformed item: {exc}"})
        except CurationError as exc:
            self._send_json(400, {"error": str(exc)})

    def _serve_asset(self, digest: str):
        path = self.server.queue.asset_path(digest)
        if path is None or not Path(path).is_file():
            return self._send_json(404, {"error": "unknown asset"})
        content_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        self._send_bytes(200, Path(path).read_bytes(), content_type)

    def _serve_ui(self, rel_parts: list[str]):
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            return self._send_json(404, {"error": "no UI bundled"})
        rel = "/".join(rel_parts) or "index.html"
        target = (Path(ui_dir) / rel).resolve()
        if not str(target).startswith(str(Path(ui_dir).resolve())) or not target.is_file():
            return self._send_json(404, {"error": "no such file"})
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self._send_bytes(200, target.read_bytes(), content_type)


class CurationServer:
    """Embeddable HTTP server around a CurationQueue."""

    def __init__(self, queue: CurationQueue, host: str = "127.0.0.1",
                 port: int = 0, manifest: DatasetManifest | None = None,
                 ui_dir: str | Path | None = None, token: str | None = None):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.queue = queue
        self._httpd.manifest = manifest
        self._httpd.ui_dir = str(ui_dir) if ui_dir else None
        self._httpd.token = token
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self):
        self._httpd.serve_forever()


def serve(log_path: str | Path, host: str = "127.0.0.1", port: int = 8077,
          manifest: DatasetManifest | None = None,
          ui_dir: str | Path | None = None, token: str | None = None):
    """Blocking entry point used by the CLI's review-serve subcommand."""
    queue = CurationQueue(log_path)
    server = CurationServer(queue, host=host, port=port, manifest=manifest,
                            ui_dir=ui_dir, token=token)
    print(f"curation API listening on {server.url} "
          f"({len(queue.list_items())} items in queue)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
