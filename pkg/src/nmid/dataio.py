"""Dataset loading, preprocessing and the seeded synthetic texture corpus.

Datasets are plain directory trees, one subdirectory per category::

    <root>/<label>/<image>.png|jpg

Manifests are JSON Lines, one record per image, keys exactly
``id,path,label,split,hardness``. Paths are stored relative to the manifest
file when possible so a dataset directory can be moved as a unit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}
SPLITS = ("train", "test", "unassigned")


class DatasetError(Exception):
    """Raised for unusable dataset directories or malformed manifests."""


@dataclass
class RasterImage:
    """Decoded pixel data: values in [0,1], row-major, channel-interleaved."""

    height: int
    width: int
    channels: int
    pixels: np.ndarray  # flat, length height*width*channels

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).ravel()
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.pixels.size != self.height * self.width * self.channels:
            raise ValueError("pixel buffer does not match declared dimensions")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixel values must lie in [0,1]")

    def as_array(self) -> np.ndarray:
        """View as (height, width, channels) float64."""
        return self.pixels.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(height=h, width=w, channels=c, pixels=arr.ravel())


@dataclass
class ManifestRecord:
    id: str
    path: str
    label: str
    split: str = "unassigned"
    hardness: float | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "label": self.label,
            "split": self.split,
            "hardness": self.hardness,
        }


@dataclass
class DatasetManifest:
    """Per-image records plus the declared label set."""

    records: list[ManifestRecord]
    label_set: list[str]
    skipped: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("manifest ids are not unique")
        labels = set(self.label_set)
        for r in self.records:
            if r.label not in labels:
                raise DatasetError(f"record {r.id} has undeclared label {r.label!r}")
            if r.split not in SPLITS:
                raise DatasetError(f"record {r.id} has invalid split {r.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def save(self, path: str | Path) -> Path:
        """Write JSONL; record paths are relativized to the manifest's directory."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                rec = r.to_json()
                p = Path(rec["path"])
                if p.is_absolute():
                    try:
                        rec["path"] = p.resolve().relative_to(base).as_posix()
                    except ValueError:
                        rec["path"] = p.as_posix()
                fh.write(json.dumps(rec) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"manifest not found: {path}")
        base = path.parent.resolve()
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                p = Path(raw["path"])
                if not p.is_absolute():
                    p = base / p
                records.append(
                    ManifestRecord(
                        id=raw["id"],
                        path=str(p),
                        label=raw["label"],
                        split=raw.get("split", "unassigned"),
                        hardness=raw.get("hardness"),
                    )
                )
        label_set = sorted({r.label for r in records})
        manifest = cls(records=records, label_set=label_set)
        for r in manifest.records:
            if not Path(r.path).is_file():
                raise DatasetError(f"manifest path not resolvable: {r.path}")
        return manifest


@dataclass
class PreprocessConfig:
    target_height: int = 224
    target_width: int = 224
    mode: str = "mining-zscore"  # or "encoder-signed"

    def __post_init__(self):
        if self.target_height <= 0 or self.target_width <= 0:
            raise ValueError("target dimensions must be positive")
        if self.mode not in ("mining-zscore", "encoder-signed"):
            raise ValueError(f"unknown preprocess mode {self.mode!r}")


def decode_image(path: str | Path) -> RasterImage:
    """Decode PNG/JPEG into a RasterImage (grayscale stays 1-channel)."""
    with Image.open(path) as img:
        if img.mode in ("L", "1", "I", "I;16", "F"):
            img = img.convert("L")
        else:
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return RasterImage.from_array(arr)


def resize_bilinear(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize of an (H,W,C) array using half-pixel sample centers.

    Idempotent when the source already has the target dimensions.
    """
    h, w, _ = arr.shape
    if (h, w) == (target_h, target_w):
        return arr.copy()

    def axis_weights(src: int, dst: int):
        coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        coords = np.clip(coords, 0.0, src - 1.0)
        lo = np.floor(coords).astype(np.intp)
        hi = np.minimum(lo + 1, src - 1)
        frac = coords - lo
        return lo, hi, frac

    y0, y1, fy = axis_weights(h, target_h)
    x0, x1, fx = axis_weights(w, target_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def ensure_channels(arr: np.ndarray, channels: int) -> np.ndarray:
    """Replicate grayscale to 3 channels (or average down to 1) on demand."""
    if arr.shape[2] == channels:
        return arr
    if arr.shape[2] == 1 and channels == 3:
        return np.repeat(arr, 3, axis=2)
    if arr.shape[2] == 3 and channels == 1:
        return arr.mean(axis=2, keepdims=True)
    raise ValueError(f"cannot adapt {arr.shape[2]} channels to {channels}")


def load_dataset(root_dir: str | Path) -> DatasetManifest:
    """Scan ``<root>/<label>/<image>`` into a manifest, split=unassigned.

    Undecodable files are excluded and reported on ``manifest.skipped``;
    an empty category or a missing root is an error. Ordering is
    lexicographic by path, so the manifest is a pure function of the
    directory contents.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    categories = sorted(p for p in root.iterdir() if p.is_dir())
    if not categories:
        raise DatasetError(f"dataset root has no category subdirectories: {root}")

    records: list[ManifestRecord] = []
    skipped: list[str] = []
    for cat in categories:
        files = sorted(
            p for p in cat.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        kept = 0
        for f in files:
            try:
                with Image.open(f) as img:
                    img.verify()
            except Exception:
                log.warning("skipping undecodable image: %s", f)
                skipped.append(str(f))
                continue
            rid = f.relative_to(root).as_posix()
            records.append(ManifestRecord(id=rid, path=str(f), label=cat.name))
            kept += 1
        if kept == 0:
            raise DatasetError(f"category {cat.name!r} contains no decodable images")

    manifest = DatasetManifest(
        records=records, label_set=[c.name for c in categories]
    )
    manifest.skipped = skipped
    return manifest


def preprocess_mining(img: RasterImage, cfg: PreprocessConfig) -> tuple[np.ndarray, bool]:
    """Resize + per-image z-score (population variance), flattened row-major.

    Returns ``(vector, zero_variance)``. A constant image maps to the
    all-zeros vector with the flag set instead of erroring, so mining
    never aborts on degenerate inputs.
    """
    if cfg.mode != "mining-zscore":
        raise ValueError("preprocess_mining requires mode 'mining-zscore'")
    arr = resize_bilinear(img.as_array(), cfg.target_height, cfg.target_width)
    mu = arr.mean()
    sigma = arr.std()  # population convention (divide by n)
    if sigma == 0.0:
        return np.zeros(arr.size, dtype=np.float64), True
    return ((arr - mu) / sigma).ravel(), False


def preprocess_encoder(img: RasterImage, cfg: PreprocessConfig) -> np.ndarray:
    """Resize and map [0,1] pixels to the signed [-1,1] range (x -> 2x-1)."""
    if cfg.mode != "encoder-signed":
        raise ValueError("preprocess_encoder requires mode 'encoder-signed'")
    arr = resize_bilinear(img.as_array(), cfg.target_height, cfg.target_width)
    return 2.0 * arr - 1.0


# ---------------------------------------------------------------------------
# Synthetic texture corpus
# ---------------------------------------------------------------------------
# One generator family per class. Each family draws jittered parameters from
# its own seeded Generator so files are bit-identical across runs.


def _coords(size: int):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return x, y


# Each family is a canonical pattern with small seeded jitter: enough
# variation that images within a class differ, little enough that raw
# pixel distance keeps classes tightly grouped (1-NN separable).


def _tex_stripes(size, rng):
    x, y = _coords(size)
    theta = np.pi / 6 + rng.uniform(-0.06, 0.06)
    freq = rng.uniform(4.8, 5.2) / size
    phase = rng.uniform(0, 0.5)
    t = np.cos(theta) * x + np.sin(theta) * y
    return 0.5 + 0.5 * np.sin(2 * np.pi * freq * t + phase)


def _tex_blobs(size, rng):
    x, y = _coords(size)
    anchors = np.array([[0.25, 0.3], [0.7, 0.25], [0.5, 0.62], [0.2, 0.8], [0.82, 0.78]])
    out = np.zeros((size, size))
    for ax, ay in anchors:
        cx = ax * size + rng.uniform(-size / 16, size / 16)
        cy = ay * size + rng.uniform(-size / 16, size / 16)
        s = size * rng.uniform(0.11, 0.13)
        out += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    out -= out.min()
    peak = out.max()
    return out / peak if peak > 0 else out


def _tex_grid(size, rng):
    x, y = _coords(size)
    period = size / 7 + rng.uniform(-0.5, 0.5)
    width = period * rng.uniform(0.18, 0.22)
    ox, oy = rng.uniform(0, period / 4, 2)
    lines = ((x + ox) % period < width) | ((y + oy) % period < width)
    return np.where(lines, 0.15, 0.85)


def _tex_speckle(size, rng):
    # low-contrast correlated noise around mid-gray: the contrast level,
    # not the exact speckle layout, is the class signature
    noise = rng.random((size + 2, size + 2)) - 0.5
    acc = np.zeros((size, size))
    for dy in range(3):
        for dx in range(3):
            acc += noise[dy:dy + size, dx:dx + size]
    return np.clip(0.5 + acc * (0.28 / 3.0), 0.0, 1.0)


def _tex_rings(size, rng):
    x, y = _coords(size)
    cx = size / 2 + rng.uniform(-size / 32, size / 32)
    cy = size / 2 + rng.uniform(-size / 32, size / 32)
    lam = size / 9 + rng.uniform(-0.4, 0.4)
    r = np.hypot(x - cx, y - cy)
    return 0.5 + 0.5 * np.sin(2 * np.pi * r / lam)


def _tex_checker(size, rng):
    x, y = _coords(size)
    period = size / 6 + rng.uniform(-0.4, 0.4)
    ox, oy = rng.uniform(0, period / 8, 2)
    parity = (np.floor((x + ox) / period) + np.floor((y + oy) / period)) % 2
    return np.where(parity > 0, 0.8, 0.2)


def _tex_waves(size, rng):
    x, y = _coords(size)
    f = rng.uniform(3.9, 4.1) / size
    g = rng.uniform(1.9, 2.1) / size
    amp = rng.uniform(2.8, 3.2)
    phase = rng.uniform(0, 0.4)
    return 0.5 + 0.5 * np.sin(2 * np.pi * f * x + amp * np.sin(2 * np.pi * g * y) + phase)


def _tex_cells(size, rng):
    x, y = _coords(size)
    anchors = np.array([
        [0.15, 0.2], [0.5, 0.12], [0.85, 0.25], [0.2, 0.55], [0.55, 0.45],
        [0.88, 0.6], [0.12, 0.85], [0.45, 0.8], [0.8, 0.9],
    ])
    sx = anchors[:, 0] * size + rng.uniform(-size / 20, size / 20, len(anchors))
    sy = anchors[:, 1] * size + rng.uniform(-size / 20, size / 20, len(anchors))
    d = np.min(
        np.sqrt((x[None] - sx[:, None, None]) ** 2 + (y[None] - sy[:, None, None]) ** 2),
        axis=0,
    )
    return d / d.max()


def _tex_dots(size, rng):
    x, y = _coords(size)
    period = size / 6 + rng.uniform(-0.3, 0.3)
    sigma = period * rng.uniform(0.2, 0.23)
    ox, oy = rng.uniform(0, period / 8, 2)
    dx = ((x + ox) % period) - period / 2
    dy = ((y + oy) % period) - period / 2
    return np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))


def _tex_hatch(size, rng):
    x, y = _coords(size)
    f = rng.uniform(4.9, 5.1) / size
    phase1, phase2 = rng.uniform(0, 0.4, 2)
    a = 0.5 + 0.5 * np.sin(2 * np.pi * f * (x + y) / np.sqrt(2) + phase1)
    b = 0.5 + 0.5 * np.sin(2 * np.pi * f * (x - y) / np.sqrt(2) + phase2)
    return np.minimum(a, b)


def _tex_steps(size, rng):
    x, y = _coords(size)
    n_bands = 5
    theta = 1.2 + rng.uniform(-0.05, 0.05)
    t = np.cos(theta) * x + np.sin(theta) * y
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    t = np.minimum(t + rng.uniform(0, 0.04), 1.0)
    return np.floor(t * n_bands) / (n_bands - 1) * (n_bands - 1) / n_bands


TEXTURE_FAMILIES: dict[str, callable] = {
    "stripes": _tex_stripes,
    "blobs": _tex_blobs,
    "grid": _tex_grid,
    "speckle": _tex_speckle,
    "rings": _tex_rings,
    "checker": _tex_checker,
    "waves": _tex_waves,
    "cells": _tex_cells,
    "dots": _tex_dots,
    "hatch": _tex_hatch,
    "steps": _tex_steps,
}


def generate_synthetic_dataset(
    out_dir: str | Path,
    n_classes: int,
    per_class: int,
    size: int,
    seed: int,
) -> DatasetManifest:
    """Write a seeded grayscale texture dataset and return its manifest.

    One generator family per class; per-image jitter comes from a
    Generator seeded with (seed, class index, image index), so output
    files are bit-identical across runs with an equal seed.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if per_class < 2:
        raise ValueError("per_class must be >= 2")
    if n_classes > len(TEXTURE_FAMILIES):
        raise ValueError(
            f"at most {len(TEXTURE_FAMILIES)} texture families available"
        )
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"output directory not writable: {out}") from exc

    families = list(TEXTURE_FAMILIES.items())[:n_classes]
    records = []
    for ci, (label, generator) in enumerate(families):
        cat_dir = out / label
        cat_dir.mkdir(exist_ok=True)
        for ii in range(per_class):
            rng = np.random.default_rng([seed, ci, ii])
            tex = generator(size, rng)
            tex = tex + rng.normal(0.0, 0.02, tex.shape)
            tex = np.clip(tex, 0.0, 1.0)
            data = np.round(tex * 255.0).astype(np.uint8)
            fname = f"{label}_{ii:03d}.png"
            Image.fromarray(data, mode="L").save(cat_dir / fname, format="PNG")
            records.append(
                ManifestRecord(id=f"{label}/{fname}", path=str(cat_dir / fname), label=label)
            )
    return DatasetManifest(records=records, label_set=[f[0] for f in families])
