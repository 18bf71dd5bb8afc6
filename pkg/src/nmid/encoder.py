"""Micrograph encoder: patch tokens, cls token, local/global attention.

The image is cut into non-overlapping P x P patches (n = HW/P^2 tokens),
linearly embedded, given learned positional embeddings and a prepended
cls token. Each layer runs two attention stages:

* local  — multi-head scaled dot-product attention over patch tokens
  only, masked to a Chebyshev window on the patch grid (cls excluded),
* global — attention over the full sequence masked so the cls token
  attends to every token and every token attends to cls,

each followed by residual + layer norm + a 2-layer GELU feed-forward
block with its own residual + layer norm. The cls row of the final
sequence is the holistic image embedding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat, gelu, layer_norm, softmax

CHECKPOINT_MAGIC = "NMID-CKPT"
CHECKPOINT_VERSION = 1


class EncoderError(Exception):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class EncoderConfig:
    image_height: int = 224
    image_width: int = 224
    channels: int = 3
    patch_size: int = 32
    embed_dim: int = 128
    layers: int = 2
    heads: int = 4
    head_dim: int = 32
    local_window: int = 2
    ffn_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.embed_dim
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError("image dimensions must be divisible by patch_size")
        if self.heads * self.head_dim != self.embed_dim:
            raise ValueError("heads * head_dim must equal embed_dim")
        if self.local_window < 1:
            raise ValueError("local_window must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def grid_rows(self) -> int:
        return self.image_height // self.patch_size

    @property
    def grid_cols(self) -> int:
        return self.image_width // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass
class PatchSequence:
    tokens: np.ndarray  # (n, P*P*C)
    grid: tuple[int, int]


class ParameterSet:
    """Named float64 tensors in a fixed order."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays: dict[str, np.ndarray] = {}
        for name, arr in arrays.items():
            if name in self._arrays:
                raise ValueError(f"duplicate parameter name {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"parameter {name!r} contains non-finite values")
            self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self._arrays.items()}

    def n_values(self) -> int:
        return sum(v.size for v in self._arrays.values())


@dataclass
class EncoderCheckpoint:
    params: ParameterSet
    config: EncoderConfig


def expected_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.embed_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (cfg.patch_dim, d),
        "patch_embed.bias": (d,),
        "pos_embed": (cfg.n_patches + 1, d),
        "cls_token": (d,),
    }
    for i in range(cfg.layers):
        for stage in ("local", "global"):
            p = f"layers.{i}.{stage}"
            for proj in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}.attn.{proj}"] = (d, d)
            for bias in ("bq", "bk", "bv", "bo"):
                shapes[f"{p}.attn.{bias}"] = (d,)
            shapes[f"{p}.ln1.scale"] = (d,)
            shapes[f"{p}.ln1.offset"] = (d,)
            shapes[f"{p}.ffn.w1"] = (d, f)
            shapes[f"{p}.ffn.b1"] = (f,)
            shapes[f"{p}.ffn.w2"] = (f, d)
            shapes[f"{p}.ffn.b2"] = (d,)
            shapes[f"{p}.ln2.scale"] = (d,)
            shapes[f"{p}.ln2.offset"] = (d,)
    return shapes


def validate_params(params: ParameterSet, cfg: EncoderConfig):
    expected = expected_shapes(cfg)
    if params.names() != list(expected):
        raise EncoderError("parameter names do not match the encoder config")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise EncoderError(
                f"shape mismatch for {name!r}: got {params[name].shape}, want {shape}"
            )


def init_params(cfg: EncoderConfig) -> ParameterSet:
    """Seeded Xavier-uniform projections, N(0,0.02) pos/cls, identity norms."""
    rng = np.random.default_rng(cfg.seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(cfg).items():
        if name == "pos_embed" or name == "cls_token":
            arrays[name] = rng.normal(0.0, 0.02, shape)
        elif name.endswith(".scale"):
            arrays[name] = np.ones(shape)
        elif len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, shape)
        else:
            arrays[name] = np.zeros(shape)
    return ParameterSet(arrays)


def tokenize(img: np.ndarray, cfg: EncoderConfig) -> PatchSequence:
    """Cut an (H,W,C) image into flattened patches in raster order."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise EncoderError(f"image dims {h}x{w} not divisible by patch size {p}")
    rows, cols = h // p, w // p
    tokens = (
        img.reshape(rows, p, cols, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, p * p * c)
    )
    return PatchSequence(tokens=tokens, grid=(rows, cols))


def local_attention_mask(rows: int, cols: int, window: int) -> np.ndarray:
    """(n,n) additive mask: 0 inside the Chebyshev window, -inf outside."""
    r = np.arange(rows * cols) // cols
    c = np.arange(rows * cols) % cols
    cheb = np.maximum(
        np.abs(r[:, None] - r[None, :]), np.abs(c[:, None] - c[None, :])
    )
    return np.where(cheb <= window, 0.0, -np.inf)


def global_attention_mask(n_tokens: int) -> np.ndarray:
    """cls (row 0) sees everything; every other token sees only cls."""
    allowed = np.zeros((n_tokens, n_tokens), dtype=bool)
    allowed[0, :] = True
    allowed[:, 0] = True
    return np.where(allowed, 0.0, -np.inf)


def _mha(x: Tensor, params: dict[str, Tensor], prefix: str, mask: np.ndarray,
         cfg: EncoderConfig, capture: list | None = None, tag: str = "") -> Tensor:
    b, t, d = x.shape
    h, dh = cfg.heads, cfg.head_dim

    def heads_of(proj: str) -> Tensor:
        y = x @ params[f"{prefix}.attn.w{proj}"] + params[f"{prefix}.attn.b{proj}"]
        return y.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

    q, k, v = heads_of("q"), heads_of("k"), heads_of("v")
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)) + Tensor(mask)
    weights = softmax(scores, axis=-1)
    if capture is not None:
        capture.append((tag, weights.data.copy()))
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return ctx @ params[f"{prefix}.attn.wo"] + params[f"{prefix}.attn.bo"]


def _ffn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = gelu(x @ params[f"{prefix}.ffn.w1"] + params[f"{prefix}.ffn.b1"])
    return hidden @ params[f"{prefix}.ffn.w2"] + params[f"{prefix}.ffn.b2"]


def _stage(x: Tensor, params: dict[str, Tensor], prefix: str, mask: np.ndarray,
           cfg: EncoderConfig, capture=None, tag="") -> Tensor:
    attended = _mha(x, params, prefix, mask, cfg, capture, tag)
    x = layer_norm(x + attended, params[f"{prefix}.ln1.scale"], params[f"{prefix}.ln1.offset"])
    fed = _ffn(x, params, prefix)
    return layer_norm(x + fed, params[f"{prefix}.ln2.scale"], params[f"{prefix}.ln2.offset"])


def encode_batch(batch: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig,
                 capture: list | None = None) -> Tensor:
    """Differentiable forward over a (B,H,W,C) batch; returns (B,d) cls rows."""
    bsz = batch.shape[0]
    p = cfg.patch_size
    rows, cols = cfg.grid_rows, cfg.grid_cols
    n = rows * cols
    tokens = Tensor(
        batch.reshape(bsz, rows, p, cols, p, cfg.channels)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(bsz, n, cfg.patch_dim)
    )
    emb = tokens @ params["patch_embed.weight"] + params["patch_embed.bias"]
    cls_row = Tensor(np.ones((bsz, 1, 1))) * params["cls_token"].reshape(1, 1, cfg.embed_dim)
    seq = concat([cls_row, emb], axis=1) + params["pos_embed"]

    local_mask = local_attention_mask(rows, cols, cfg.local_window)
    full_mask = global_attention_mask(n + 1)
    for i in range(cfg.layers):
        patches = seq[:, 1:, :]
        patches = _stage(patches, params, f"layers.{i}.local", local_mask, cfg,
                         capture, f"layer{i}.local")
        seq = concat([seq[:, :1, :], patches], axis=1)
        seq = _stage(seq, params, f"layers.{i}.global", full_mask, cfg,
                     capture, f"layer{i}.global")
        if not np.isfinite(seq.data).all():
            raise EncoderError(f"non-finite activations after layer {i}")
    return seq[:, 0, :]


def forward(img: np.ndarray, params: ParameterSet, cfg: EncoderConfig) -> np.ndarray:
    """Embed one preprocessed (H,W,C) image; returns the (d,) cls embedding."""
    return forward_batch([img], params, cfg)[0]


def forward_batch(imgs: list[np.ndarray], params: ParameterSet,
                  cfg: EncoderConfig) -> np.ndarray:
    """Embed a list of images; row i is forward(imgs[i]). Returns (B,d)."""
    validate_params(params, cfg)
    batch = np.stack([np.asarray(im, dtype=np.float64).reshape(
        cfg.image_height, cfg.image_width, cfg.channels) for im in imgs])
    return encode_batch(batch, params.tensors(requires_grad=False), cfg).data


def attention_maps(img: np.ndarray, params: ParameterSet,
                   cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """Attention weights per layer/stage for one image (for inspection)."""
    validate_params(params, cfg)
    captured: list[tuple[str, np.ndarray]] = []
    batch = np.asarray(img, dtype=np.float64).reshape(
        1, cfg.image_height, cfg.image_width, cfg.channels)
    encode_batch(batch, params.tensors(requires_grad=False), cfg, capture=captured)
    return {tag: weights[0] for tag, weights in captured}


# ---------------------------------------------------------------------------
# Checkpoint format: one-line UTF-8 JSON header, then raw little-endian
# float payloads in tensor-table order.
# ---------------------------------------------------------------------------


def save_checkpoint(params: ParameterSet, cfg: EncoderConfig, path: str | Path) -> Path:
    validate_params(params, cfg)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    payloads = []
    offset = 0
    for name, arr in params.items():
        blob = arr.astype("<f8", copy=False).tobytes()
        table.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f64",
            "byte_offset": offset,
            "byte_len": len(blob),
        })
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps({
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_json(),
        "tensor_table": table,
    })
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for blob in payloads:
            fh.write(blob)
    return path


def load_checkpoint(path: str | Path) -> tuple[ParameterSet, EncoderConfig]:
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {path}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    cfg = EncoderConfig.from_json(header["config"])
    item_size = {"f64": 8, "f32": 4}
    np_dtype = {"f64": "<f8", "f32": "<f4"}
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensor_table"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if entry["byte_len"] != size * item_size[entry["dtype"]]:
            raise CheckpointError(f"tensor {entry['name']!r} has inconsistent byte_len")
        lo, hi = entry["byte_offset"], entry["byte_offset"] + entry["byte_len"]
        if hi > len(payload):
            raise CheckpointError(f"truncated checkpoint: {path}")
        arrays[entry["name"]] = (
            np.frombuffer(payload[lo:hi], dtype=np_dtype[entry["dtype"]])
            .astype(np.float64)
            .reshape(shape)
        )
    params = ParameterSet(arrays)
    try:
        validate_params(params, cfg)
    except EncoderError as exc:
        raise CheckpointError(str(exc)) from exc
    return params, cfg
