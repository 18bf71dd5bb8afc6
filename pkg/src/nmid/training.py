"""Self-supervised encoder training: two-view augmentation, contrastive
loss, analytic gradients through the autodiff graph, Adam, early stopping
and plateau-triggered learning-rate halving.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .autodiff import Tensor, logsumexp
from .encoder import (
    EncoderCheckpoint,
    EncoderConfig,
    ParameterSet,
    encode_batch,
    validate_params,
)

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass
class AugmentationConfig:
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    noise_sigma: float = 0.02
    brightness_delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("crop_scale_range must lie within (0,1]")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValueError("flip_prob must be a probability")


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 48
    temperature: float = 0.5
    patience: int = 5
    lr_halving_patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    min_improvement: float = 1e-4  # absolute drop that counts as progress

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive pairs)")
        if self.temperature <= 0 or self.lr <= 0:
            raise ValueError("temperature and lr must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: ParameterSet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    final_lr: float = 0.0
    halvings: int = 0

    def epochs_run(self) -> int:
        return len(self.val_loss)

    def to_json(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
            "final_lr": self.final_lr,
            "halvings": self.halvings,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")
        return path


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def _augment_once(arr: np.ndarray, cfg: AugmentationConfig,
                  rng: np.random.Generator) -> np.ndarray:
    h, w, _ = arr.shape
    lo, hi = cfg.crop_scale_range
    scale = rng.uniform(lo, hi)
    ch = max(1, int(round(scale * h)))
    cw = max(1, int(round(scale * w)))
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    out = dataio.resize_bilinear(arr[r0:r0 + ch, c0:c0 + cw], h, w)
    if rng.random() < cfg.flip_prob:
        out = out[:, ::-1, :].copy()
    if cfg.noise_sigma > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma, out.shape)
    if cfg.brightness_delta > 0:
        out = out + rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    return np.clip(out, -1.0, 1.0)


def augment_two_views(img: np.ndarray, cfg: AugmentationConfig,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independent augmented views of one signed-range image."""
    return _augment_once(img, cfg, rng), _augment_once(img, cfg, rng)


# ---------------------------------------------------------------------------
# Contrastive loss
# ---------------------------------------------------------------------------


def _check_pairing(pairing: np.ndarray, total: int):
    pairing = np.asarray(pairing)
    if pairing.shape != (total,):
        raise ValueError("pairing must map every embedding index")
    if np.any(pairing == np.arange(total)) or np.any(pairing[pairing] != np.arange(total)):
        raise ValueError("pairing must be a perfect matching")
    return pairing


def view_pairing(n: int) -> np.ndarray:
    """Pairing for embeddings stacked as [view1 of each image, view2 of each]."""
    return np.concatenate([np.arange(n) + n, np.arange(n)])


def nt_xent(embeddings: np.ndarray, pairing: np.ndarray, tau: float) -> float:
    """Normalized temperature-scaled cross entropy over 2N embeddings.

    loss = -(1/2N) sum_k log( exp(sim(k,k+)/tau)
                              / sum_{l != k, l != k+} exp(sim(k,l)/tau) )

    with cosine similarity; the denominator excludes both the anchor and
    its positive. Computed with a max-shifted log-sum-exp.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    total = z.shape[0]
    if total < 4 or total % 2:
        raise ValueError("need an even number of embeddings, at least 4 (N >= 2)")
    pairing = _check_pairing(pairing, total)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding has undefined cosine similarity")
    zn = z / norms[:, None]
    logits = (zn @ zn.T) / tau
    pos = logits[np.arange(total), pairing]
    masked = logits.copy()
    masked[np.arange(total), np.arange(total)] = -np.inf
    masked[np.arange(total), pairing] = -np.inf
    m = masked.max(axis=1)
    denom = m + np.log(np.exp(masked - m[:, None]).sum(axis=1))
    return float(np.mean(denom - pos))


def nt_xent_graph(embeddings: Tensor, pairing: np.ndarray, tau: float) -> Tensor:
    """Differentiable twin of nt_xent for use inside the training graph."""
    total = embeddings.shape[0]
    pairing = _check_pairing(pairing, total)
    norms_sq = (embeddings * embeddings).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data == 0.0):
        raise TrainingError("zero-norm embedding in contrastive batch")
    zn = embeddings / norms_sq.sqrt()
    logits = (zn @ zn.transpose(1, 0)) * (1.0 / tau)
    pos = logits[np.arange(total), pairing]
    mask = np.zeros((total, total))
    mask[np.arange(total), np.arange(total)] = -np.inf
    mask[np.arange(total), pairing] = -np.inf
    denom = logsumexp(logits + Tensor(mask), axis=-1)
    return (denom - pos).mean()


def loss_and_gradients(views: list[np.ndarray], params: ParameterSet,
                       cfg: EncoderConfig, tau: float) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact analytic gradients for a batch of 2N augmented views.

    ``views`` stacks both views as [a_1..a_N, b_1..b_N]; view k pairs with
    k+N. Returns (loss, {parameter name -> gradient array}).
    """
    total = len(views)
    if total < 4 or total % 2:
        raise TrainingError("need 2N views with N >= 2")
    validate_params(params, cfg)
    tensors = params.tensors(requires_grad=True)
    batch = np.stack([np.asarray(v, dtype=np.float64) for v in views])
    embeddings = encode_batch(batch, tensors, cfg)
    loss = nt_xent_graph(embeddings, view_pairing(total // 2), tau)
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite contrastive loss")
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name!r}")
        grads[name] = g
    return float(loss.data), grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; functional, inputs untouched."""
    if set(grads) != set(params.names()):
        raise ValueError("gradient names do not match parameters")
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return (
        ParameterSet(new_params),
        AdamState(m=new_m, v=new_v, step=t, beta1=b1, beta2=b2, eps=state.eps),
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _load_signed_images(records, cfg: EncoderConfig) -> list[np.ndarray]:
    pre = dataio.PreprocessConfig(
        target_height=cfg.image_height, target_width=cfg.image_width,
        mode="encoder-signed",
    )
    images = []
    for rec in records:
        arr = dataio.preprocess_encoder(dataio.decode_image(rec.path), pre)
        images.append(dataio.ensure_channels(arr, cfg.channels))
    return images


def _epoch_views(images, indices, aug_cfg, rng):
    first, second = [], []
    for idx in indices:
        a, b = augment_two_views(images[idx], aug_cfg, rng)
        first.append(a)
        second.append(b)
    return first + second


def _validation_loss(images, val_idx, params, enc_cfg, train_cfg, aug_cfg) -> float:
    # Fixed seed: the same validation views every epoch, so the early-stop
    # signal compares parameters, not augmentation luck.
    rng = np.random.default_rng([train_cfg.seed, 9001])
    losses, weights = [], []
    for lo in range(0, len(val_idx), train_cfg.batch_size):
        chunk = val_idx[lo:lo + train_cfg.batch_size]
        if len(chunk) < 2:
            continue
        views = _epoch_views(images, chunk, aug_cfg, rng)
        emb = encode_batch(np.stack(views), params.tensors(), enc_cfg).data
        losses.append(nt_xent(emb, view_pairing(len(chunk)), train_cfg.temperature))
        weights.append(len(chunk))
    if not losses:
        raise TrainingError("validation split too small for a contrastive batch")
    return float(np.average(losses, weights=weights))


def train(manifest: dataio.DatasetManifest, enc_cfg: EncoderConfig,
          train_cfg: TrainConfig, aug_cfg: AugmentationConfig,
          init: ParameterSet | None = None) -> tuple[EncoderCheckpoint, TrainReport]:
    """Contrastive training over the manifest's train split.

    Returns the best-validation checkpoint and a per-epoch report.
    Deterministic for fixed seeds: batching, augmentation and the
    validation views all draw from generators derived from the configs.
    """
    from . import encoder as enc_mod

    records = manifest.by_split("train")
    if not records:
        raise TrainingError("train split is empty")
    images = _load_signed_images(records, enc_cfg)
    n = len(images)

    split_rng = np.random.default_rng([train_cfg.seed, 1])
    perm = split_rng.permutation(n)
    n_val = int(round(train_cfg.val_fraction * n)) if train_cfg.val_fraction > 0 else 0
    n_val = max(2, n_val) if n_val else 0
    if n_val >= n:
        raise TrainingError("validation fraction leaves no training images")
    val_idx, train_idx = perm[n - n_val:], perm[:n - n_val]
    if train_cfg.batch_size > len(train_idx):
        raise TrainingError("batch size exceeds the training split")

    params = init.copy() if init is not None else enc_mod.init_params(enc_cfg)
    adam = AdamState.init(params)
    lr = train_cfg.lr
    report = TrainReport()
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0
    stall = 0
    halvings = 0
    order_rng = np.random.default_rng([train_cfg.seed, 2])
    aug_rng = np.random.default_rng([aug_cfg.seed, 3])

    for epoch in range(1, train_cfg.epochs + 1):
        order = order_rng.permutation(train_idx)
        batch_losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = order[lo:lo + train_cfg.batch_size]
            if len(chunk) < 2:
                continue  # NT-Xent undefined below two images
            views = _epoch_views(images, chunk, aug_cfg, aug_rng)
            loss, grads = loss_and_gradients(
                views, params, enc_cfg, train_cfg.temperature)
            params, adam = adam_step(params, grads, adam, lr)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = _validation_loss(images, val_idx, params, enc_cfg, train_cfg, aug_cfg)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.lr.append(lr)
        log.info("epoch=%d train_loss=%.6f val_loss=%.6f lr=%.6g",
                 epoch, train_loss, val_loss, lr)

        if best_val - val_loss >= train_cfg.min_improvement:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall % train_cfg.lr_halving_patience == 0:
                lr = lr / 2.0
                halvings += 1
                log.info("epoch=%d halving learning rate to %.6g", epoch, lr)
            if stall >= train_cfg.patience:
                report.stop_reason = "early_stop"
                break
    if not report.stop_reason:
        report.stop_reason = "max_epochs"
    report.best_epoch = best_epoch
    report.final_lr = lr
    report.halvings = halvings
    return EncoderCheckpoint(params=best_params, config=enc_cfg), report
