"""L1 training loop with Adam and a five-phase step-decay schedule, plus
evaluation helpers comparing the model against the bicubic baseline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .data import degrade, list_images, load_image, sample_pair
from .engine import InvalidArgumentError, Param, Tape, Tensor
from .metrics import psnr, rgb_to_y
from .model import MlCraist, upscale_array
from .ops import resize_array


class ConfigError(ValueError):
    """Invalid training configuration or unusable dataset."""


class TrainingDivergedError(RuntimeError):
    """Loss or a parameter became non-finite; carries the offender's name."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_iters: int = 1_000_000
    base_lr: float = 1e-4
    lr_halving_period: int | None = None  # default: total_iters // 5
    patch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 1

    @property
    def halving_period(self) -> int:
        if self.lr_halving_period is not None:
            return self.lr_halving_period
        return max(self.total_iters // 5, 1)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")
        if self.patch_size < 8:
            raise ConfigError("patch_size must be >= 8")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "total_iters": self.total_iters,
            "base_lr": self.base_lr,
            "lr_halving_period": self.halving_period,
            "patch_size": self.patch_size,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "log_every": self.log_every,
        }


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise InvalidArgumentError(
            f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    return ops.mean_all(ops.abs_(ops.sub(pred, target)))


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """base_lr halved once per completed halving period."""
    return cfg.base_lr * 0.5 ** (iteration // cfg.halving_period)


def adam_step(params: list[Param], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; parameters without a gradient are
    untouched. Arithmetic runs in float64 and is stored back as float32."""
    for p in params:
        g = p.grad
        if g is None:
            continue
        p.step += 1
        g64 = g.astype(np.float64)
        m = p.m.astype(np.float64) * beta1 + (1.0 - beta1) * g64
        v = p.v.astype(np.float64) * beta2 + (1.0 - beta2) * g64 * g64
        m_hat = m / (1.0 - beta1 ** p.step)
        v_hat = v / (1.0 - beta2 ** p.step)
        new = p.value.data.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.m = m.astype(np.float32)
        p.v = v.astype(np.float32)
        p.value.data = new.astype(np.float32)


def _load_training_images(dataset, min_side: int) -> list[np.ndarray]:
    if isinstance(dataset, (str, Path)):
        paths = list_images(dataset)
        if not paths:
            raise ConfigError(f"no PNG images found in {dataset}")
        images = [load_image(p) for p in paths]
    else:
        images = [np.asarray(im, dtype=np.float32) for im in dataset]
    usable = [im for im in images
              if im.shape[-2] >= min_side and im.shape[-1] >= min_side]
    if not usable:
        raise ConfigError(
            f"no image is at least {min_side}x{min_side} pixels")
    return usable


def _check_finite(loss_value: float, model: MlCraist) -> None:
    if np.isfinite(loss_value):
        return
    offender = "<loss>"
    for name, p in model.named_params():
        if not np.all(np.isfinite(p.value.data)):
            offender = name
            break
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            offender = name
            break
    raise TrainingDivergedError(
        f"non-finite loss ({loss_value}); first offending parameter: {offender}")


def train(model: MlCraist, dataset, cfg: TrainConfig,
          log_path=None) -> list[tuple[int, float, float]]:
    """Optimize the model on random patch pairs from ``dataset`` (a directory
    of PNGs or a list of (3, h, w) arrays in [0, 1]).

    Deterministic under a fixed seed in single-threaded mode. Returns the
    logged (iteration, loss, lr) history; if ``log_path`` is given, lines
    of the form ``iter <n> loss <float> lr <float>`` are appended as they
    are produced.
    """
    cfg.validate()
    scale = model.config.scale
    images = _load_training_images(dataset, cfg.patch_size * scale)
    rng = np.random.default_rng(cfg.seed)
    history: list[tuple[int, float, float]] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for it in range(cfg.total_iters):
            lr = lr_at(it, cfg)
            lrs = np.empty((cfg.batch_size, 3, cfg.patch_size, cfg.patch_size),
                           dtype=np.float32)
            hrs = np.empty((cfg.batch_size, 3, cfg.patch_size * scale,
                            cfg.patch_size * scale), dtype=np.float32)
            for b in range(cfg.batch_size):
                idx = int(rng.integers(0, len(images)))
                pair = sample_pair(images[idx], cfg.patch_size, scale, rng,
                                   source=str(idx))
                lrs[b] = pair.lr
                hrs[b] = pair.hr
            model.zero_grad()
            with Tape() as tape:
                pred = model(Tensor(lrs))
                loss = l1_loss(pred, Tensor(hrs))
            loss_value = loss.item()
            tape.backward(loss)
            _check_finite(loss_value, model)
            adam_step(model.params(), lr, cfg.beta1, cfg.beta2, cfg.eps)
            if it % cfg.log_every == 0:
                history.append((it, loss_value, lr))
                if log_file is not None:
                    log_file.write(f"iter {it} loss {loss_value:.8e} lr {lr:.8e}\n")
                    log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return history


def psnr_y_against_bicubic(model: MlCraist, images: list[np.ndarray],
                           crop: int | None = None) -> tuple[float, float]:
    """Mean Y-channel PSNR of the model and of plain bicubic upscaling over
    HR ``images`` degraded by the model's scale factor. ``crop`` pixels
    (default: the scale factor) are trimmed from each border first."""
    scale = model.config.scale
    border = scale if crop is None else crop
    model_scores = []
    bicubic_scores = []
    for img in images:
        h, w = img.shape[-2:]
        hc, wc = (h // scale) * scale, (w // scale) * scale
        hr = img[..., :hc, :wc]
        lr = degrade(hr, scale)
        sr = np.clip(upscale_array(model, lr), 0.0, 1.0)
        bic = np.clip(resize_array(lr, hc, wc, kind="cubic"), 0.0, 1.0)
        y_hr = rgb_to_y(hr[None])[0, 0]
        y_sr = rgb_to_y(sr[None])[0, 0]
        y_bic = rgb_to_y(bic[None])[0, 0]
        sl = (slice(border, -border), slice(border, -border)) if border else ()
        model_scores.append(psnr(y_sr[sl], y_hr[sl]))
        bicubic_scores.append(psnr(y_bic[sl], y_hr[sl]))
    return float(np.mean(model_scores)), float(np.mean(bicubic_scores))
