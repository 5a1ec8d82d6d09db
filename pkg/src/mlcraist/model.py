"""Full super-resolution network assembly.

Dataflow: a 3x3 head conv feeds a stack of SCATBs (the spatial branch).
In parallel, the input image is decomposed by Haar wavelets inside one or
two low/high-frequency interaction blocks (LHFIB); each LHFIB fuses the
high-frequency sub-bands (AFB), refines the LL band with its own SCATB
stack, and exchanges the two streams through a cross-attention block.
Cross-scale CABs merge the wavelet-scale features back into the full
resolution stream, and a zero-initialized 3x3 tail conv plus pixel shuffle
produce the residual added to a bicubic global skip, so a freshly built
model reproduces bicubic upsampling exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import ops
from .blocks import Afb, Cab, Conv2d, Scatb
from .engine import InvalidArgumentError, Module, Tensor
from .wavelet import dwt2_haar

AFB_MODES = ("attention", "add", "concat")
MIN_INPUT = 8


@dataclass
class ModelConfig:
    """Architecture hyperparameters and ablation switches."""

    scale: int = 4
    width: int = 64
    n_scatb: int = 5
    heads: int = 4
    window: int = 8
    afb_mode: str = "attention"
    use_cab: bool = True
    use_lhfib: bool = True
    dwt_levels: int = 2

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise InvalidArgumentError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.n_scatb < 1:
            raise InvalidArgumentError("n_scatb must be >= 1")
        if self.width % self.heads != 0:
            raise InvalidArgumentError(
                f"width {self.width} not divisible by heads {self.heads}")
        if self.window < 1:
            raise InvalidArgumentError("window must be >= 1")
        if self.afb_mode not in AFB_MODES:
            raise InvalidArgumentError(f"afb_mode must be one of {AFB_MODES}")
        if self.dwt_levels not in (1, 2):
            raise InvalidArgumentError("dwt_levels must be 1 or 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidArgumentError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


class Lhfib(Module):
    """Low/high-frequency interaction block.

    Takes a 3-channel image (or LL band), splits it into wavelet sub-bands,
    lifts each to the model width with a 1x1 conv, fuses LH/HL/HH, refines
    LL through SCATBs, and cross-attends low (query/residual) against high
    (key/value). Returns the fused feature at half resolution plus the raw
    3-channel LL band for the next level.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.width
        self.afb_mode = cfg.afb_mode
        self.lift_ll = Conv2d(3, c, 1, rng=rng)
        self.lift_lh = Conv2d(3, c, 1, rng=rng)
        self.lift_hl = Conv2d(3, c, 1, rng=rng)
        self.lift_hh = Conv2d(3, c, 1, rng=rng)
        if cfg.afb_mode == "attention":
            self.afb = Afb(c, rng=rng)
        elif cfg.afb_mode == "concat":
            self.fuse_conv = Conv2d(3 * c, c, 1, rng=rng)
        self.scatbs = [Scatb(c, cfg.heads, cfg.window, rng=rng)
                       for _ in range(cfg.n_scatb)]
        if cfg.use_cab:
            self.cab = Cab(c, rng=rng)
        else:
            self.cab = None

    def forward(self, img: Tensor) -> tuple[Tensor, Tensor]:
        bands = dwt2_haar(img)
        lh = self.lift_lh(bands.LH)
        hl = self.lift_hl(bands.HL)
        hh = self.lift_hh(bands.HH)
        if self.afb_mode == "attention":
            f_high = self.afb(lh, hl, hh)
        elif self.afb_mode == "concat":
            f_high = self.fuse_conv(ops.concat([lh, hl, hh], axis=1))
        else:
            f_high = ops.add(ops.add(lh, hl), hh)
        f_low = self.lift_ll(bands.LL)
        for blk in self.scatbs:
            f_low = blk(f_low)
        if self.cab is not None:
            fused = self.cab(f_low, f_high)
        else:
            fused = ops.add(f_low, f_high)
        return fused, bands.LL


class MlCraist(Module):
    """The complete network. Construction is deterministic given
    (config, seed); parameter names are dot paths assigned at build time."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.width
        self.head = Conv2d(3, c, 3, padding=1, rng=rng)
        self.backbone = [Scatb(c, config.heads, config.window, rng=rng)
                         for _ in range(config.n_scatb)]
        if config.use_lhfib:
            self.lhfib1 = Lhfib(config, rng)
            if config.dwt_levels == 2:
                self.lhfib2 = Lhfib(config, rng)
                if config.use_cab:
                    self.cab_mid = Cab(c, rng=rng)
            if config.use_cab:
                self.cab_top = Cab(c, rng=rng)
        self.tail = Conv2d(c, 3 * config.scale ** 2, 3, padding=1,
                           zero_init=True, rng=rng)
        self.assign_names()

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise InvalidArgumentError("forward expects a (b, 3, h, w) tensor")
        _, _, h, w = x.shape
        if h < MIN_INPUT or w < MIN_INPUT:
            raise InvalidArgumentError(
                f"input must be at least {MIN_INPUT}x{MIN_INPUT}, got {h}x{w}")
        cfg = self.config
        s = cfg.scale
        multiple = 4 * cfg.window
        hp = math.ceil(h / multiple) * multiple
        wp = math.ceil(w / multiple) * multiple
        padded = hp != h or wp != w
        xp = ops.pad_replicate2d(x, 0, hp - h, 0, wp - w) if padded else x

        f_d = self.head(xp)
        for blk in self.backbone:
            f_d = blk(f_d)

        if cfg.use_lhfib:
            f1, ll1 = self.lhfib1(xp)
            if cfg.dwt_levels == 2:
                f2, _ = self.lhfib2(ll1)
                up2 = ops.bicubic_resize(f2, hp // 2, wp // 2)
                if cfg.use_cab:
                    f1 = self.cab_mid(f1, up2)
                else:
                    f1 = ops.add(f1, up2)
            up1 = ops.bicubic_resize(f1, hp, wp)
            if cfg.use_cab:
                f_top = self.cab_top(f_d, up1)
            else:
                f_top = ops.add(f_d, up1)
        else:
            f_top = f_d

        out = ops.pixel_shuffle(self.tail(f_top), s)
        if padded:
            out = ops.crop2d(out, 0, 0, s * h, s * w)
        skip = ops.bicubic_resize(x, s * h, s * w)
        return ops.add(out, skip)


def param_count(model: Module) -> int:
    return sum(p.value.size for p in model.params())


def param_breakdown(model: Module) -> dict[str, int]:
    """Parameter count per top-level submodule."""
    counts: dict[str, int] = {}
    for name, p in model.named_params():
        top = name.split(".")[0]
        counts[top] = counts.get(top, 0) + p.value.size
    return counts


def tail_param_delta(scale_a: int, scale_b: int, width: int) -> int:
    """Parameter-count change between two scale factors.

    Only the tail conv (width -> 3*s^2, 3x3 with bias) depends on the scale,
    so the delta is (9*width + 1) * 3 * (s_b^2 - s_a^2).
    """
    return (9 * width + 1) * 3 * (scale_b ** 2 - scale_a ** 2)


def upscale_array(model: MlCraist, img: np.ndarray) -> np.ndarray:
    """Run inference on a (3, h, w) float array; returns (3, s*h, s*w)."""
    out = model(Tensor(img[None]))
    return out.data[0]
