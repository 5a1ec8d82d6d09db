"""Attention blocks: SCATB (LCB + spatial/channel self-attention + ESA),
the high-frequency fusion block (AFB), and the cross-attention block (CAB).

All blocks are shape preserving over (b, c, h, w) tensors and differentiable
through the engine. Output projections are zero-initialized so that at
construction time every block's attention contribution vanishes and the
residual/identity path dominates.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .engine import InvalidArgumentError, Module, Param, Tensor


def _default_rng(rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Conv2d(Module):
    """Convolution layer; Kaiming-uniform weights, zero bias by default."""

    def __init__(self, in_c: int, out_c: int, kernel: int, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True,
                 zero_init: bool = False, rng: np.random.Generator | None = None):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (out_c, in_c // groups, kernel, kernel)
        if zero_init:
            w = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = (in_c // groups) * kernel * kernel
            bound = math.sqrt(6.0 / fan_in)
            w = _default_rng(rng).uniform(-bound, bound, size=shape).astype(np.float32)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_c, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight.value,
                          self.bias.value if self.bias is not None else None,
                          stride=self.stride, padding=self.padding,
                          groups=self.groups)


class Lcb(Module):
    """Local context block: pointwise expand, depthwise 3x3, GELU, pointwise
    project back, plus a residual. The projection is zero-initialized, so a
    fresh block is the identity map."""

    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = _default_rng(rng)
        self.pw1 = Conv2d(c, 2 * c, 1, rng=rng)
        self.dw = Conv2d(2 * c, 2 * c, 3, padding=1, groups=2 * c, rng=rng)
        self.pw2 = Conv2d(2 * c, c, 1, zero_init=True, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.pw2(ops.gelu(self.dw(self.pw1(x))))
        return ops.add(x, y)


class Esa(Module):
    """Enhanced spatial attention: a reduced-width strided conv / max-pool /
    upsample path producing a sigmoid gate that multiplies the input."""

    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = _default_rng(rng)
        self.keep_attn = False
        self.last_gate: np.ndarray | None = None
        f = max(c // 4, 1)
        self.conv1 = Conv2d(c, f, 1, rng=rng)
        self.conv2 = Conv2d(f, f, 3, stride=2, padding=0, rng=rng)
        self.conv3 = Conv2d(f, f, 3, padding=1, rng=rng)
        self.conv_f = Conv2d(f, f, 1, rng=rng)
        self.conv4 = Conv2d(f, c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        if h < 4 or w < 4:
            raise InvalidArgumentError(
                f"esa needs spatial size >= 4, got {h}x{w}")
        c1 = self.conv1(x)
        t = self.conv2(c1)
        t = ops.max_pool2d(t, kernel=7, stride=3)
        t = self.conv3(t)
        t = ops.bilinear_resize(t, h, w)
        gate = ops.sigmoid(self.conv4(ops.add(t, self.conv_f(c1))))
        if self.keep_attn:
            self.last_gate = gate.data
        return ops.mul(x, gate)


class SpatialChannelAttention(Module):
    """Windowed spatial self-attention followed by global channel
    self-attention (the omni self-attention core), with a zero-initialized
    output projection.

    Q, K, V come from a shared pointwise conv + depthwise 3x3 conv. The
    spatial stage attends within non-overlapping win x win windows per head
    (logits scaled by 1/sqrt(d_head)); the channel stage attends across the
    per-head channel slices over the full map using the spatial output as
    value (logits scaled by 1/sqrt(h*w)).
    """

    def __init__(self, c: int, heads: int, window: int,
                 rng: np.random.Generator | None = None):
        if c % heads != 0:
            raise InvalidArgumentError(f"heads {heads} must divide width {c}")
        rng = _default_rng(rng)
        self.heads = heads
        self.window = window
        self.keep_attn = False  # when set, forward stores the attention maps
        self.last_spatial_attn: np.ndarray | None = None
        self.last_channel_attn: np.ndarray | None = None
        self.qkv_pw = Conv2d(c, 3 * c, 1, rng=rng)
        self.qkv_dw = Conv2d(3 * c, 3 * c, 3, padding=1, groups=3 * c, rng=rng)
        self.proj = Conv2d(c, c, 1, zero_init=True, rng=rng)

    def _to_windows(self, t: Tensor) -> Tensor:
        b, c, h, w = t.shape
        nh, nw = h // self.window, w // self.window
        d = c // self.heads
        t = ops.reshape(t, (b, self.heads, d, nh, self.window, nw, self.window))
        t = ops.permute(t, (0, 3, 5, 1, 4, 6, 2))
        return ops.reshape(t, (b * nh * nw * self.heads, self.window * self.window, d))

    def _from_windows(self, t: Tensor, shape: tuple) -> Tensor:
        b, c, h, w = shape
        nh, nw = h // self.window, w // self.window
        d = c // self.heads
        t = ops.reshape(t, (b, nh, nw, self.heads, self.window, self.window, d))
        t = ops.permute(t, (0, 3, 6, 1, 4, 2, 5))
        return ops.reshape(t, shape)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if h % self.window or w % self.window:
            raise InvalidArgumentError(
                f"spatial dims {h}x{w} not divisible by window {self.window}")
        d = c // self.heads
        qkv = self.qkv_dw(self.qkv_pw(x))
        q = ops.narrow(qkv, 1, 0, c)
        k = ops.narrow(qkv, 1, c, c)
        v = ops.narrow(qkv, 1, 2 * c, c)

        # spatial stage, windowed
        qs = self._to_windows(q)
        ks = self._to_windows(k)
        vs = self._to_windows(v)
        logits = ops.scale(ops.matmul(qs, ops.permute(ks, (0, 2, 1))),
                           1.0 / math.sqrt(d))
        attn_s = ops.softmax(logits)
        j1 = ops.matmul(attn_s, vs)
        j1 = self._from_windows(j1, (b, c, h, w))

        # channel stage, global, with the spatial output as value
        qc = ops.reshape(q, (b, self.heads, d, h * w))
        kc = ops.permute(ops.reshape(k, (b, self.heads, d, h * w)), (0, 1, 3, 2))
        vc = ops.reshape(j1, (b, self.heads, d, h * w))
        logits_c = ops.scale(ops.matmul(qc, kc), 1.0 / math.sqrt(h * w))
        attn_c = ops.softmax(logits_c)
        j2 = ops.matmul(attn_c, vc)
        if self.keep_attn:
            self.last_spatial_attn = attn_s.data
            self.last_channel_attn = attn_c.data
        out = ops.reshape(j2, (b, c, h, w))
        return self.proj(out)


class Scatb(Module):
    """Spatial-channel attention transformer block:
    LCB -> attention core -> residual from the block input -> ESA."""

    def __init__(self, c: int, heads: int, window: int,
                 rng: np.random.Generator | None = None):
        rng = _default_rng(rng)
        self.lcb = Lcb(c, rng=rng)
        self.attn = SpatialChannelAttention(c, heads, window, rng=rng)
        self.esa = Esa(c, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.attn(self.lcb(x))
        return self.esa(ops.add(x, y))


class Afb(Module):
    """Attention-based fusion of the three high-frequency sub-bands.

    A channel attention map built from the LH and HL branches reweights the
    HH branch; a concatenation branch adds a pointwise-convolved mix of the
    raw inputs. The attention-output projection is zero-initialized.
    """

    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = _default_rng(rng)
        self.keep_attn = False
        self.last_attn: np.ndarray | None = None
        self.lh_pw = Conv2d(c, c, 1, rng=rng)
        self.lh_dw = Conv2d(c, c, 3, padding=1, groups=c, rng=rng)
        self.hl_pw = Conv2d(c, c, 1, rng=rng)
        self.hl_dw = Conv2d(c, c, 3, padding=1, groups=c, rng=rng)
        self.hh_pw = Conv2d(c, c, 1, rng=rng)
        self.hh_dw = Conv2d(c, c, 3, padding=1, groups=c, rng=rng)
        self.concat_conv = Conv2d(3 * c, c, 1, rng=rng)
        self.out_conv = Conv2d(c, c, 1, zero_init=True, rng=rng)

    def forward(self, lh: Tensor, hl: Tensor, hh: Tensor) -> Tensor:
        if not (lh.shape == hl.shape == hh.shape):
            raise InvalidArgumentError("afb inputs must share one shape")
        b, c, h, w = lh.shape
        f_lh = self.lh_dw(self.lh_pw(lh))
        f_hl = self.hl_dw(self.hl_pw(hl))
        f_hh = self.hh_dw(self.hh_pw(hh))
        r_lh = ops.reshape(f_lh, (b, c, h * w))
        r_hl = ops.permute(ops.reshape(f_hl, (b, c, h * w)), (0, 2, 1))
        r_hh = ops.reshape(f_hh, (b, c, h * w))
        attn = ops.softmax(ops.matmul(r_lh, r_hl))
        if self.keep_attn:
            self.last_attn = attn.data
        fused = ops.reshape(ops.matmul(attn, r_hh), (b, c, h, w))
        cat = self.concat_conv(ops.concat([lh, hl, hh], axis=1))
        return ops.add(cat, self.out_conv(fused))


class Cab(Module):
    """Channel-wise cross attention: query from one stream, key/value from
    the other, residual on the query stream. The single key/value branch
    yields one map used as both key and value. Zero-initialized output
    projection makes a fresh block return the query input exactly."""

    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = _default_rng(rng)
        self.keep_attn = False
        self.last_attn: np.ndarray | None = None
        self.q_pw = Conv2d(c, c, 1, rng=rng)
        self.q_dw = Conv2d(c, c, 3, padding=1, groups=c, rng=rng)
        self.kv_pw = Conv2d(c, c, 1, rng=rng)
        self.kv_dw = Conv2d(c, c, 3, padding=1, groups=c, rng=rng)
        self.proj = Conv2d(c, c, 1, zero_init=True, rng=rng)

    def forward(self, f_q: Tensor, f_kv: Tensor) -> Tensor:
        if f_q.shape != f_kv.shape:
            raise InvalidArgumentError(
                f"cab inputs must match, got {f_q.shape} vs {f_kv.shape}")
        b, c, h, w = f_q.shape
        q = self.q_dw(self.q_pw(f_q))
        kv = self.kv_dw(self.kv_pw(f_kv))
        q_r = ops.reshape(q, (b, c, h * w))
        k_r = ops.permute(ops.reshape(kv, (b, c, h * w)), (0, 2, 1))
        v_r = ops.reshape(kv, (b, c, h * w))
        attn = ops.softmax(ops.matmul(q_r, k_r))
        if self.keep_attn:
            self.last_attn = attn.data
        out = ops.reshape(ops.matmul(attn, v_r), (b, c, h, w))
        return ops.add(self.proj(out), f_q)
