"""Differentiable operations over ``engine.Tensor``.

Everything the network needs: elementwise math, matmul/softmax, shape
movement, convolution, pooling, padding/cropping, separable bicubic and
bilinear resampling, and pixel shuffle. Broadcasting follows numpy's
trailing-dimension alignment rule. All ops compute in float32; the scalar
reductions accumulate in float64.
"""

from __future__ import annotations

import numpy as np

from .engine import InvalidArgumentError, Tensor, accumulate, make_op

_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgumentError(
            f"shapes {a.shape} and {b.shape} are not broadcastable") from None


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out broadcast dimensions so ``g`` matches ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape))
                 if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out_data = a.data + b.data

    def backward(g):
        accumulate(a, _reduce_to(g, a.shape))
        accumulate(b, _reduce_to(g, b.shape))

    return make_op(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out_data = a.data - b.data

    def backward(g):
        accumulate(a, _reduce_to(g, a.shape))
        accumulate(b, _reduce_to(-g, b.shape))

    return make_op(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out_data = a.data * b.data

    def backward(g):
        accumulate(a, _reduce_to(g * b.data, a.shape))
        accumulate(b, _reduce_to(g * a.data, b.shape))

    return make_op(out_data, (a, b), backward)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = x.data * s

    def backward(g):
        accumulate(x, g * s)

    return make_op(out_data, (x,), backward)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        accumulate(x, g * (x.data > 0))

    return make_op(out_data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C0 * (xd + _GELU_C1 * x2 * xd))
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * xd * xd)
        accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * xd * ((1.0 - t * t) * du)))

    return make_op(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        accumulate(x, g * y * (1.0 - y))

    return make_op(y, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    out_data = np.abs(x.data)

    def backward(g):
        accumulate(x, g * np.sign(x.data))

    return make_op(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, accumulated and carried in float64."""
    out_data = np.asarray(np.sum(x.data, dtype=np.float64))

    def backward(g):
        accumulate(x, np.full(x.shape, float(g), dtype=np.float32))

    return make_op(out_data, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out_data = np.asarray(np.sum(x.data, dtype=np.float64) / n)

    def backward(g):
        accumulate(x, np.full(x.shape, float(g) / n, dtype=np.float32))

    return make_op(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise InvalidArgumentError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise InvalidArgumentError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        accumulate(a, _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        accumulate(b, _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return make_op(out_data, (a, b), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max subtraction for stability."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        accumulate(x, (g - inner) * y)

    return make_op(y, (x,), backward)


# ---------------------------------------------------------------------------
# shape movement
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise InvalidArgumentError(
            f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    out_data = x.data.reshape(shape)

    def backward(g):
        accumulate(x, g.reshape(x.shape))

    return make_op(out_data, (x,), backward)


def permute(x: Tensor, axes: tuple) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise InvalidArgumentError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = np.argsort(axes)
    out_data = x.data.transpose(axes)

    def backward(g):
        accumulate(x, g.transpose(inv))

    return make_op(out_data, (x,), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise InvalidArgumentError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {x.shape}")
    idx = tuple(slice(None) if d != axis else slice(start, start + length)
                for d in range(x.ndim))
    out_data = x.data[idx]

    def backward(g):
        gx = np.zeros(x.shape, dtype=np.float32)
        gx[idx] = g
        accumulate(x, gx)

    return make_op(out_data, (x,), backward)


def concat(tensors: list, axis: int) -> Tensor:
    base = tensors[0]
    for t in tensors[1:]:
        ref = list(base.shape)
        cur = list(t.shape)
        ref[axis] = cur[axis] = 0
        if ref != cur:
            raise InvalidArgumentError("concat operands disagree off the concat axis")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, o0, o1 in zip(tensors, offsets[:-1], offsets[1:]):
            idx = tuple(slice(None) if d != axis else slice(o0, o1)
                        for d in range(g.ndim))
            accumulate(t, g[idx])

    return make_op(out_data, tuple(tensors), backward)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    if x.ndim != 4:
        raise InvalidArgumentError("crop2d expects a rank-4 tensor")
    if top + height > x.shape[2] or left + width > x.shape[3]:
        raise InvalidArgumentError("crop window exceeds tensor bounds")
    out_data = x.data[:, :, top:top + height, left:left + width]

    def backward(g):
        gx = np.zeros(x.shape, dtype=np.float32)
        gx[:, :, top:top + height, left:left + width] = g
        accumulate(x, gx)

    return make_op(out_data, (x,), backward)


def pad_replicate2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Edge-replicating pad of the two trailing (spatial) axes."""
    if x.ndim != 4:
        raise InvalidArgumentError("pad_replicate2d expects a rank-4 tensor")
    out_data = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)),
                      mode="edge")
    B, C, H, W = x.shape

    def backward(g):
        ri = np.clip(np.arange(-top, H + bottom), 0, H - 1)
        ci = np.clip(np.arange(-left, W + right), 0, W - 1)
        gx = np.zeros(x.shape, dtype=np.float32)
        bi = np.arange(B)[:, None, None, None]
        chi = np.arange(C)[None, :, None, None]
        np.add.at(gx, (bi, chi, ri[None, None, :, None], ci[None, None, None, :]), g)
        accumulate(x, gx)

    return make_op(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2D convolution with symmetric zero padding.

    ``weight`` has shape (out_c, in_c // groups, kh, kw); ``groups = in_c``
    realizes the depthwise case.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise InvalidArgumentError("conv2d expects rank-4 input and weight")
    B, C, H, W = x.shape
    OC, cpg, kh, kw = weight.shape
    if C != cpg * groups:
        raise InvalidArgumentError(
            f"conv2d channel mismatch: input has {C} channels, weight expects "
            f"{cpg * groups} (groups={groups})")
    if OC % groups != 0:
        raise InvalidArgumentError("out channels must be divisible by groups")
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise InvalidArgumentError("conv2d output would be empty")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    if groups == C and OC == C:
        return _conv2d_depthwise(x, xp, weight, bias, stride, padding, oh, ow)

    sB, sC, sH, sW = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(B, C, kh, kw, oh, ow),
        strides=(sB, sC, sH, sW, stride * sH, stride * sW), writeable=False)
    n = oh * ow
    K = cpg * kh * kw
    ocg = OC // groups
    cols = view.reshape(B, groups, K, n)
    wg = weight.data.reshape(groups, ocg, K)
    out = np.matmul(wg[None], cols).reshape(B, OC, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        go = g.reshape(B, groups, ocg, n)
        if weight.requires_grad:
            gw = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0)
            accumulate(weight, gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = np.matmul(wg.transpose(0, 2, 1)[None], go)
            gcols = gcols.reshape(B, C, kh, kw, oh, ow)
            gxp = np.zeros(xp.shape, dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride,
                        j:j + stride * ow:stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + H, padding:padding + W]
            accumulate(x, gxp)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, inputs, backward)


def _conv2d_depthwise(x: Tensor, xp: np.ndarray, weight: Tensor,
                      bias: Tensor | None, stride: int, padding: int,
                      oh: int, ow: int) -> Tensor:
    """Depthwise case as kh*kw shifted multiply-adds (no im2col copy)."""
    B, C, H, W = x.shape
    _, _, kh, kw = weight.shape
    wd = weight.data
    out = np.zeros((B, C, oh, ow), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            out += wd[:, 0, i, j][None, :, None, None] * \
                xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        if weight.requires_grad:
            gw = np.empty(weight.shape, dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i:i + stride * oh:stride,
                               j:j + stride * ow:stride]
                    gw[:, 0, i, j] = np.einsum("bcij,bcij->c", g, patch)
            accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride,
                        j:j + stride * ow:stride] += \
                        wd[:, 0, i, j][None, :, None, None] * g
            if padding:
                gxp = gxp[:, :, padding:padding + H, padding:padding + W]
            accumulate(x, gxp)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, inputs, backward)


def max_pool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Max pooling; windows at the far border are clipped to the valid region.

    Clipping makes the op total for any spatial size >= 1 (a window larger
    than the input degenerates to a global max).
    """
    if x.ndim != 4:
        raise InvalidArgumentError("max_pool2d expects a rank-4 tensor")
    B, C, H, W = x.shape
    starts_h = list(range(0, H - kernel + 1, stride)) if H >= kernel else [0]
    starts_w = list(range(0, W - kernel + 1, stride)) if W >= kernel else [0]
    oh, ow = len(starts_h), len(starts_w)
    out = np.empty((B, C, oh, ow), dtype=np.float32)
    arg_r = np.empty((B, C, oh, ow), dtype=np.int64)
    arg_c = np.empty((B, C, oh, ow), dtype=np.int64)
    for oi, r0 in enumerate(starts_h):
        r1 = min(r0 + kernel, H)
        for oj, c0 in enumerate(starts_w):
            c1 = min(c0 + kernel, W)
            win = x.data[:, :, r0:r1, c0:c1].reshape(B, C, -1)
            am = win.argmax(axis=2)
            out[:, :, oi, oj] = np.take_along_axis(win, am[:, :, None], axis=2)[:, :, 0]
            arg_r[:, :, oi, oj] = r0 + am // (c1 - c0)
            arg_c[:, :, oi, oj] = c0 + am % (c1 - c0)

    def backward(g):
        gx = np.zeros(x.shape, dtype=np.float32)
        bi = np.arange(B)[:, None, None, None]
        chi = np.arange(C)[None, :, None, None]
        np.add.at(gx, (bi, chi, arg_r, arg_c), g)
        accumulate(x, gx)

    return make_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5."""
    t = np.abs(t)
    near = (1.5 * t - 2.5) * t * t + 1.0
    far = ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


_resize_matrix_cache: dict = {}


def _resize_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """(n_out, n_in) resampling matrix, center-aligned, replicate boundary."""
    key = (n_in, n_out, kind)
    cached = _resize_matrix_cache.get(key)
    if cached is not None:
        return cached
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    f = src - base
    if kind == "cubic":
        offsets = (-1, 0, 1, 2)
        weights = [_cubic_kernel(f - o) for o in offsets]
    elif kind == "linear":
        offsets = (0, 1)
        weights = [1.0 - f, f]
    else:
        raise InvalidArgumentError(f"unknown resize kind {kind!r}")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for o, w in zip(offsets, weights):
        np.add.at(mat, (rows, np.clip(base + o, 0, n_in - 1)), w)
    mat /= mat.sum(axis=1, keepdims=True)
    mat = mat.astype(np.float32)
    _resize_matrix_cache[key] = mat
    return mat


def resize_array(arr: np.ndarray, out_h: int, out_w: int, kind: str = "cubic") -> np.ndarray:
    """Separable resample of the two trailing axes of a plain ndarray."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("resize target must be at least 1x1")
    lead = arr.shape[:-2]
    h, w = arr.shape[-2:]
    wh = _resize_matrix(h, out_h, kind)
    ww = _resize_matrix(w, out_w, kind)
    flat = arr.reshape(-1, h, w).astype(np.float32, copy=False)
    t = np.matmul(wh[None], flat)
    y = np.matmul(t, ww.T[None])
    return y.reshape(*lead, out_h, out_w)


def _resize(x: Tensor, out_h: int, out_w: int, kind: str) -> Tensor:
    if x.ndim != 4:
        raise InvalidArgumentError("resize expects a rank-4 tensor")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("resize target must be at least 1x1")
    B, C, H, W = x.shape
    wh = _resize_matrix(H, out_h, kind)
    ww = _resize_matrix(W, out_w, kind)
    flat = x.data.reshape(B * C, H, W)
    out = np.matmul(np.matmul(wh[None], flat), ww.T[None]).reshape(B, C, out_h, out_w)

    def backward(g):
        gf = g.reshape(B * C, out_h, out_w)
        gx = np.matmul(np.matmul(wh.T[None], gf), ww[None])
        accumulate(x, gx.reshape(B, C, H, W))

    return make_op(out, (x,), backward)


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable cubic-convolution (a = -0.5) resize, replicate boundary."""
    return _resize(x, out_h, out_w, "cubic")


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    return _resize(x, out_h, out_w, "linear")


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------

def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Rearrange (b, c*s^2, h, w) into (b, c, s*h, s*w).

    out[b, k, s*i + di, s*j + dj] = in[b, k*s^2 + di*s + dj, i, j]
    """
    if x.ndim != 4:
        raise InvalidArgumentError("pixel_shuffle expects a rank-4 tensor")
    B, C2, H, W = x.shape
    if C2 % (s * s) != 0:
        raise InvalidArgumentError(
            f"channel count {C2} not divisible by s^2 = {s * s}")
    C = C2 // (s * s)
    out = (x.data.reshape(B, C, s, s, H, W)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(B, C, H * s, W * s))

    def backward(g):
        gx = (g.reshape(B, C, H, s, W, s)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(B, C2, H, W))
        accumulate(x, gx)

    return make_op(out, (x,), backward)


def pixel_unshuffle_array(arr: np.ndarray, s: int) -> np.ndarray:
    """Plain-ndarray inverse of pixel_shuffle (test/debug utility)."""
    B, C, HS, WS = arr.shape
    H, W = HS // s, WS // s
    return (arr.reshape(B, C, H, s, W, s)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(B, C * s * s, H, W))
