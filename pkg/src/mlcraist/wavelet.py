"""Orthonormal 2D Haar wavelet analysis/synthesis on batched tensors.

Per 2x2 block [a b; c d] (row-major) of each channel:

    LL = (a + b + c + d) / 2        low-pass approximation
    LH = (a + b - c - d) / 2        vertical variation (row differences)
    HL = (a - b + c - d) / 2        horizontal variation (column differences)
    HH = (a - b - c + d) / 2        diagonal detail

The 1/2 factor is the orthonormal normalization (1/sqrt(2) per 1D step),
which conserves energy and makes synthesis the exact inverse. Both
transforms are linear, so each backward rule is the adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import InvalidArgumentError, Tensor, accumulate, make_op

# per-band signs of the (a, b, c, d) block positions
_SIGNS = {
    "LL": (1.0, 1.0, 1.0, 1.0),
    "LH": (1.0, 1.0, -1.0, -1.0),
    "HL": (1.0, -1.0, 1.0, -1.0),
    "HH": (1.0, -1.0, -1.0, 1.0),
}


@dataclass
class SubBandSet:
    """The four sub-bands of one analysis level, each half resolution."""

    LL: Tensor
    LH: Tensor
    HL: Tensor
    HH: Tensor

    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.LL, self.LH, self.HL, self.HH)


def _split_blocks(x: np.ndarray):
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    return a, b, c, d


def dwt2_haar(x: Tensor) -> SubBandSet:
    """One Haar analysis level; height and width must be even."""
    if x.ndim != 4:
        raise InvalidArgumentError("dwt2_haar expects a rank-4 tensor")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise InvalidArgumentError(
            f"dwt2_haar requires even spatial dims, got {H}x{W}")
    a, b, c, d = _split_blocks(x.data)

    def band(name: str) -> Tensor:
        sa, sb, sc, sd = _SIGNS[name]
        data = (sa * a + sb * b + sc * c + sd * d) * 0.5

        def backward(g):
            gx = np.empty((B, C, H, W), dtype=np.float32)
            gx[:, :, 0::2, 0::2] = sa * 0.5 * g
            gx[:, :, 0::2, 1::2] = sb * 0.5 * g
            gx[:, :, 1::2, 0::2] = sc * 0.5 * g
            gx[:, :, 1::2, 1::2] = sd * 0.5 * g
            accumulate(x, gx)

        return make_op(data.astype(np.float32, copy=False), (x,), backward)

    return SubBandSet(band("LL"), band("LH"), band("HL"), band("HH"))


def idwt2_haar(s: SubBandSet) -> Tensor:
    """Exact inverse of ``dwt2_haar``."""
    ll, lh, hl, hh = s.bands()
    shape = ll.shape
    for other in (lh, hl, hh):
        if other.shape != shape:
            raise InvalidArgumentError("sub-bands must share one shape")
    B, C, H2, W2 = shape
    x = np.empty((B, C, H2 * 2, W2 * 2), dtype=np.float32)
    x[:, :, 0::2, 0::2] = (ll.data + lh.data + hl.data + hh.data) * 0.5
    x[:, :, 0::2, 1::2] = (ll.data + lh.data - hl.data - hh.data) * 0.5
    x[:, :, 1::2, 0::2] = (ll.data - lh.data + hl.data - hh.data) * 0.5
    x[:, :, 1::2, 1::2] = (ll.data - lh.data - hl.data + hh.data) * 0.5

    def backward(g):
        ga, gb, gc, gd = _split_blocks(g)
        for t, (sa, sb, sc, sd) in zip((ll, lh, hl, hh), _SIGNS.values()):
            accumulate(t, (sa * ga + sb * gb + sc * gc + sd * gd) * 0.5)

    return make_op(x, (ll, lh, hl, hh), backward)


def dwt2_multilevel(x: Tensor, levels: int) -> list[SubBandSet]:
    """Repeated analysis; level j+1 decomposes level j's LL band."""
    if levels < 1:
        raise InvalidArgumentError("levels must be >= 1")
    _, _, H, W = x.shape
    if H % (1 << levels) or W % (1 << levels):
        raise InvalidArgumentError(
            f"spatial dims {H}x{W} not divisible by 2^{levels}")
    out = []
    cur = x
    for _ in range(levels):
        bands = dwt2_haar(cur)
        out.append(bands)
        cur = bands.LL
    return out
