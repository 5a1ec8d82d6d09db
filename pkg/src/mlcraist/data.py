"""Image I/O, paired-patch sampling, dihedral augmentation, bicubic
degradation, and a synthetic toy dataset generator.

Pixel values live in [0, 1] internally; 8-bit PNG is the only on-disk
format (grayscale files are replicated to 3 channels on load).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .engine import InvalidArgumentError
from .ops import resize_array


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read a PNG into a (3, h, w) float32 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize round-half-up to 8 bits."""
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(path, arr: np.ndarray) -> None:
    """Write a (3, h, w) float array in [0, 1] as an 8-bit RGB PNG."""
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise InvalidArgumentError(f"save_image expects (3, h, w), got {arr.shape}")
    Image.fromarray(quantize_u8(arr).transpose(1, 2, 0)).save(path, format="PNG")


def list_images(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


# ---------------------------------------------------------------------------
# augmentation (dihedral group of the square)
# ---------------------------------------------------------------------------

def rotate90_cw(arr: np.ndarray) -> np.ndarray:
    """One clockwise quarter turn: pixel (i, j) of an h x w patch moves to
    (j, h - 1 - i)."""
    return np.ascontiguousarray(np.rot90(arr, k=-1, axes=(-2, -1)))


def augment_array(arr: np.ndarray, code: int) -> np.ndarray:
    """Apply dihedral transform ``code`` in 0..7: (code % 4) clockwise
    quarter turns, then a horizontal flip if code >= 4."""
    if not 0 <= code <= 7:
        raise InvalidArgumentError(f"augment code must be in 0..7, got {code}")
    out = arr
    for _ in range(code % 4):
        out = rotate90_cw(out)
    if code >= 4:
        out = np.ascontiguousarray(out[..., ::-1])
    return out


def inverse_code(code: int) -> int:
    """Code of the inverse transform; flip-carrying codes are involutions."""
    if not 0 <= code <= 7:
        raise InvalidArgumentError(f"augment code must be in 0..7, got {code}")
    return code if code >= 4 else (4 - code) % 4


# ---------------------------------------------------------------------------
# degradation and pair sampling
# ---------------------------------------------------------------------------

def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic down-sampling by ``scale`` (cropping to divisibility first),
    clamped to [0, 1]."""
    h, w = hr.shape[-2:]
    hc, wc = (h // scale) * scale, (w // scale) * scale
    if hc < scale or wc < scale:
        raise InvalidArgumentError(f"image {h}x{w} too small for scale {scale}")
    cropped = hr[..., :hc, :wc]
    lr = resize_array(cropped, hc // scale, wc // scale, kind="cubic")
    return np.clip(lr, 0.0, 1.0)


@dataclass
class SamplePair:
    """One training example: LR patch, matching HR patch, and where it
    came from (source id, crop offset, augmentation code)."""

    lr: np.ndarray
    hr: np.ndarray
    provenance: str


def augment_pair(pair: SamplePair, code: int) -> SamplePair:
    return SamplePair(augment_array(pair.lr, code), augment_array(pair.hr, code),
                      f"{pair.provenance}+aug{code}")


def sample_pair(img: np.ndarray, patch: int, scale: int,
                rng: np.random.Generator, source: str = "") -> SamplePair:
    """Random HR crop of size (scale*patch)^2, degraded to the LR patch,
    with a random dihedral augmentation applied to both."""
    hp = patch * scale
    h, w = img.shape[-2:]
    if h < hp or w < hp:
        raise InvalidArgumentError(
            f"image {h}x{w} smaller than HR patch {hp}x{hp}")
    y0 = int(rng.integers(0, h - hp + 1))
    x0 = int(rng.integers(0, w - hp + 1))
    hr = np.ascontiguousarray(img[:, y0:y0 + hp, x0:x0 + hp])
    lr = degrade(hr, scale).astype(np.float32)
    code = int(rng.integers(0, 8))
    pair = SamplePair(lr, hr, f"{source}@{y0},{x0}")
    return augment_pair(pair, code)


# ---------------------------------------------------------------------------
# synthetic toy dataset
# ---------------------------------------------------------------------------

def synth_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """A structured RGB test image with real high-frequency content: an
    oriented gradient background plus sharp-edged shapes, square-wave
    stripe bundles, and sinusoidal gratings. Bicubic upscaling visibly
    blurs this family, which is what makes it a usable training signal."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    img = np.zeros((3, size, size), dtype=np.float64)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * xx + np.sin(theta) * yy
    for ch in range(3):
        img[ch] = rng.uniform(0.3, 0.7) + rng.uniform(-0.2, 0.2) * ramp

    for _ in range(int(rng.integers(2, 4))):  # smooth gratings
        fx, fy = rng.uniform(1.0, 8.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img[int(rng.integers(0, 3))] += rng.uniform(0.05, 0.15) * wave

    for _ in range(int(rng.integers(2, 4))):  # hard-edged stripe bundles
        fx, fy = rng.uniform(2.0, 10.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = np.sign(np.sin(2 * np.pi * (fx * xx + fy * yy) + phase))
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        region = ((xx - cx) ** 2 + (yy - cy) ** 2) < rng.uniform(0.03, 0.12)
        img += rng.uniform(-0.2, 0.2, size=(3, 1, 1)) * (stripes * region)

    for _ in range(int(rng.integers(3, 6))):  # sharp rectangles and disks
        tint = rng.uniform(-0.35, 0.35, size=(3, 1, 1))
        if rng.random() < 0.5:
            x0, y0 = rng.uniform(0.0, 0.7, size=2)
            wdt, hgt = rng.uniform(0.1, 0.3, size=2)
            mask = ((xx >= x0) & (xx < x0 + wdt)
                    & (yy >= y0) & (yy < y0 + hgt))
        else:
            cx, cy = rng.uniform(0.15, 0.85, size=2)
            mask = ((xx - cx) ** 2 + (yy - cy) ** 2) < rng.uniform(0.005, 0.04)
        img += tint * mask

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def write_toy_dataset(directory, count: int = 8, size: int = 96,
                      seed: int = 0) -> list[Path]:
    """Generate ``count`` synthetic PNGs; returns the written paths."""
    rng = np.random.default_rng(seed)
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = out_dir / f"toy_{i:02d}.png"
        save_image(p, synth_image(size, rng))
        paths.append(p)
    return paths
