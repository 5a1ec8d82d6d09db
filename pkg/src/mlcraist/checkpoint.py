"""Binary checkpoint format.

Layout (all little-endian):

    magic "MLCR" | u16 version | u32 config length | config JSON (UTF-8)
    u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 rank | u32 dims...
                | u8 dtype code (0 = float32) | raw payload

The config blob is the ModelConfig as compact JSON with sorted keys, so
save -> load -> save round trips byte-identically.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .engine import InvalidArgumentError
from .model import MlCraist, ModelConfig

MAGIC = b"MLCR"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    """Malformed checkpoint or mismatch against the requested model."""


def save_checkpoint(path, config: ModelConfig, model: MlCraist) -> None:
    """Serialize config and all named parameters; the write is atomic."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    cfg_bytes = json.dumps(config.to_dict(), sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    named = list(model.named_params())
    blob += struct.pack("<I", len(named))
    for name, p in named:
        name_b = name.encode("utf-8")
        arr = np.ascontiguousarray(p.value.data, dtype="<f4")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += struct.pack("<B", DTYPE_F32)
        blob += arr.tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Parse a checkpoint into its config and name -> array mapping."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise CheckpointError(f"truncated checkpoint {path}")
        chunk = view[off:off + n]
        off += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    try:
        cfg = ModelConfig.from_dict(json.loads(bytes(take(cfg_len)).decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError, InvalidArgumentError) as e:
        raise CheckpointError(f"bad config blob in {path}: {e}") from e
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        (dtype_code,) = struct.unpack("<B", take(1))
        if dtype_code != DTYPE_F32:
            raise CheckpointError(f"unknown dtype code {dtype_code} in {path}")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = np.ascontiguousarray(arr)
    if off != len(view):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return cfg, tensors


def load_model(path) -> MlCraist:
    """Rebuild the model a checkpoint was saved from, bitwise."""
    cfg, tensors = load_checkpoint(path)
    model = MlCraist(cfg, seed=0)
    names = [name for name, _ in model.named_params()]
    missing = sorted(set(names) - set(tensors))
    extra = sorted(set(tensors) - set(names))
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing {missing[:4]}, extra {extra[:4]}")
    for name, p in model.named_params():
        arr = tensors[name]
        if arr.shape != p.value.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, "
                f"model {p.value.data.shape}")
        p.value.data = arr.astype(np.float32)
    return model
