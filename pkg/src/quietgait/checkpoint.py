"""Versioned binary container for named float32 arrays.

Layout (little-endian)::

    magic      8 bytes  b"QGAITCK\\0"
    version    uint32
    meta_len   uint32, followed by meta_len bytes of UTF-8 JSON
    count      uint32
    per array: name_len uint16, name bytes, ndim uint8, dims uint32 * ndim,
               then prod(dims) float32 values in row-major order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"QGAITCK\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict, metadata: dict | None = None) -> Path:
    path = Path(path)
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4", order="C")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load_arrays(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 16
        meta = json.loads(data[off:off + meta_len].decode())
        off += meta_len
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            arrays[name] = arr.copy()
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last array")
    return arrays, meta


def module_arrays(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module(prefix: str, module: torch.nn.Module, arrays: dict, strict: bool = True):
    state = {}
    for k, v in module.state_dict().items():
        name = f"{prefix}.{k}"
        if name not in arrays:
            if strict:
                raise CheckpointError(f"checkpoint missing array {name}")
            continue
        if tuple(arrays[name].shape) != tuple(v.shape):
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {tuple(v.shape)}")
        state[k] = torch.as_tensor(arrays[name], dtype=v.dtype)
    module.load_state_dict(state, strict=False)
