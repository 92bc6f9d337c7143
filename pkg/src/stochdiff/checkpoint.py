"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"STDFCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 header length in bytes
    header    UTF-8 JSON: {"tensors": [{"name", "shape"}, ...], "meta": {...}}
    payload   every tensor's values as float64 LE, row-major, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .nn import DTYPE, ShapeError

MAGIC = b"STDFCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Raised for truncated or otherwise unreadable checkpoint files."""


class CheckpointVersionError(CheckpointError):
    pass


def checkpoint_save(params: dict[str, torch.Tensor] | nn.Module, path, meta: dict | None = None):
    if isinstance(params, nn.Module):
        params = dict(params.named_parameters())
    arrays = {name: t.detach().cpu().numpy().astype("<f8", copy=False) for name, t in params.items()}
    header = {
        "tensors": [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()],
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a).tobytes())


def checkpoint_load(path) -> tuple[dict[str, torch.Tensor], dict]:
    """Return ``(tensors, meta)`` read from ``path``."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(raw) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
        specs = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    offset = start + header_len
    tensors = {}
    for spec in specs:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload in tensor {spec['name']!r}")
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[spec["name"]] = torch.tensor(values, dtype=DTYPE)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return tensors, header.get("meta", {})


def load_into(module: nn.Module, tensors: dict[str, torch.Tensor]):
    """Copy checkpoint tensors into ``module``, checking names and shapes."""
    own = dict(module.named_parameters())
    missing = sorted(set(own) - set(tensors))
    extra = sorted(set(tensors) - set(own))
    if missing or extra:
        raise ShapeError(f"parameter names differ: missing={missing} unexpected={extra}")
    for name, p in own.items():
        if tuple(p.shape) != tuple(tensors[name].shape):
            raise ShapeError(f"parameter {name!r}: checkpoint shape {tuple(tensors[name].shape)} does not match model shape {tuple(p.shape)}")
    with torch.no_grad():
        for name, p in own.items():
            p.copy_(tensors[name])
    return module
