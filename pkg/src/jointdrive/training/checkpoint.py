"""Versioned binary checkpoints: a JSON header followed by little-endian float64 payloads.

Layout: magic, uint32 version, uint32 header length, header bytes, then for
each parameter (header order) its values, Adam first moment and second
moment, each as a flat ``<f8`` block.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..numerics.nn import Module

MAGIC = b"JDCKPT\x00\x01"
CHECKPOINT_VERSION = 1
_F8 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Module, config: dict, stage: int, state: dict | None = None) -> Path:
    """Write every named parameter with its Adam moments; ``state`` carries resume counters."""
    named = list(model.named_parameters())
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "stage": stage,
        "state": state or {},
        "params": [{"name": n, "shape": list(p.shape), "step_count": p.step_count} for n, p in named],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(raw)) + raw)
        for _, p in named:
            for arr in (p.tensor.data, p.adam_m, p.adam_v):
                fh.write(np.ascontiguousarray(arr, dtype=_F8).tobytes())
    return path


def read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 8)
        if len(head) < len(MAGIC) + 8 or head[:len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<II", head[len(MAGIC):])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        try:
            header = json.loads(fh.read(n))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    return header, len(MAGIC) + 8 + n


def load_checkpoint(path, model: Module) -> dict:
    """Restore parameters and Adam state in place; returns the header. Names and shapes must match."""
    header, offset = read_header(path)
    named = dict(model.named_parameters())
    listed = [e["name"] for e in header["params"]]
    if sorted(listed) != sorted(named):
        missing = sorted(set(named) - set(listed))[:3]
        extra = sorted(set(listed) - set(named))[:3]
        raise CheckpointError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")
    blob = Path(path).read_bytes()
    for entry in header["params"]:
        p = named[entry["name"]]
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(f"{path}: {entry['name']} has shape {entry['shape']}, model expects {list(p.shape)}")
    need = offset + sum(3 * int(np.prod(e["shape"])) * 8 for e in header["params"])
    if len(blob) != need:
        raise CheckpointError(f"{path}: payload is {len(blob)} bytes, header implies {need}")
    for entry in header["params"]:
        p = named[entry["name"]]
        n = int(np.prod(entry["shape"]))
        blocks = []
        for _ in range(3):
            blocks.append(np.frombuffer(blob, dtype=_F8, count=n, offset=offset).reshape(p.shape).astype(np.float64))
            offset += 8 * n
        p.tensor.data, p.adam_m, p.adam_v = blocks
        p.step_count = int(entry["step_count"])
    return header


def parameter_digest(model: Module) -> str:
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.tensor.data, dtype=_F8).tobytes())
    return h.hexdigest()
