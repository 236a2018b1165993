"""Versioned checkpoint files for policy parameters.

Layout: 8 magic bytes, a little-endian uint32 format version, then a
``torch.save`` payload holding the config header, the trained-on variants,
free-form metadata and every named tensor (batch-norm statistics included).
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import torch

from ..core import VRPError
from .model import PolicyConfig, PolicyNet

MAGIC = b"HVRPPOL\x00"
FORMAT_VERSION = 1


class CheckpointError(VRPError):
    """Unreadable, corrupt, incompatible or wrong-version checkpoint."""


class CheckpointFormatError(CheckpointError, ValueError):
    pass


def save_checkpoint(model: PolicyNet, path, variants=(), meta: dict | None = None) -> None:
    state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    payload = {
        "config": model.config.to_dict(),
        "variants": [str(v) for v in variants],
        "meta": dict(meta or {}),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "dtypes": {k: str(v.dtype) for k, v in state.items()},
        "tensors": state,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(MAGIC + struct.pack("<I", FORMAT_VERSION) + buf.getvalue())


def read_checkpoint(path) -> dict:
    """Raw payload after header checks."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a policy checkpoint (bad magic bytes)")
    if len(data) < len(MAGIC) + 4:
        raise CheckpointFormatError(f"{path}: truncated header")
    (version,) = struct.unpack("<I", data[len(MAGIC): len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        payload = torch.load(io.BytesIO(data[len(MAGIC) + 4:]), weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for damaged archives
        raise CheckpointFormatError(f"{path}: corrupt archive ({exc})") from exc
    if not isinstance(payload, dict) or not {"config", "tensors"} <= payload.keys():
        raise CheckpointFormatError(f"{path}: missing config or tensors")
    return payload


def load_checkpoint(path) -> PolicyNet:
    payload = read_checkpoint(path)
    try:
        config = PolicyConfig(**payload["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config header ({exc})") from exc
    model = PolicyNet(config)
    tensors = payload["tensors"]
    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: tensor names differ (missing {missing}, unexpected {extra})")
    for k, v in tensors.items():
        if v.shape != expected[k].shape:
            raise CheckpointError(f"{path}: {k} has shape {tuple(v.shape)}, expected {tuple(expected[k].shape)}")
    model.load_state_dict(tensors)
    model.trained_on = list(payload.get("variants", []))
    model.meta = dict(payload.get("meta", {}))
    model.eval()
    return model
