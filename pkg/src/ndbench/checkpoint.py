"""Single-file model checkpoints.

Layout of the ``ndbench-ckpt-v1`` container: a 4-byte little-endian header
length, a UTF-8 JSON header, then every parameter group concatenated as raw
little-endian float32.  The header records the model config, each group's
name/shape/byte offset, per-session normalization statistics, and a free-form
provenance block (seed, data hash, epochs).  Writing is deterministic: the
same checkpoint always produces the same bytes, which is what makes the
bitwise-reproducibility checks in the harness possible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import ModelConfig, param_shapes
from .datapipe import NormStats
from .tensor import Tensor

CKPT_FORMAT = "ndbench-ckpt-v1"


class CheckpointError(ValueError):
    """A checkpoint file or in-memory checkpoint is malformed."""


@dataclass
class Checkpoint:
    """Everything needed to rebuild and evaluate a trained model."""

    config: ModelConfig
    params: dict  # {group_name: Tensor}
    norm_stats: dict  # {session_id: NormStats}
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        expected = param_shapes(self.config)
        missing = sorted(set(expected) - set(self.params))
        extra = sorted(set(self.params) - set(expected))
        if missing or extra:
            raise CheckpointError(
                f"parameter groups do not match the config: missing {missing}, unexpected {extra}"
            )
        for name, shape in expected.items():
            got = tuple(self.params[name].data.shape)
            if got != tuple(shape):
                raise CheckpointError(f"group {name!r} has shape {got}, config implies {tuple(shape)}")


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write the checkpoint; identical checkpoints produce identical bytes."""
    ckpt.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    groups = []
    payload_parts = []
    offset = 0
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name].data, dtype="<f4")
        raw = arr.tobytes()
        groups.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload_parts.append(raw)
        offset += len(raw)

    header = {
        "format": CKPT_FORMAT,
        "config": ckpt.config.to_dict(),
        "groups": groups,
        "norm_stats": {sid: stats.to_dict() for sid, stats in sorted(ckpt.norm_stats.items())},
        "provenance": ckpt.provenance,
        "payload_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payload_parts:
            fh.write(raw)
    return path


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint and rebuild float32 parameter tensors ready to train."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 4:
        raise CheckpointError(f"{path}: too short to hold a header")
    (header_len,) = struct.unpack("<I", blob[:4])
    if len(blob) < 4 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: header is not valid JSON: {err}") from err
    if header.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path}: expected format {CKPT_FORMAT!r}, got {header.get('format')!r}")
    for key in ("config", "groups", "norm_stats"):
        if key not in header:
            raise CheckpointError(f"{path}: header missing key {key!r}")

    payload = blob[4 + header_len :]
    expected_bytes = header.get("payload_bytes")
    if expected_bytes is not None and len(payload) != expected_bytes:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected_bytes}"
        )

    config = ModelConfig.from_dict(header["config"])
    params = {}
    for group in header["groups"]:
        shape = tuple(group["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = group["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: group {group['name']!r} extends past the payload")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start).reshape(shape)
        params[group["name"]] = Tensor(arr.astype(np.float32), requires_grad=True)
    norm_stats = {sid: NormStats.from_dict(d) for sid, d in header["norm_stats"].items()}

    ckpt = Checkpoint(
        config=config,
        params=params,
        norm_stats=norm_stats,
        provenance=header.get("provenance", {}),
    )
    ckpt.validate()
    return ckpt


__all__ = ["CKPT_FORMAT", "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]
