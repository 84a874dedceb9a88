"""Versioned binary checkpoint container.

Layout: a fixed header (magic ``HYBSEG``, format version, byte lengths of
the model-config / train-config / metadata JSON blocks, tensor count, and
a CRC-32 of the payload) followed by the JSON blocks and named-tensor
records. Tensors are stored as raw little-endian bytes, so a reload is
bit-exact and training can resume with identical optimizer moments.
"""
from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .config import ModelConfig, TrainConfig
from .exceptions import (CheckpointError, CheckpointIntegrityError,
                         CheckpointVersionError)

MAGIC = b"HYBSEG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sIIIIII")  # magic, version, cfg lens x3, n_tensors, crc32


@dataclass
class CheckpointRecord:
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    monitored_value: float
    model_state: dict[str, Tensor]
    optimizer_state: dict[str, Tensor]
    format_version: int = FORMAT_VERSION


def _encode_tensor(name: str, t: Tensor) -> bytes:
    arr = t.detach().cpu().contiguous().numpy()
    name_b = name.encode()
    dtype_b = arr.dtype.str.encode()  # e.g. '<f4'
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<B", len(dtype_b)) + dtype_b
    head += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape)
    data = arr.tobytes()
    return head + struct.pack("<Q", len(data)) + data


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIntegrityError("checkpoint truncated mid-record")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _decode_tensor(r: _Reader) -> tuple[str, Tensor]:
    (name_len,) = r.unpack("<H")
    name = r.take(name_len).decode()
    (dtype_len,) = r.unpack("<B")
    dtype = np.dtype(r.take(dtype_len).decode())
    (ndim,) = r.unpack("<B")
    shape = r.unpack(f"<{ndim}q") if ndim else ()
    (nbytes,) = r.unpack("<Q")
    arr = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape)
    return name, torch.from_numpy(arr.copy())


def save_checkpoint(record: CheckpointRecord, path: str | Path) -> None:
    model_json = json.dumps(dataclasses.asdict(record.model_config)).encode()
    train_json = json.dumps(dataclasses.asdict(record.train_config)).encode()
    meta_json = json.dumps({"epoch": record.epoch,
                            "monitored_value": record.monitored_value}).encode()
    payload = bytearray(model_json + train_json + meta_json)
    n_tensors = 0
    for section, tensors in (("model", record.model_state),
                             ("optim", record.optimizer_state)):
        for name, t in tensors.items():
            payload += _encode_tensor(f"{section}.{name}", t)
            n_tensors += 1
    header = _HEADER.pack(MAGIC, record.format_version, len(model_json),
                          len(train_json), len(meta_json), n_tensors,
                          zlib.crc32(payload))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> CheckpointRecord:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointIntegrityError(f"{path}: too short to be a checkpoint")
    magic, version, model_len, train_len, meta_len, n_tensors, crc = \
        _HEADER.unpack(raw[:_HEADER.size])
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not a {MAGIC.decode()} file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} found, expected {FORMAT_VERSION}")
    payload = raw[_HEADER.size:]
    if zlib.crc32(payload) != crc:
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")
    r = _Reader(payload)
    try:
        model_cfg = ModelConfig(**json.loads(r.take(model_len)))
        train_cfg = TrainConfig(**json.loads(r.take(train_len)))
        meta = json.loads(r.take(meta_len))
        model_state: dict[str, Tensor] = {}
        optim_state: dict[str, Tensor] = {}
        for _ in range(n_tensors):
            name, t = _decode_tensor(r)
            section, _, key = name.partition(".")
            (model_state if section == "model" else optim_state)[key] = t
    except (json.JSONDecodeError, UnicodeDecodeError, TypeError, ValueError) as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt payload ({exc})") from exc
    return CheckpointRecord(model_config=model_cfg, train_config=train_cfg,
                            epoch=meta["epoch"],
                            monitored_value=meta["monitored_value"],
                            model_state=model_state, optimizer_state=optim_state,
                            format_version=version)


def snapshot_optimizer(optimizer: torch.optim.Optimizer) -> dict[str, Tensor]:
    """Flatten optimizer moments into named tensors (param index . state key)."""
    out: dict[str, Tensor] = {}
    for idx, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            if not isinstance(value, Tensor):
                value = torch.as_tensor(value)
            out[f"{idx}.{key}"] = value.clone()
    return out


def restore_optimizer(optimizer: torch.optim.Optimizer,
                      flat_state: dict[str, Tensor]) -> None:
    """Inverse of :func:`snapshot_optimizer` onto a freshly built optimizer."""
    sd = optimizer.state_dict()
    state: dict[int, dict[str, Tensor]] = {}
    for name, t in flat_state.items():
        idx_str, _, key = name.partition(".")
        state.setdefault(int(idx_str), {})[key] = t
    sd["state"] = state
    optimizer.load_state_dict(sd)


def snapshot_model(model: torch.nn.Module) -> dict[str, Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}
