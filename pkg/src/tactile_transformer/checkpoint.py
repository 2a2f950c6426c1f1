"""Single-file binary checkpoints.

Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then raw little-endian float64 blobs. The header carries the config
echo, stage, epoch counters, the RNG record, scalar optimizer state and a
named index (name, group, shape, offset, nbytes) for every blob. Blobs are
sorted by (group, name) and JSON keys are sorted, so identical state always
serializes to identical bytes.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TACTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    stage: str  # "pretrain" | "finetune"
    epoch: int  # completed epochs at save time
    config: dict
    params: dict[str, np.ndarray]
    optimizer_t: int = 0
    optimizer_slots: dict[str, np.ndarray] = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: Path | str, ckpt: Checkpoint) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    groups = [("param", ckpt.params), ("opt", ckpt.optimizer_slots)]
    for group, arrays in groups:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
            raw = arr.astype("<f8").tobytes()
            entries.append(
                {
                    "name": name,
                    "group": group,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            blobs.append(raw)
            offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "optimizer": {"t": ckpt.optimizer_t},
        "rng": ckpt.rng,
        "extra": ckpt.extra,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + header_len > len(data):
        raise CheckpointError(f"truncated checkpoint header: {path}")
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {path}") from exc
    pos += header_len
    params: dict[str, np.ndarray] = {}
    slots: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start = pos + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint blob for {entry['name']!r}")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(entry["shape"]).copy()
        if entry["group"] == "param":
            params[entry["name"]] = arr
        else:
            slots[entry["name"]] = arr
    return Checkpoint(
        stage=header["stage"],
        epoch=int(header["epoch"]),
        config=header["config"],
        params=params,
        optimizer_t=int(header.get("optimizer", {}).get("t", 0)),
        optimizer_slots=slots,
        rng=header.get("rng", {}),
        extra=header.get("extra", {}),
    )
