"""Single-file model checkpoints.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"RODOMCKP"
    version      uint32    currently 1
    header_len   uint32
    header       header_len bytes of UTF-8 JSON: {"config", "buffers", "epoch",
                 "seed", "train", "extra"}
    blob_count   uint32
    blob_count times:
        name_len uint16, name (UTF-8), ndim uint8, dims uint32 * ndim,
        data     float64 '<f8', C order, prod(dims) values

Blob names are ``param/<parameter name>`` for weights and ``opt/<name>`` for
RMSProp accumulators.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import EgoNet, NetworkConfig, build_network

MAGIC = b"RODOMCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: EgoNet
    opt_state: dict = field(default_factory=dict)
    epoch: int = 0
    train: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _blob(name: str, arr: np.ndarray) -> bytes:
    key = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f8")
    out = struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return out + arr.tobytes()


def save_checkpoint(path, model: EgoNet, opt_state: dict | None = None, epoch: int = 0,
                    train: dict | None = None, extra: dict | None = None) -> Path:
    header = {"config": model.config.to_dict(), "buffers": dict(model.buffers), "epoch": int(epoch),
              "seed": int(model.seed), "train": train or {}, "extra": extra or {}}
    head = json.dumps(header, sort_keys=True).encode()
    blobs = [_blob(f"param/{k}", p.data) for k, p in model.params.items()]
    blobs += [_blob(f"opt/{k}", v) for k, v in sorted((opt_state or {}).items())]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head)
        fh.write(struct.pack("<I", len(blobs)))
        for b in blobs:
            fh.write(b)
    return path


def _read(buf: memoryview, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise CheckpointError("checkpoint truncated")
    return struct.unpack_from(fmt, buf, pos), pos + size


def load_checkpoint(path) -> Checkpoint:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:8]) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version, hlen), pos = _read(buf, 8, "<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(bytes(buf[pos:pos + hlen]).decode())
    pos += hlen
    (count,), pos = _read(buf, pos, "<I")
    blobs = {}
    for _ in range(count):
        (nlen,), pos = _read(buf, pos, "<H")
        name = bytes(buf[pos:pos + nlen]).decode()
        pos += nlen
        (ndim,), pos = _read(buf, pos, "<B")
        dims, pos = _read(buf, pos, f"<{ndim}I")
        n = int(np.prod(dims, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise CheckpointError("checkpoint truncated")
        blobs[name] = np.frombuffer(buf, "<f8", n, pos).reshape(dims).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last blob")

    model = build_network(NetworkConfig.from_dict(header["config"]), header.get("seed", 0))
    for k, p in model.params.items():
        arr = blobs.get(f"param/{k}")
        if arr is None or arr.shape != p.shape:
            raise CheckpointError(f"parameter {k!r} missing or mis-shaped in checkpoint")
        p.data[...] = arr
    model.buffers.update(header["buffers"])
    opt = {k[4:]: v.copy() for k, v in blobs.items() if k.startswith("opt/")}
    return Checkpoint(model, opt, header["epoch"], header.get("train", {}), header.get("extra", {}))
