"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"SYMDILCK"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header, keys sorted:
                    {"config": {...}, "vocab": [...], "meta": {...},
                     "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    remainder     concatenated little-endian float64 tensor payloads,
                  C order, in header order; offsets are relative to the
                  start of the payload section

The writer emits nothing time- or host-dependent, so identical parameters
produce byte-identical files, and reading restores every tensor bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig

MAGIC = b"SYMDILCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: dict[str, np.ndarray], config: ModelConfig,
                      vocab: list[str] | None = None, meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config.to_dict(), "vocab": list(vocab or []),
                         "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], ModelConfig, list[str], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a symdil checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[20:20 + hlen])
    payload = memoryview(blob)[20 + hlen:]
    params = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"truncated payload for tensor {e['name']}")
        params[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return params, ModelConfig.from_dict(header["config"]), header["vocab"], header["meta"]


def save_checkpoint(path, params, config, vocab=None, meta=None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config, vocab, meta))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
