"""Self-describing checkpoint container.

Byte layout (all integers little-endian):

    bytes 0..7    magic ``b"FRACKPT1"``
    bytes 8..11   uint32 header length H
    bytes 12..    UTF-8 JSON header (H bytes), keys sorted:
                    format: "fracas-checkpoint"
                    version: 1
                    meta: caller-supplied JSON object (rng seed, step, config, ...)
                    tensors: list of {name, shape, offset} in storage order
    rest          concatenated float64 little-endian row-major payloads,
                  offsets relative to the end of the header

Saving the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError

MAGIC = b"FRACKPT1"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = list(arrays)
    if len(set(names)) != len(names):
        raise ValueError("duplicate tensor names")
    entries = []
    offset = 0
    payloads = []
    for name in names:
        arr = np.asarray(arrays[name], dtype="<f8")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": "fracas-checkpoint",
        "version": VERSION,
        "meta": meta or {},
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointFormatError(f"{path}: unreadable header: {err}") from err
    if header.get("version") != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {header.get('version')!r}")
    payload = raw[12 + hlen :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        buf = payload[start : start + count * 8]
        if len(buf) != count * 8:
            raise CheckpointFormatError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, header["meta"]
