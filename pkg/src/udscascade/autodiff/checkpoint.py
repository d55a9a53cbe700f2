"""Named-parameter archive.

Layout: one JSON header line (format tag, version, free-form metadata and a
table of ``name``/``shape``/``offset``), then the parameters' little-endian
float64 data back to back.  Output is byte-stable for identical inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "uds-cascade-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_checkpoint(named_arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    table = []
    offset = 0
    blobs = []
    for name, arr in named_arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = {"format": FORMAT, "version": VERSION, "meta": meta or {}, "params": table}
    line = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n"
    return line + b"".join(blobs)


def save_checkpoint(path, named_arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dump_checkpoint(named_arrays, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    data = np.frombuffer(raw[newline + 1:], dtype="<f8")
    arrays = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        start = entry["offset"]
        if start + count > data.size:
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = data[start:start + count].reshape(entry["shape"]).astype(np.float64)
    return arrays, header["meta"]
