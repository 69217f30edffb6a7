"""Deterministic key->array archive used for checkpoints and sample caches.

Layout (version 1):

    8 bytes   magic b"ASARCH1\\n"
    8 bytes   little-endian uint64 header length
    header    UTF-8 JSON, sorted keys: {"version", "meta", "arrays": [
                  {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload   raw C-order array bytes at the stated offsets

The writer is fully deterministic (no timestamps, fixed key order), so
identical contents produce byte-identical files and save -> load -> save
round-trips exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"ASARCH1\n"
VERSION = 1


def save_archive(path, arrays, meta=None):
    """arrays: iterable of (name, ndarray); meta: JSON-serializable dict."""
    entries = []
    payload = []
    offset = 0
    seen = set()
    for name, arr in arrays:
        if name in seen:
            raise CheckpointError(f"duplicate array name {name!r}")
        seen.add(name)
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": VERSION, "meta": meta or {}, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for raw in payload:
            fh.write(raw)
    return path


def load_archive(path):
    """Returns (dict name->array, meta dict)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read archive {path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not an angiosynth archive")
    try:
        hlen = int.from_bytes(blob[8:16], "little")
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
        if header["version"] != VERSION:
            raise CheckpointError(
                f"archive version {header['version']} unsupported"
            )
        base = 16 + hlen
        arrays = {}
        for ent in header["arrays"]:
            start = base + ent["offset"]
            raw = blob[start : start + ent["nbytes"]]
            if len(raw) != ent["nbytes"]:
                raise CheckpointError(f"{path} is truncated")
            arrays[ent["name"]] = np.frombuffer(
                raw, dtype=np.dtype(ent["dtype"])
            ).reshape(ent["shape"]).copy()
    except CheckpointError:
        raise
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt archive {path}: {exc}") from exc
    return arrays, header["meta"]
