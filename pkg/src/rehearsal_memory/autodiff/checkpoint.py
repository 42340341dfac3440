"""Checkpoint container: "RMCK1" magic, JSON manifest, little-endian f32 blob.

Layout: 5 magic bytes, 8-byte little-endian manifest length, UTF-8 manifest
JSON, then the raw parameter bytes. The manifest lists {name, shape,
byte_offset} per tensor (offsets relative to the blob) plus free-form
metadata; loading validates the magic and the total blob length.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"RMCK1"


def save_tensors(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    metadata: dict | None = None,
) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(arr32.tobytes())
        offset += arr32.nbytes
    manifest = {
        "params": entries,
        "total_bytes": offset,
        "meta": metadata or {},
    }
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(body).to_bytes(8, "little"))
        fh.write(body)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic, not an RMCK1 checkpoint")
    manifest_len = int.from_bytes(raw[5:13], "little")
    try:
        manifest = json.loads(raw[13 : 13 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest: {exc}") from exc
    blob = raw[13 + manifest_len :]
    if len(blob) != manifest["total_bytes"]:
        raise DataError(
            f"{path}: blob length {len(blob)} != manifest total {manifest['total_bytes']}"
        )
    out = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).copy()
    return out, manifest.get("meta", {})


def checkpoint_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialized size probe used by the O(1)-storage checks."""
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".rmck") as tmp:
        save_tensors(tmp.name, tensors)
        return Path(tmp.name).read_bytes()
