"""Named-tensor checkpoint container.

Layout of a checkpoint file::

    b"G2SCKPT1"                 8-byte magic
    uint64 little-endian        length of the JSON manifest in bytes
    manifest (UTF-8 JSON)       names, shapes, byte offsets, step, lr, rng state, extras
    payload                     raw little-endian float32 values, tensors back to back
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

MAGIC = b"G2SCKPT1"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    *,
    step: int = 0,
    lr: float = 0.0,
    rng_state: Optional[dict] = None,
    extra: Optional[dict[str, Any]] = None,
) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=_LE_F32)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "count": int(data.size)})
        blob = data.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format": 1,
        "dtype": "float32-le",
        "tensors": entries,
        "step": int(step),
        "lr": float(lr),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    payload = memoryview(raw)[16 + hlen :]
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=_LE_F32, count=entry["count"], offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return arrays, manifest


def read_manifest(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode("utf-8"))
