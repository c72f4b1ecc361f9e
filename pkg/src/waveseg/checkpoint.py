"""Single-file checkpoint format with a bit-exact round trip.

Layout: an 8-byte magic, a little-endian u64 manifest length, a JSON manifest
mapping tensor names to dims/dtype/byte offsets, then the raw tensor data as
little-endian scalars in manifest order. Offsets are relative to the start of
the data section.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"WVSGCKP1"

_DTYPE_TO_CODE = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_CODE_TO_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays to ``path``. Order of ``tensors`` is preserved."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype not in _DTYPE_TO_CODE:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dims": list(arr.shape),
                "dtype": _DTYPE_TO_CODE[arr.dtype],
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {"tensors": entries}
    if meta:
        manifest["meta"] = meta
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(mbytes).to_bytes(8, "little"))
        fh.write(mbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back into named arrays plus its meta dict."""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if payload[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a waveseg checkpoint (bad magic)")
    mlen = int.from_bytes(payload[8:16], "little")
    try:
        manifest = json.loads(payload[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}")
    data = payload[16 + mlen :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        dtype = _CODE_TO_DTYPE.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {entry['dtype']!r}")
        raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {name!r} is truncated")
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["dims"])
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, manifest.get("meta", {})


def check_state_compatible(expected: dict[str, np.ndarray], loaded: dict[str, np.ndarray], path="checkpoint") -> None:
    """Raise naming the first offending tensor if the two states disagree."""
    for name, arr in loaded.items():
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} not present in the model")
        want = expected[name]
        if tuple(arr.shape) != tuple(want.shape):
            raise CheckpointError(f"{path}: tensor {name!r} has dims {tuple(arr.shape)}, model expects {tuple(want.shape)}")
        if arr.dtype != want.dtype:
            raise CheckpointError(f"{path}: tensor {name!r} has dtype {arr.dtype}, model expects {want.dtype}")
    for name in expected:
        if name not in loaded:
            raise CheckpointError(f"{path}: tensor {name!r} missing from checkpoint")
