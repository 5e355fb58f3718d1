"""Binary checkpoint format.

Layout: 8-byte magic ``DMIFORGE``, uint32 version, uint64 manifest length,
UTF-8 JSON manifest, then the little-endian float64 payload. The manifest
records name, shape and byte offset of every array.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .optim import ParamStore

MAGIC = b"DMIFORGE"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(
    store: ParamStore,
    path: str | Path,
    vocab_hash: str = "",
    config: dict[str, Any] | None = None,
    with_moments: bool = True,
) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for name, p in store.params.items():
        arrays.append((name, p.data))
        if with_moments:
            arrays.append((f"adam.m/{name}", store.m[name]))
            arrays.append((f"adam.v/{name}", store.v[name]))
    entries, offset = [], 0
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "version": VERSION,
        "arrays": entries,
        "step": store.step,
        "vocab_hash": vocab_hash,
        "config": config or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_manifest(path: str | Path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, mlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        manifest = json.loads(raw[20 : 20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    return manifest, raw[20 + mlen :]


def load_checkpoint(path: str | Path, vocab_hash: str | None = None) -> tuple[ParamStore, dict]:
    """Returns the store and the manifest. A given ``vocab_hash`` must match the stored one."""
    manifest, payload = read_manifest(path)
    if vocab_hash is not None and manifest.get("vocab_hash") != vocab_hash:
        raise CheckpointError(
            f"{path}: vocabulary hash mismatch (checkpoint {manifest.get('vocab_hash')!r}, expected {vocab_hash!r})"
        )
    store = ParamStore()
    moments: dict[str, np.ndarray] = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start + 8 * n > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {e['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start).reshape(e["shape"]).astype(np.float64)
        if e["name"].startswith("adam."):
            moments[e["name"]] = arr
        else:
            store.add(e["name"], arr)
    for name in store.params:
        if f"adam.m/{name}" in moments:
            store.m[name] = moments[f"adam.m/{name}"]
            store.v[name] = moments[f"adam.v/{name}"]
    store.step = int(manifest.get("step", 0))
    return store, manifest
