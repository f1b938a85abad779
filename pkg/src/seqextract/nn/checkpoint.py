"""Parameter checkpoints: ``manifest.json`` plus little-endian float32 blob."""

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(store, path, architecture, config=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, p in store:
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": architecture,
        "dtype": "float32-le",
        "seed": store.seed,
        "params": entries,
        "config": config or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (path / "params.bin").write_bytes(b"".join(chunks))
    return path


def read_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint: unreadable manifest ({e})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format_version')} != supported {FORMAT_VERSION}"
        )
    return manifest


def load_arrays(path, expected_architecture=None):
    """Return (manifest, {name: float32 array})."""
    path = Path(path)
    manifest = read_manifest(path)
    arch = manifest.get("architecture")
    if expected_architecture is not None and arch != expected_architecture:
        raise CheckpointError(f"architecture mismatch: checkpoint is {arch}, expected {expected_architecture}")
    raw = (path / "params.bin").read_bytes() if (path / "params.bin").exists() else b""
    total = sum(e["count"] for e in manifest["params"])
    if len(raw) != 4 * total:
        raise CheckpointError(f"corrupt checkpoint: expected {4 * total} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4")
    arrays = {}
    for e in manifest["params"]:
        a = flat[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"])
        arrays[e["name"]] = a.astype(np.float32)
    return manifest, arrays


def load_into(store, path, expected_architecture=None):
    manifest, arrays = load_arrays(path, expected_architecture)
    for name, p in store:
        if name in arrays and list(arrays[name].shape) != list(p.data.shape):
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs manifest-built {p.data.shape}")
    try:
        store.load_state_dict(arrays)
    except KeyError as e:
        raise CheckpointError(str(e)) from e
    return manifest
