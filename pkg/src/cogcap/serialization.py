"""Binary tensor files and checkpoint directories.

Tensor file layout (all integers little-endian):
    magic   4 bytes  b"CGTN"
    version u32      1
    dtype   u8       1 = float64, 2 = int64
    ndim    u8
    dims    ndim * u64
    payload row-major little-endian values

A checkpoint is a directory holding manifest.json plus one .cgtn file per
named tensor. The manifest records the producing config, its hash, and a
sha256 per tensor file; loads verify every digest and the config hash, so a
flipped payload byte or a config edit is refused rather than read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CGTN"
FORMAT_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES_BY_KIND = {"f": 1, "i": 2}

MANIFEST_NAME = "manifest.json"
CHECKPOINT_FORMAT = "cogcap-checkpoint"
CHECKPOINT_VERSION = 1


class SerializationError(RuntimeError):
    """Malformed tensor file."""


class CheckpointError(RuntimeError):
    """Checkpoint directory missing, corrupt, or mismatched."""


# -- tensor files -----------------------------------------------------------


def tensor_to_bytes(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f8", copy=False)
    elif arr.dtype.kind in ("i", "u"):
        arr = arr.astype("<i8", copy=False)
    else:
        raise SerializationError(f"unsupported dtype {arr.dtype}")
    code = _CODES_BY_KIND[arr.dtype.kind]
    header = MAGIC + struct.pack("<IBB", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return header + np.ascontiguousarray(arr).tobytes()


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 10:
        raise SerializationError("truncated tensor file")
    if blob[:4] != MAGIC:
        raise SerializationError(f"bad magic {blob[:4]!r}")
    version, code, ndim = struct.unpack("<IBB", blob[4:10])
    if version != FORMAT_VERSION:
        raise SerializationError(f"unsupported format version {version}")
    if code not in _DTYPE_CODES:
        raise SerializationError(f"unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    offset = 10 + 8 * ndim
    if len(blob) < offset:
        raise SerializationError("truncated dimension header")
    dims = struct.unpack(f"<{ndim}Q", blob[10:offset]) if ndim else ()
    count = 1
    for d in dims:
        count *= d
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise SerializationError(f"payload size {len(blob) - offset}, expected {expected - offset}")
    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return flat.reshape(dims).copy()


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise SerializationError(f"no tensor file at {path}")
    return tensor_from_bytes(path.read_bytes())


# -- canonical JSON and hashing ---------------------------------------------


def canonical_json(obj) -> str:
    """Stable byte-for-byte JSON: sorted keys, fixed separators, newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=2) + "\n"


def sha256_hex(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def config_hash(config_dict: dict) -> str:
    return sha256_hex(canonical_json(config_dict).encode("utf-8"))


# -- checkpoint directories -------------------------------------------------


def save_checkpoint(
    directory: str | Path,
    kind: str,
    config: dict,
    tensors: dict[str, np.ndarray],
    step: int = 0,
    extra: dict | None = None,
) -> None:
    """Write manifest.json plus one .cgtn per tensor. Overwrites in place."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(tensors):
        blob = tensor_to_bytes(tensors[name])
        fname = f"{name}.cgtn"
        (directory / fname).write_bytes(blob)
        index[name] = {
            "file": fname,
            "sha256": sha256_hex(blob),
            "shape": list(np.asarray(tensors[name]).shape),
        }
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "step": int(step),
        "config": config,
        "config_hash": config_hash(config),
        "tensors": index,
    }
    if extra:
        manifest["extra"] = extra
    (directory / MANIFEST_NAME).write_text(canonical_json(manifest), encoding="utf-8")


def load_checkpoint(
    directory: str | Path,
    expected_kind: str | None = None,
    expected_config: dict | None = None,
):
    """Return (config, tensors, step, extra) after verifying every digest.

    expected_config, when given, must hash identically to the stored config;
    a mismatch is refused (a checkpoint only loads against the config that
    produced it).
    """
    directory = Path(directory)
    mpath = directory / MANIFEST_NAME
    if not mpath.is_file():
        raise CheckpointError(f"missing checkpoint: no {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"unreadable manifest in {directory}: {err}") from err
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"not a recognized checkpoint manifest: {mpath}")
    config = manifest.get("config")
    if config_hash(config) != manifest.get("config_hash"):
        raise CheckpointError(f"config hash mismatch in {mpath}")
    if expected_kind is not None and manifest.get("kind") != expected_kind:
        raise CheckpointError(f"checkpoint kind {manifest.get('kind')!r}, expected {expected_kind!r}")
    if expected_config is not None and config_hash(expected_config) != manifest["config_hash"]:
        raise CheckpointError("checkpoint was produced by a different config; refusing to load")
    tensors = {}
    for name, entry in manifest.get("tensors", {}).items():
        tpath = directory / entry["file"]
        if not tpath.is_file():
            raise CheckpointError(f"missing tensor file {entry['file']} in {directory}")
        blob = tpath.read_bytes()
        if sha256_hex(blob) != entry["sha256"]:
            raise CheckpointError(f"integrity failure: {entry['file']} digest mismatch")
        arr = tensor_from_bytes(blob)
        if list(arr.shape) != list(entry["shape"]):
            raise CheckpointError(f"tensor {name}: shape {arr.shape} vs manifest {entry['shape']}")
        tensors[name] = arr
    return config, tensors, int(manifest.get("step", 0)), manifest.get("extra", {})
