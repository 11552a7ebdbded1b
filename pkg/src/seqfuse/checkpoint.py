"""Binary checkpoint files.

Layout: magic "SQF1", then a u64 entry count, then per entry

    u64 name length | name UTF-8 | u64 rank | rank * u64 extents
    | product(extents) * f64 values

all integers and floats little-endian, and finally the training
metadata as UTF-8 JSON running to end of file. Parameters are written
in sorted name order so identical values give identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SQF1"


class CheckpointError(Exception):
    """Unreadable checkpoint or architecture mismatch."""


def save_checkpoint(path, params, metadata: dict):
    """params: mapping name -> Tensor or array; metadata: JSON-serializable."""
    chunks = [MAGIC, struct.pack("<Q", len(params))]
    for name in sorted(params):
        values = getattr(params[name], "values", params[name])
        arr = np.ascontiguousarray(values, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    chunks.append(json.dumps(metadata, sort_keys=True).encode("utf-8"))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {offset}")
        piece = buf[offset:offset + n]
        offset += n
        return piece

    offset = 4
    (count,) = struct.unpack("<Q", take(8))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        extents = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = 1
        for e in extents:
            size *= e
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(extents).copy()
        params[name] = values
    try:
        metadata = json.loads(buf[offset:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad metadata: {e}") from None
    return params, metadata


def check_architecture(loaded: dict[str, np.ndarray], model_params: dict):
    """Verify name sets and shapes match exactly before any value is copied."""
    missing = sorted(set(model_params) - set(loaded))
    extra = sorted(set(loaded) - set(model_params))
    if missing or extra:
        raise CheckpointError(
            "checkpoint does not match the model architecture: "
            f"missing {missing or 'none'}, extra {extra or 'none'}")
    for name, tensor in model_params.items():
        if loaded[name].shape != tensor.shape:
            raise CheckpointError(
                f"checkpoint parameter {name!r} has shape {loaded[name].shape}, "
                f"model expects {tensor.shape}")


def load_into(model, path) -> dict:
    """Load a checkpoint into a model with a .params dict; returns metadata."""
    loaded, metadata = load_checkpoint(path)
    check_architecture(loaded, model.params)
    for name, tensor in model.params.items():
        tensor.values = np.ascontiguousarray(loaded[name])
        tensor.zero_grad()
    return metadata
