"""Binary checkpoint format shared by every training stage.

Layout: magic ``PORTALCK``, u32 little-endian version, u64 little-endian JSON
metadata length, the JSON metadata (config plus a named tensor directory with
shapes and offsets), then raw little-endian float32 tensor data in directory
order. Serialization is fully deterministic: identical metadata and tensors
produce identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np
import torch

MAGIC = b"PORTALCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, meta: dict, tensors: dict[str, np.ndarray]):
    """Write atomically: the file appears only after a fully successful dump."""
    directory = []
    blobs = []
    offset = 0
    for name, tensor in tensors.items():
        # asarray keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
        arr = np.asarray(tensor, dtype="<f4").copy(order="C")
        blob = arr.tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    payload = json.dumps({"meta": meta, "tensors": directory},
                         sort_keys=True, separators=(",", ":")).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        payload = json.loads(f.read(meta_len).decode("utf-8"))
        data = f.read()
    tensors = {}
    for entry in payload["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return payload["meta"], tensors


def state_dict_to_tensors(state: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
    return {name: value.detach().cpu().numpy() for name, value in state.items()}


def tensors_to_state_dict(tensors: dict[str, np.ndarray], reference: dict[str, torch.Tensor]):
    out = {}
    for name, ref in reference.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"tensor {name!r} shape {arr.shape} != expected {tuple(ref.shape)}")
        out[name] = torch.from_numpy(arr.copy()).to(ref.dtype)
    return out
