"""
Binary checkpoint container shared by the pix2pixHD trainer and the progressive GAN.

Layout (all integers little-endian):

    bytes 0..7    magic b"LSCKPT01"
    bytes 8..11   uint32 header length L
    bytes 12..    UTF-8 JSON header (sorted keys, compact separators) of length L
    remainder     concatenated arrays in header tensor-table order

Header keys: kind, epoch, fingerprint, config, meta, tensors. Every tensor
entry carries name, shape, dtype (the original dtype, restored on load),
storage ('<f4' for floating tensors, '<i8' for integer and bool ones) and
offset (byte offset into the payload).
"""
import glob
import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from lesionsynth.errors import InvalidArgumentError
from lesionsynth.storage import atomic_write_bytes

MAGIC = b"LSCKPT01"
CHECKPOINT_SUFFIX = ".ckpt"


@dataclass
class Checkpoint:
    kind: str
    epoch: int
    fingerprint: str
    config: dict
    tensors: dict = field(default_factory=dict)  # name -> np.ndarray, insertion ordered
    meta: dict = field(default_factory=dict)


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _storage_of(dtype):
    return "<i8" if np.issubdtype(dtype, np.integer) or np.issubdtype(dtype, np.bool_) else "<f4"


def to_bytes(ckpt: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, array in ckpt.tensors.items():
        array = np.asarray(array)
        storage = _storage_of(array.dtype)
        data = np.ascontiguousarray(array, dtype=storage).tobytes()
        table.append({"name": name, "shape": list(array.shape), "dtype": str(array.dtype), "storage": storage,
                      "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = _canonical_json({
        "kind": ckpt.kind,
        "epoch": int(ckpt.epoch),
        "fingerprint": ckpt.fingerprint,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "tensors": table,
    }).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def from_bytes(payload: bytes) -> Checkpoint:
    if payload[:8] != MAGIC:
        raise InvalidArgumentError("Not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", payload[8:12])
    header = json.loads(payload[12:12 + header_len].decode("utf-8"))
    body = memoryview(payload)[12 + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        storage = np.dtype(entry.get("storage", "<f4"))
        flat = np.frombuffer(body[start:start + storage.itemsize * count], dtype=storage, count=count)
        tensors[entry["name"]] = flat.reshape(entry["shape"]).astype(entry["dtype"])
    return Checkpoint(
        kind=header["kind"],
        epoch=header["epoch"],
        fingerprint=header["fingerprint"],
        config=header["config"],
        tensors=tensors,
        meta=header["meta"],
    )


def save_checkpoint(ckpt: Checkpoint, path):
    atomic_write_bytes(path, to_bytes(ckpt))
    logging.info(f"Saved {ckpt.kind} checkpoint (epoch {ckpt.epoch}) to {path}")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def checkpoint_name(epoch):
    return f"epoch_{epoch:04d}{CHECKPOINT_SUFFIX}"


def latest_checkpoint(folder):
    """Path of the highest-epoch checkpoint in `folder`, or None."""
    candidates = sorted(glob.glob(os.path.join(folder, f"epoch_*{CHECKPOINT_SUFFIX}")))
    return candidates[-1] if candidates else None


# ---------------------------------------------------------------------------
# Module and optimizer state <-> named arrays
# ---------------------------------------------------------------------------

def module_arrays(prefix, module):
    return {f"{prefix}.{name}": value.detach().cpu().numpy() for name, value in module.state_dict().items()}


def load_module_arrays(prefix, module, tensors):
    state = {}
    for name, current in module.state_dict().items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise InvalidArgumentError(f"Checkpoint is missing tensor '{key}'")
        state[name] = torch.from_numpy(np.array(tensors[key])).to(current.dtype)
    module.load_state_dict(state)


def optimizer_arrays(prefix, optimizer):
    """Splits an optimizer state into named arrays plus JSON-safe metadata."""
    state_dict = optimizer.state_dict()
    arrays = {}
    scalars = {}
    for param_id, param_state in state_dict["state"].items():
        for key, value in param_state.items():
            name = f"{prefix}.state.{param_id}.{key}"
            if torch.is_tensor(value):
                arrays[name] = value.detach().cpu().numpy()
            else:
                scalars[name] = value
    groups = []
    for group in state_dict["param_groups"]:
        groups.append({key: (list(value) if isinstance(value, tuple) else value) for key, value in group.items()})
    return arrays, {"param_groups": groups, "scalars": scalars}


def load_optimizer_arrays(prefix, optimizer, tensors, meta):
    state = {}
    marker = f"{prefix}.state."
    for name, array in tensors.items():
        if not name.startswith(marker):
            continue
        param_id, key = name[len(marker):].split(".", 1)
        state.setdefault(int(param_id), {})[key] = torch.from_numpy(np.array(array))
    for name, value in meta.get("scalars", {}).items():
        param_id, key = name[len(marker):].split(".", 1)
        state.setdefault(int(param_id), {})[key] = value
    groups = []
    for group in meta["param_groups"]:
        restored = dict(group)
        if "betas" in restored:
            restored["betas"] = tuple(restored["betas"])
        groups.append(restored)
    optimizer.load_state_dict({"state": state, "param_groups": groups})
