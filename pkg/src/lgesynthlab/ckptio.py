"""Checkpoint container IO: a deterministic weight file plus a JSON sidecar.

The weight file is a canonical-JSON tree (sorted keys) in which every tensor
is replaced by a placeholder, followed by the raw little-endian tensor bytes
in placeholder order. Unlike a pickled zip archive, the bytes depend only on
the values, so loading and re-saving a checkpoint is byte-stable.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np
import torch

_MAGIC = b"LGSL0001"


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _encode(node, blobs: list):
    if isinstance(node, torch.Tensor):
        node = node.detach().cpu().numpy()
    if isinstance(node, np.ndarray):
        arr = np.ascontiguousarray(node)
        blobs.append(arr.tobytes())
        return {"__tensor__": len(blobs) - 1,
                "dtype": arr.dtype.str, "shape": list(arr.shape)}
    if isinstance(node, dict):
        return {"__dict__": {str(k): _encode(v, blobs) for k, v in sorted(node.items())}}
    if isinstance(node, (list, tuple)):
        return {"__list__": [_encode(v, blobs) for v in node]}
    if node is None or isinstance(node, (bool, int, float, str)):
        return {"__value__": node}
    raise TypeError(f"unsupported checkpoint value: {type(node)!r}")


def _decode(node, blobs: list):
    if "__tensor__" in node:
        raw = blobs[node["__tensor__"]]
        arr = np.frombuffer(raw, dtype=np.dtype(node["dtype"])).reshape(node["shape"])
        return torch.from_numpy(arr.copy())
    if "__dict__" in node:
        return {k: _decode(v, blobs) for k, v in node["__dict__"].items()}
    if "__list__" in node:
        return [_decode(v, blobs) for v in node["__list__"]]
    return node["__value__"]


def save_checkpoint(path: str, payload: dict, sidecar: dict) -> None:
    blobs: list[bytes] = []
    header = json.dumps(_encode(payload, blobs), sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)


def load_checkpoint(path: str) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blobs = []
        while True:
            raw = fh.read(8)
            if not raw:
                break
            (blen,) = struct.unpack("<Q", raw)
            blobs.append(fh.read(blen))
    payload = _decode(header, blobs)
    with open(path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return payload, sidecar
