"""Deterministic flat-binary container for named arrays.

torch.save / np.savez embed zip metadata that is not guaranteed byte-stable,
so checkpoints use this format instead: a magic line, a JSON header with
sorted keys, then the raw little-endian payloads in header order. Identical
arrays always produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GTNS1\n"


def _canonical_dtype(dtype: np.dtype) -> str:
    dt = np.dtype(dtype).newbyteorder("<")
    return dt.str


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = _canonical_dtype(arr.dtype)
        blob = arr.astype(dt, copy=False).tobytes()
        entries[name] = {"dtype": dt, "shape": list(arr.shape), "offset": offset}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a tensor container (bad magic)")
    n = struct.unpack_from("<Q", data, len(MAGIC))[0]
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + n].decode("utf-8"))
    payload_start = start + n
    out = {}
    for name, meta in header["arrays"].items():
        dt = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        o = payload_start + meta["offset"]
        out[name] = np.frombuffer(data, dtype=dt, count=count, offset=o).reshape(shape).copy()
    return out


def state_dict_to_arrays(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def load_state_dict_from(path, module) -> None:
    import torch

    arrays = load_arrays(path)
    sd = {k: torch.from_numpy(v) for k, v in arrays.items()}
    module.load_state_dict(sd)


def save_module(path, module) -> None:
    save_arrays(path, state_dict_to_arrays(module.state_dict()))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def json_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]
