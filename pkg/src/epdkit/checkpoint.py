"""Binary checkpoint format for model parameters.

Layout (little-endian throughout):

    magic   4 bytes  b"EIQA"
    version u16      currently 1
    json    u32 length + UTF-8 blob: {"config": ..., "metadata": ...,
                                      "optimizer": ... or null}
    count   u32      number of named arrays
    arrays  repeated: u16 name length, name bytes, u8 rank,
            rank * u32 dims, float32 payload

Optimizer moment arrays are stored as regular named arrays with an
``opt.`` prefix and reassembled on load. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig
from .tensor import Tensor

MAGIC = b"EIQA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(fh, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_array(fh):
    (nlen,) = struct.unpack("<H", fh.read(2))
    name = fh.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<B", fh.read(1))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
    return name, data.copy()


def save_checkpoint(path, cfg: ModelConfig, params: dict,
                    optimizer_state: dict | None = None,
                    metadata: dict | None = None) -> None:
    arrays = {}
    for name, t in params.items():
        arrays[name] = t.data if isinstance(t, Tensor) else np.asarray(t)

    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {k: v for k, v in optimizer_state.items()
                    if not isinstance(v, dict)}
        for slot, table in optimizer_state.items():
            if isinstance(table, dict):
                for name, arr in table.items():
                    arrays[f"opt.{slot}.{name}"] = np.asarray(arr)
                opt_meta[slot] = sorted(table)

    blob = json.dumps(
        {"config": cfg.to_json(), "metadata": metadata or {}, "optimizer": opt_meta},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            _write_array(fh, name, arrays[name])


def load_checkpoint(path):
    """Returns (cfg, params: name -> Tensor, optimizer_state | None, metadata)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (blen,) = struct.unpack("<I", fh.read(4))
        head = json.loads(fh.read(blen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = dict(_read_array(fh) for _ in range(count))

    cfg = ModelConfig.from_json(head["config"])
    params = {}
    opt_arrays: dict = {}
    for name, arr in arrays.items():
        if name.startswith("opt."):
            _, slot, pname = name.split(".", 2)
            opt_arrays.setdefault(slot, {})[pname] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True, name=name)

    opt_state = None
    if head.get("optimizer") is not None:
        opt_state = dict(head["optimizer"])
        for slot in list(opt_state):
            if isinstance(opt_state[slot], list):  # array table placeholder
                opt_state[slot] = opt_arrays.get(slot, {})
    return cfg, params, opt_state, head.get("metadata", {})
