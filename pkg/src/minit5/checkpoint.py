"""Binary checkpoint container.

Layout (little-endian): magic "SQFG", version u32, u32-length-prefixed JSON
model config, tensor count u32, then per tensor: name (u16 length + UTF-8),
rank u8, dims u32 each, float32 data row-major. Tensors are written sorted by
name so identical parameters always produce identical bytes; save(load(x))
round-trips bit-exactly.

Optimizer state rides in the same container under "opt/" name prefixes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, ModelParams
from .optim import AdafactorState, AdamState

MAGIC = b"SQFG"
VERSION = 1


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    nbytes = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nbytes)))
    fh.write(nbytes)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", fh.read(2))
    name = fh.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<B", fh.read(1))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
    return name, data.astype(np.float64)


def _state_tensors(opt_state) -> dict[str, np.ndarray]:
    out = {"opt/step": np.array([opt_state.step], dtype=np.float64)}
    for name, slot in opt_state.slots.items():
        for key, arr in slot.items():
            out[f"opt/{key}/{name}"] = np.asarray(arr, dtype=np.float64)
    return out


def save_checkpoint(path: str, params: ModelParams, opt_state=None) -> None:
    tensors = dict(params.tensors)
    if opt_state is not None:
        tensors.update(_state_tensors(opt_state))
    cfg_bytes = json.dumps(params.cfg.to_dict(), sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            _write_tensor(fh, name, tensors[name])


def load_checkpoint(path: str, optimizer: str | None = None):
    """Returns ModelParams, or (ModelParams, opt_state) when an optimizer kind
    is given and the file carries optimizer slots."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        cfg = ModelConfig.from_dict(json.loads(fh.read(clen).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, arr = _read_tensor(fh)
            tensors[name] = arr
    model_tensors = {k: v for k, v in tensors.items() if not k.startswith("opt/")}
    params = ModelParams(cfg, model_tensors)
    if optimizer is None:
        return params
    opt_tensors = {k: v for k, v in tensors.items() if k.startswith("opt/")}
    state = AdafactorState() if optimizer == "adafactor" else AdamState()
    if "opt/step" in opt_tensors:
        state.step = int(opt_tensors.pop("opt/step")[0])
    for key, arr in opt_tensors.items():
        _, slot_key, name = key.split("/", 2)
        state.slots.setdefault(name, {})[slot_key] = arr
    return params, state
