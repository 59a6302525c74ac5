"""Checkpoint container: text header plus raw little-endian float32 payloads.

Layout (all header lines are UTF-8, newline terminated):

    VSANETCKPT1
    config {...one-line JSON of ModelConfig...}
    tensor <name> <d0,d1,...> f32
    ...
    data

followed by each tensor's values in header order, row-major float32 LE.
Saving the result of a load reproduces the file byte-exactly.
"""

from __future__ import annotations

import io
import json
import os

import numpy as np

from .model import ModelConfig, ModelParams, parameter_specs
from .tensor import Tensor

MAGIC = "VSANETCKPT1"


def save_checkpoint(path: str, params: ModelParams, extra: dict[str, np.ndarray] | None = None):
    """Write params (and optional extra named arrays, e.g. optimizer state)."""
    names = [s.name for s in parameter_specs(params.config)]
    entries: list[tuple[str, np.ndarray]] = [(n, params[n].data) for n in names]
    if extra:
        for n in sorted(extra):
            entries.append((n, np.asarray(extra[n])))
    buf = io.BytesIO()
    buf.write((MAGIC + "\n").encode())
    cfg_line = json.dumps(params.config.to_dict(), sort_keys=True, separators=(",", ":"))
    buf.write(f"config {cfg_line}\n".encode())
    for name, arr in entries:
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "1"
        buf.write(f"tensor {name} {dims} f32\n".encode())
    buf.write(b"data\n")
    for _, arr in entries:
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str, dtype=np.float32) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (params, extra arrays not in the model)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_end = blob.find(b"data\n")
    if head_end < 0 or not blob.startswith((MAGIC + "\n").encode()):
        raise ValueError(f"{path} is not a {MAGIC} checkpoint")
    header = blob[: head_end].decode().splitlines()
    payload = blob[head_end + len(b"data\n") :]
    config = None
    entries: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            config = ModelConfig.from_dict(json.loads(rest))
        elif kind == "tensor":
            name, dims, dt = rest.rsplit(" ", 2)
            if dt != "f32":
                raise ValueError(f"unsupported payload dtype {dt}")
            entries.append((name, tuple(int(d) for d in dims.split(","))))
        else:
            raise ValueError(f"unknown header line: {line}")
    if config is None:
        raise ValueError("checkpoint header lacks a config line")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        n = int(np.prod(shape))
        raw = payload[offset : offset + 4 * n]
        if len(raw) != 4 * n:
            raise ValueError("checkpoint payload truncated")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
        offset += 4 * n

    specs = {s.name: s for s in parameter_specs(config)}
    tensors: dict[str, Tensor] = {}
    for name, spec in specs.items():
        if name not in arrays:
            raise ValueError(f"checkpoint missing tensor {name}")
        arr = arrays.pop(name)
        if arr.shape != tuple(spec.shape):
            raise ValueError(f"tensor {name} has shape {arr.shape}, expected {spec.shape}")
        tensors[name] = Tensor(arr, requires_grad=spec.trainable)
    params = ModelParams(config, tensors, frozenset(n for n, s in specs.items() if not s.trainable))
    return params, arrays
