"""Model files.

Binary layout (little-endian)::

    magic "RSNN" | version u32 | arch_len u32 | arch JSON (utf-8)
    block_count u32
    per block: name_len u32 | name | ndim u32 | dims u64 * ndim | float64 data

A JSON sidecar (``<file>.json``) repeats the architecture and carries the
training configuration. Both files are byte-stable for identical models.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from .lstm import LstmModel, model_from_parameters
from .mlp import MlpModel

MAGIC = b"RSNN"
VERSION = 1


def _arch(model) -> dict:
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "sizes": model.sizes}
    if isinstance(model, LstmModel):
        return model.arch()
    raise ParameterError(f"cannot serialize {type(model).__name__}")


def _blocks(model) -> dict[str, np.ndarray]:
    params = dict(model.parameters())
    if isinstance(model, MlpModel):
        params["input_mean"] = model.input_mean
        params["input_scale"] = model.input_scale
    return params


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_bytes(model) -> bytes:
    arch = _dumps(_arch(model))
    out = [struct.pack("<4sII", MAGIC, VERSION, len(arch)), arch]
    blocks = _blocks(model)
    out.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save_model(path, model, train_config: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(model_bytes(model))
    sidecar = {"format": "RSNN", "version": VERSION, "arch": _arch(model),
               "train_config": train_config or {}, **(extra or {})}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path):
    data = Path(path).read_bytes()
    try:
        magic, version, arch_len = struct.unpack_from("<4sII", data, 0)
    except struct.error as exc:
        raise ParameterError("model file is truncated") from exc
    if magic != MAGIC:
        raise ParameterError(f"not a model file (magic {magic!r})")
    if version != VERSION:
        raise ParameterError(f"unsupported model version {version}")
    pos = 12
    arch = json.loads(data[pos : pos + arch_len].decode("utf-8"))
    pos += arch_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(data):
        raise ParameterError("trailing bytes in model file")

    if arch["kind"] == "mlp":
        n = len(arch["sizes"]) - 1
        return MlpModel([blocks[f"W{i}"] for i in range(n)], [blocks[f"b{i}"] for i in range(n)],
                        blocks["input_mean"], blocks["input_scale"])
    if arch["kind"] == "lstm":
        return model_from_parameters(blocks, arch["block"], arch["patch_size"])
    raise ParameterError(f"unknown model kind {arch['kind']!r}")
