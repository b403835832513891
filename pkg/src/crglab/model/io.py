"""Model files: 8-byte little-endian header length, a UTF-8 JSON header, then the
weights as one little-endian float64 blob in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION
from ..errors import InputError
from .config import ModelConfig
from .decoder import DecoderModel, param_shapes

MAGIC = "crglab.model/1"


def to_bytes(model: DecoderModel) -> bytes:
    shapes = param_shapes(model.config)
    header = {
        "format": MAGIC,
        "schema": SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "params": [[name, list(shape)] for name, shape in shapes.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(model[name], dtype="<f8").tobytes() for name in shapes)
    return struct.pack("<Q", len(head)) + head + blob


def from_bytes(data: bytes) -> DecoderModel:
    if len(data) < 8:
        raise InputError("model file truncated before header")
    (n,) = struct.unpack("<Q", data[:8])
    if 8 + n > len(data):
        raise InputError("model header length exceeds file size")
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"unreadable model header: {exc}") from exc
    if header.get("format") != MAGIC:
        raise InputError(f"not a model file (format={header.get('format')!r})")
    cfg = ModelConfig.from_dict(header["config"])
    shapes = param_shapes(cfg)
    if [[k, list(v)] for k, v in shapes.items()] != header["params"]:
        raise InputError("parameter manifest in header does not match the config")
    flat = np.frombuffer(data, dtype="<f8", offset=8 + n)
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != expected or (len(data) - 8 - n) % 8:
        raise InputError(f"weight blob holds {flat.size} values, expected {expected}")
    params, pos = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].astype(np.float64).reshape(shape)
        pos += size
    return DecoderModel(cfg, params)


def save(model: DecoderModel, path: Path | str) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: Path | str) -> DecoderModel:
    return from_bytes(Path(path).read_bytes())
