"""Checkpoint files.

Layout: the magic bytes ``TBLGEN``, a little-endian uint32 format version, a
uint64 header length, a UTF-8 JSON header (config, vocab reference, tensor
table with shapes and byte offsets), then raw little-endian float32 tensor
data in header order.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig
from .transformer import Params, ShapeMismatch, param_shapes

MAGIC = b"TBLGEN"
FORMAT_VERSION = 1
_PRELUDE = struct.Struct("<6sIQ")


class FormatVersionMismatch(ValueError):
    pass


class IoFailure(OSError):
    pass


def save_checkpoint(p: Params, cfg: ModelConfig, path: str | Path, vocab_path: Optional[str] = None,
                    vocab_tokens: Optional[list[str]] = None, extra: Optional[dict] = None) -> None:
    expected = param_shapes(cfg)
    tensors = []
    offset = 0
    for name, shape in expected.items():
        if name not in p or tuple(p[name].shape) != shape:
            raise ShapeMismatch(f"parameter {name} does not match the config")
        nbytes = int(np.prod(shape)) * 4
        tensors.append({"name": name, "shape": list(shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {"config": cfg.to_dict(), "vocab_path": vocab_path, "vocab": vocab_tokens,
              "tensors": tensors, "extra": extra or {}}
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PRELUDE.pack(MAGIC, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            for t in tensors:
                fh.write(np.ascontiguousarray(p[t["name"]], dtype="<f4").tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_header(path: str | Path) -> tuple[dict, int]:
    try:
        with open(path, "rb") as fh:
            prelude = fh.read(_PRELUDE.size)
            if len(prelude) < _PRELUDE.size:
                raise FormatVersionMismatch("file too short to be a checkpoint")
            magic, version, hlen = _PRELUDE.unpack(prelude)
            if magic != MAGIC:
                raise FormatVersionMismatch("not a checkpoint (bad magic)")
            if version != FORMAT_VERSION:
                raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
            blob = fh.read(hlen)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) != hlen:
        raise FormatVersionMismatch("truncated header")
    try:
        return json.loads(blob.decode("utf-8")), _PRELUDE.size + hlen
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionMismatch(f"corrupt header: {exc}") from exc


def load_checkpoint(path: str | Path, expect: Optional[ModelConfig] = None) -> tuple[Params, ModelConfig, dict]:
    """Returns ``(params, config, header)``. With ``expect`` given, any tensor
    shape differing from that config raises ShapeMismatch."""
    header, start = read_header(path)
    cfg = ModelConfig.from_dict(header["config"])
    shapes = param_shapes(expect or cfg)
    try:
        data = Path(path).read_bytes()[start:]
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    total = sum(t["nbytes"] for t in header["tensors"])
    if len(data) != total:
        raise FormatVersionMismatch(f"tensor data has {len(data)} bytes, header declares {total}")
    p: Params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if shapes.get(t["name"]) != shape:
            raise ShapeMismatch(f"tensor {t['name']} has shape {shape}, config expects {shapes.get(t['name'])}")
        raw = data[t["offset"]: t["offset"] + t["nbytes"]]
        p[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    missing = set(shapes) - set(p)
    if missing:
        raise ShapeMismatch(f"checkpoint lacks tensors {sorted(missing)}")
    return p, cfg, header
