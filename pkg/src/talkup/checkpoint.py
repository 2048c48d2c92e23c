"""Checkpoint container: JSON header plus named little-endian tensor blobs.

Layout::

    "TKCK" | u16 version | u32 header_len | header JSON (utf-8) |
    repeated: u16 name_len | name | u8 dtype | u8 ndim | u32 dims[ndim] | data

``role`` tags a checkpoint as ``trainable`` or ``frozen-scorer``; frozen
scorers are loaded with gradients disabled.
"""
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, CorruptStream

MAGIC = b"TKCK"
VERSION = 1
ROLES = ("trainable", "frozen-scorer")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("int64"): 1}


def save_checkpoint(path, module, *, kind, config, role="trainable", extra=None):
    """Write ``module.state_dict()`` with a self-describing header."""
    if role not in ROLES:
        raise ConfigurationError(f"role must be one of {ROLES}")
    header = {"kind": kind, "role": role, "config": config, "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    for name, t in module.state_dict().items():
        arr = t.detach().cpu().numpy()
        arr = arr.astype(np.int64 if arr.dtype.kind in "iub" else np.float32)
        code = _CODES[arr.dtype]
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_DTYPES[code]).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def read_checkpoint(path):
    """Return (header dict, {name: tensor})."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CorruptStream(f"{path}: not a checkpoint", offset=0)
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CorruptStream(f"{path}: unsupported checkpoint version {version}", offset=4)
    pos = 10
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    tensors = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(shape)
            pos += count * dt.itemsize
            tensors[name] = torch.from_numpy(arr.copy())
    except (struct.error, ValueError, KeyError) as exc:
        raise CorruptStream(f"{path}: truncated or malformed tensor record", offset=pos) from exc
    return header, tensors


def load_into(module, path, expect_kind=None):
    header, tensors = read_checkpoint(path)
    if expect_kind and header["kind"] != expect_kind:
        raise ConfigurationError(f"{path} holds a {header['kind']!r} checkpoint, expected {expect_kind!r}")
    module.load_state_dict(tensors)
    if header["role"] == "frozen-scorer":
        module.requires_grad_(False)
        module.eval()
    return header
