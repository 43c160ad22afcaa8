"""Binary parameter archives.

Layout: ``b"EGOCKPT1"``, a little-endian uint32 header length, a UTF-8 JSON
header, then every tensor as little-endian float32 in header order. The
header records the section tag (``heatmap2d`` / ``pose3d``), model geometry,
seed and each tensor's name, shape and byte offset. Writes are atomic.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, DecodeError

MAGIC = b"EGOCKPT1"


def save_checkpoint(path, section, state_dict, meta=None):
    path = Path(path)
    tensors = []
    offset = 0
    blobs = []
    for name, tensor in state_dict.items():
        arr = np.array(tensor.detach().cpu().numpy(), dtype="<f4", order="C")  # keeps 0-d shapes
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"section": section, "meta": meta or {}, "tensors": tensors, "payload_bytes": offset}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def read_header(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DecodeError(f"{path} is not a checkpoint archive")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8")), len(MAGIC) + 4 + n


def load_checkpoint(path, expect_section=None):
    """Returns ``(header, state_dict)`` with float32 tensors."""
    header, start = read_header(path)
    if expect_section is not None and header["section"] != expect_section:
        raise ConfigurationError(f"{path} holds section {header['section']!r}, expected {expect_section!r}")
    raw = Path(path).read_bytes()[start:]
    if len(raw) != header["payload_bytes"]:
        raise DecodeError(f"{path} payload is truncated")
    state = OrderedDict()
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=t["offset"]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
    return header, state


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
