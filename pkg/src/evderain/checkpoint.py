"""Parameter checkpoint files.

Byte layout (all integers little-endian):

    bytes 0..3    magic b"EVC1"
    bytes 4..7    u32 header length H
    bytes 8..8+H  header: UTF-8 JSON with sorted keys,
                  {"meta": {...}, "tensors": {path: {"shape": [...], "offset": n}}}
    8+H..         payload: for each tensor, float64 little-endian values in
                  row-major order at the stated offset (in bytes, relative to
                  the payload start)

Tensor paths are sorted in the header and laid out in sorted order, so a
given (meta, tensors) pair always produces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"EVC1"


def save_checkpoint(path, tensors, meta=None):
    """Write a flat {layer path: float64 array} map plus a JSON-able meta dict."""
    names = sorted(tensors)
    arrays = {name: np.asarray(tensors[name], dtype="<f8") for name in names}
    index = {}
    offset = 0
    for name in names:
        index[name] = {"shape": list(arrays[name].shape), "offset": offset}
        offset += arrays[name].nbytes
    header = json.dumps(
        {"meta": meta or {}, "tensors": index}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in names:
            fh.write(arrays[name].tobytes())  # tobytes emits C order regardless


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise ParseError(f"{path}: truncated header")
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    payload = raw[8 + hlen:]
    tensors = {}
    for name, info in header["tensors"].items():
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        end = start + count * 8
        if end > len(payload):
            raise ParseError(f"{path}: tensor {name!r} extends past end of file")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
    return tensors, header.get("meta", {})
