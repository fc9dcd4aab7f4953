"""Checkpoint container.

Layout::

    8 bytes   magic  b"RPRLCKP1"
    4 bytes   header length H (uint32, little-endian)
    H bytes   UTF-8 JSON header
    ...       raw little-endian array payloads, in header order

The header holds ``arrays``: a list of ``{"name", "shape", "dtype"}`` (dtype as
a numpy little-endian string such as ``"<f8"``), an optional ``layout`` list of
``[name, shape]`` parameter segments, and free-form ``meta``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from reprlab.errors import ContractError
from reprlab.tensor.nn import NetworkParams, Segment

MAGIC = b"RPRLCKP1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None,
                layout: list | None = None) -> int:
    """Write ``arrays`` atomically; returns the number of bytes written."""
    entries, payloads = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        payloads.append(le.tobytes())
    header = {"arrays": entries, "meta": meta or {}}
    if layout is not None:
        header["layout"] = layout
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for p in payloads:
            fh.write(p)
    os.replace(tmp, path)
    return path.stat().st_size


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict, list | None]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContractError(f"{path} is not a reprlab checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    pos = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64))
        nbytes = n * dt.itemsize
        arr = np.frombuffer(raw, dtype=dt, count=n, offset=pos).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(dt.newbyteorder("="))
        pos += nbytes
    if pos != len(raw):
        raise ContractError(f"{path}: trailing bytes after payload")
    return arrays, header.get("meta", {}), header.get("layout")


def save_params(path, params: NetworkParams, meta: dict | None = None) -> int:
    arrays = {"__flat__": params.flat}
    for k, v in params.buffers.items():
        arrays[k] = v
    layout = [[s.name, list(s.shape)] for s in params.segments]
    return save_arrays(path, arrays, meta, layout)


def load_params(path) -> tuple[NetworkParams, dict]:
    arrays, meta, layout = load_arrays(path)
    if layout is None or "__flat__" not in arrays:
        raise ContractError(f"{path} does not hold network parameters")
    segs, off = [], 0
    for name, shape in layout:
        seg = Segment(name, tuple(shape), off)
        segs.append(seg)
        off += seg.size
    flat = arrays.pop("__flat__")
    return NetworkParams(segs, flat, arrays), meta
