"""Self-describing binary container for named arrays.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"CHFUSE\\x00\\x01"
    8       4     format version (uint32)
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    ...   array payload, each array C-contiguous little-endian,
                  starting at the byte offset recorded in the header
                  (relative to the start of the payload)

The JSON header is ``{"kind": str, "meta": {...}, "arrays": [{"name",
"dtype", "shape", "offset", "nbytes"}, ...]}``. ``dtype`` is a numpy dtype
string with explicit byte order, e.g. ``"<c16"``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"CHFUSE\x00\x01"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, arrays: Mapping[str, np.ndarray],
                    meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": dict(meta or {}), "arrays": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_container(path, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns (arrays, meta). ``kind`` is checked when given."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a chanfusion container")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
    payload = memoryview(data)[20 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header["meta"]
