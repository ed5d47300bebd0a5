"""
Binary tensor container.

Layout::

    b"KGPLTNS1" | uint64 little-endian header length | UTF-8 JSON header | payloads

The header holds free-form ``meta`` plus one entry per tensor
(name, dtype, shape, offset, nbytes, sha256). Payloads are row-major
little-endian arrays stored back to back. Writes go to a temporary file in
the destination directory and are moved into place with ``os.replace``.
"""

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from app.core.errors import ChecksumMismatch, IOFailure

MAGIC = b"KGPLTNS1"
_LENGTH = struct.Struct("<Q")


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def write_tensors(path: Path, tensors: Mapping[str, np.ndarray], meta: Dict[str, Any] = None) -> Path:
    path = Path(path)
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        array = _little_endian(np.asarray(value))
        raw = array.tobytes(order="C")
        entries.append(
            {
                "name": name,
                "dtype": array.dtype.str,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(raw),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        payloads.append(raw)
        offset += len(raw)

    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as handle:
            handle.write(MAGIC)
            handle.write(_LENGTH.pack(len(header)))
            handle.write(header)
            for raw in payloads:
                handle.write(raw)
        os.replace(tmp_name, path)
    except OSError as e:
        raise IOFailure(f"could not write tensor container {path}: {e}") from e
    return path


def read_tensors(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IOFailure(f"could not read tensor container {path}: {e}") from e

    prefix = len(MAGIC) + _LENGTH.size
    if len(blob) < prefix or blob[: len(MAGIC)] != MAGIC:
        raise IOFailure(f"{path} is not a tensor container")
    (header_length,) = _LENGTH.unpack_from(blob, len(MAGIC))
    try:
        header = json.loads(blob[prefix : prefix + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IOFailure(f"corrupt header in {path}") from e

    body = memoryview(blob)[prefix + header_length :]
    tensors = {}
    for entry in header["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(body):
            raise IOFailure(f"{path} is truncated (tensor {entry['name']!r})")
        raw = bytes(body[start:stop])
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise ChecksumMismatch(f"checksum mismatch for tensor {entry['name']!r} in {path}")
        array = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = array.copy()
    return tensors, header["meta"]
