"""Versioned tensor container used for checkpoints.

Layout::

    b"ASGANCKP" | uint32 version | uint64 header length | header (JSON, utf-8) | payload

The header lists every tensor as ``{name, dtype, shape, offset, nbytes}``
with offsets into the payload. Payloads are raw little-endian bytes. JSON is
written with sorted keys and entries keep insertion order, so writing the
same content twice yields identical files.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ASGANCKP"
VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8", "u1": "u1", "i8": "<i8"}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _code(arr: np.ndarray) -> str:
    code = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if code not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return code


def write_container(path, tensors: dict[str, np.ndarray], meta: dict,
                    shared_names: list[str] = ()) -> None:
    entries, arrays, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code(arr)
        # no copy when the tensor is already contiguous little-endian
        arr = np.require(arr, dtype=_DTYPES[code], requirements=["C"])
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes
    header = json.dumps(
        {"format": "asgan-checkpoint", "version": VERSION, "meta": meta,
         "shared_names": list(shared_names), "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for arr in arrays:
            fh.write(memoryview(arr.reshape(-1)).cast("B"))
    os.replace(tmp, path)


def read_container(path) -> tuple[dict[str, np.ndarray], dict, list[str]]:
    """Return ``(tensors, meta, shared_names)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path} is not an ASGAN checkpoint")
        fixed = fh.read(struct.calcsize("<IQ"))
        if len(fixed) != struct.calcsize("<IQ"):
            raise CheckpointError(f"{path} is truncated")
        version, hlen = struct.unpack("<IQ", fixed)
        if version != VERSION:
            raise CheckpointVersionError(
                f"{path} has checkpoint version {version}; this build reads version {VERSION}"
            )
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
        if header.get("version") != VERSION:
            raise CheckpointVersionError(f"{path}: header version {header.get('version')}")
        tensors = {}
        for e in sorted(header["tensors"], key=lambda e: e["offset"]):
            arr = np.empty(e["shape"], dtype=_DTYPES[e["dtype"]])
            if arr.nbytes != e["nbytes"]:
                raise CheckpointError(f"{path}: size mismatch for {e['name']}")
            if fh.readinto(memoryview(arr.reshape(-1)).cast("B")) != e["nbytes"]:
                raise CheckpointError(f"{path} is truncated at {e['name']}")
            tensors[e["name"]] = arr
    return tensors, header["meta"], header["shared_names"]
