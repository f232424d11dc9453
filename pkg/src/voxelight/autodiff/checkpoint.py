"""Single-file checkpoint container.

Layout: a little-endian u32 header length, a UTF-8 JSON header, then the
raw array blocks back to back in header order.  Arrays are stored
little-endian in their native float width; the header carries name,
shape and dtype per block plus a free-form ``meta`` object (iteration,
config, RNG state, ...).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blocks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        blocks.append(arr.astype(_DTYPES[arr.dtype.name], copy=False).tobytes())
    header = json.dumps({"version": 1, "arrays": entries, "meta": meta or {}}).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blocks:
            f.write(b)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise CheckpointError("checkpoint truncated before header length")
    (hlen,) = struct.unpack_from("<I", raw, 0)
    if 4 + hlen > len(raw):
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint header is not valid JSON: {e}") from e
    if not isinstance(header, dict) or "arrays" not in header:
        raise CheckpointError("checkpoint header missing array table")
    arrays: dict[str, np.ndarray] = {}
    offset = 4 + hlen
    for entry in header["arrays"]:
        name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"checkpoint truncated inside array {name!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[dtype], count=count, offset=offset).reshape(shape)
        arrays[name] = arr.astype(dtype, copy=True)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after the last array")
    return arrays, header.get("meta", {})
