"""On-disk formats: JSON manifests, raw float64 blobs, CSV tables.

Every artifact the toolkit writes is either a JSON manifest (sorted keys,
2-space indent, trailing newline), a raw little-endian float64 blob whose
layout the manifest describes, or a CSV table with floats printed through
%.17g.  All writes go through a temp file in the destination directory and an
os.replace, so readers never observe a half-written file.  Identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "fmt_float",
    "write_json_atomic",
    "read_json",
    "write_blob_atomic",
    "read_blob",
    "pack_arrays",
    "unpack_arrays",
    "write_csv_atomic",
]


def fmt_float(x: float) -> str:
    """Shortest decimal that round-trips a float64 exactly."""
    return "%.17g" % float(x)


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: str, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_blob_atomic(path: str, data: bytes) -> None:
    _atomic_write(path, data)


def read_blob(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def pack_arrays(arrays: Sequence[np.ndarray]) -> tuple[bytes, list[dict]]:
    """Concatenate arrays into one f64-le blob.

    Returns (blob, layout) where layout[i] records the shape and byte offset
    of arrays[i]; the manifest stores the layout so unpack_arrays can slice
    the blob back bit-exactly.
    """
    chunks = []
    layout = []
    offset = 0
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
        raw = a.astype("<f8", copy=False).tobytes(order="C")
        layout.append({"shape": list(a.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), layout


def unpack_arrays(blob: bytes, layout: Iterable[dict]) -> list[np.ndarray]:
    out = []
    for entry in layout:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        out.append(a.reshape(shape).astype(np.float64, copy=True))
    return out


def write_csv_atomic(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV table; float cells go through fmt_float, the rest through str."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(fmt_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
