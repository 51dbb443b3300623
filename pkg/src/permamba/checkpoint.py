"""Bit-exact array checkpoints: a JSON header plus raw float64 payload.

The header is an ordered list of {name, shape, offset} records; offsets are
byte positions into the payload that follows the header. Writing the same
arrays always produces the same bytes, which the pipeline's determinism
guarantee relies on.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["save_arrays", "load_arrays"]

_MAGIC = b"PMCKPT1\n"
_LEN = struct.Struct("<I")
_DTYPE = "<f8"
_ITEM = 8


def save_arrays(path: str | Path, items: list[tuple[str, np.ndarray]]) -> None:
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise DataError("checkpoint tensor names must be unique")
    records = []
    chunks = []
    offset = 0
    for name, arr in items:
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d,
        # and tobytes() already serializes in C order.
        data = np.asarray(arr, dtype=np.float64)
        records.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunk = data.astype(_DTYPE, copy=False).tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    header = json.dumps({"dtype": _DTYPE, "tensors": records},
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_arrays(path: str | Path) -> list[tuple[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise DataError(f"{path} is not a checkpoint file")
    pos = len(_MAGIC)
    if len(raw) < pos + _LEN.size:
        raise DataError(f"{path} is truncated before the header")
    (header_len,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + header_len:
        raise DataError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
        records = header["tensors"]
        dtype = header["dtype"]
    except (ValueError, KeyError, UnicodeDecodeError) as err:
        raise DataError(f"{path} has a malformed header: {err}") from err
    if dtype != _DTYPE:
        raise DataError(f"{path} holds dtype {dtype}, expected {_DTYPE}")
    payload = raw[pos + header_len:]
    items = []
    for rec in records:
        shape = tuple(rec["shape"])
        count = math.prod(shape)
        start = rec["offset"]
        stop = start + count * _ITEM
        if stop > len(payload):
            raise DataError(f"{path} is truncated inside tensor {rec['name']!r}")
        arr = np.frombuffer(payload[start:stop], dtype=_DTYPE).reshape(shape).copy()
        items.append((rec["name"], arr))
    return items
