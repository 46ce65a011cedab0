"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"DITHDCKP"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (sorted keys)
    n_arrays   u32
    per array: name_len u16, name, dtype code u8, ndim u8, dims u64 * ndim, raw data
    crc32      u32 over every preceding byte

Loading validates magic, version, lengths and checksum and raises
``CheckpointError`` on any mismatch.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"DITHDCKP"
VERSION = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("u1"),
    4: np.dtype("<i4"),
    5: np.dtype("?"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    # np.ascontiguousarray would promote 0-d scalars to shape (1,)
    arr = np.asarray(value)
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    dt = np.dtype(arr.dtype.str.replace(">", "<"))
    if dt not in _CODES:
        raise CheckpointError(f"unsupported array dtype {arr.dtype}")
    return arr.astype(dt, copy=False)


def dumps(meta: dict, arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta, sort_keys=True).encode()
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        arr = _as_array(value)
        nb = name.encode()
        parts.append(struct.pack("<HBB", len(nb), _CODES[arr.dtype], arr.ndim) + nb)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    try:
        pos = 12
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos : pos + n].decode())
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            nlen, code, ndim = struct.unpack_from("<HBB", body, pos)
            pos += 4
            name = body[pos : pos + nlen].decode()
            pos += nlen
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(body):
                raise CheckpointError(f"array {name!r} truncated")
            arrays[name] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += size
        if pos != len(body):
            raise CheckpointError("trailing bytes after last array")
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return meta, arrays


def save(path, meta: dict, arrays: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(meta, arrays))
    tmp.replace(path)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
