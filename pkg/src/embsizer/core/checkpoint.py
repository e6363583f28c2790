"""Binary container for parameter checkpoints and cached arrays.

Layout: magic ``ADSS``, little-endian uint32 format version, then one record
per array. Version 1 records are ``name_len (u32) | name (utf-8) | ndim (u32) |
dims (u32 each) | float32 little-endian payload``. Version 2 inserts a one-byte
dtype code after the dims so integer and float64 arrays round-trip exactly
(0 = float32, 1 = float64, 2 = int64, 3 = uint8).

Records are written sorted by name, so writing the same arrays always produces
identical bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError

MAGIC = b"ADSS"

_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_KIND_TO_CODE = {"<f4": 0, "<f8": 1, "<i8": 2, "|u1": 3}


def _dtype_code(arr: np.ndarray) -> int:
    key = arr.dtype.newbyteorder("<").str if arr.dtype.str != "|u1" else "|u1"
    if key not in _KIND_TO_CODE:
        raise ConfigError(f"unsupported checkpoint dtype {arr.dtype}")
    return _KIND_TO_CODE[key]


def write_container(path: str | Path, records: dict[str, np.ndarray], version: int = 1) -> None:
    if version not in (1, 2):
        raise ConfigError(f"unsupported container version {version}")
    chunks = [MAGIC, struct.pack("<I", version)]
    for name in sorted(records):
        arr = np.asarray(records[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<I", d))
        if version == 1:
            if arr.dtype.kind != "f":
                raise ConfigError(
                    f"record {name!r}: version-1 containers hold float arrays only"
                )
            payload = arr.astype("<f4")
        else:
            code = _dtype_code(arr)
            chunks.append(struct.pack("<B", code))
            payload = arr.astype(_CODE_TO_DTYPE[code])
        chunks.append(payload.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_container(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint container (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version not in (1, 2):
        raise DataError(f"{path}: unsupported container version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    n = len(buf)
    while pos < n:
        if pos + 4 > n:
            raise DataError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos) if ndim else ()
        pos += 4 * ndim
        if version == 1:
            dt = np.dtype("<f4")
        else:
            (code,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            if code not in _CODE_TO_DTYPE:
                raise DataError(f"{path}: record {name!r} has unknown dtype code {code}")
            dt = np.dtype(_CODE_TO_DTYPE[code])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dt.itemsize
        if pos + nbytes > n:
            raise DataError(f"{path}: truncated payload for record {name!r}")
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(shape)
        out[name] = arr.copy()
        pos += nbytes
    return version, out
