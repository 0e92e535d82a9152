"""ACKP checkpoint files.

Layout (little-endian)::

    b"ACKP" | u32 version | u32 num_params
    num_params x ( u32 name_len | name utf-8 | u32 rows | u32 cols | f32[rows*cols] )
    u32 config_len | config JSON utf-8

1-D parameters are stored as (n, 1). Parameters are written in sorted name
order so that equal models give equal bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

ACKP_MAGIC = b"ACKP"
ACKP_VERSION = 1


def _as_2d(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"only 1-D and 2-D parameters can be stored, got shape {arr.shape}")
    return arr


def dumps_checkpoint(params: dict, config: dict) -> bytes:
    out = [ACKP_MAGIC, struct.pack("<II", ACKP_VERSION, len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(_as_2d(params[name]), dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<II", *data.shape))
        out.append(data.tobytes(order="C"))
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    return b"".join(out)


def loads_checkpoint(raw: bytes, shapes: dict = None):
    """Parse ACKP bytes into ``(params, config)``.

    Column vectors come back 1-D unless ``shapes`` says otherwise.
    """
    if raw[:4] != ACKP_MAGIC:
        raise ValueError(f"not an ACKP checkpoint (magic {raw[:4]!r})")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != ACKP_VERSION:
        raise ValueError(f"unsupported ACKP version {version}")
    pos = 12
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            rows, cols = struct.unpack_from("<II", raw, pos)
            pos += 8
            nbytes = 4 * rows * cols
            if pos + nbytes > len(raw):
                raise ValueError("truncated parameter data")
            data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols)
            pos += nbytes
            arr = data.astype(np.float64)
            if shapes is not None and name in shapes:
                arr = arr.reshape(shapes[name])
            elif cols == 1:
                arr = arr.reshape(rows)
            params[name] = arr
        (cfg_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        config = json.loads(raw[pos:pos + cfg_len].decode("utf-8"))
    except struct.error as exc:
        raise ValueError(f"truncated checkpoint: {exc}") from None
    return params, config


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, params: dict, config: dict) -> None:
    atomic_write_bytes(path, dumps_checkpoint(params, config))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())
