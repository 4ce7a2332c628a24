"""Binary grid and checkpoint files, plus run manifests.

Grid file::

    b"VVGR" | version u16 | rank u16 | dims u32 * rank | float32 payload

Checkpoint file::

    b"VVCK" | version u16 | count u32 |
        (name_len u16 | utf-8 name | rank u16 | dims u32 * rank | float32 payload) * count

All integers and floats are little-endian; payloads are row-major with the
last axis fastest.
"""
from __future__ import annotations

import hashlib
import json
import os
import platform
import struct
from pathlib import Path

import numpy as np

GRID_MAGIC = b"VVGR"
CKPT_MAGIC = b"VVCK"
VERSION = 1
_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _f32(arr) -> np.ndarray:
    a = np.asarray(arr)
    if not np.all(np.isfinite(a)):
        raise FormatError("refusing to serialize non-finite values")
    return np.ascontiguousarray(a, dtype=_F32)


def encode_grid(arr) -> bytes:
    a = _f32(arr)
    head = GRID_MAGIC + struct.pack("<HH", VERSION, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes(order="C")


def decode_grid(buf: bytes) -> np.ndarray:
    try:
        return _decode_grid(buf)
    except struct.error as e:
        raise FormatError(f"truncated grid header: {e}") from None


def _decode_grid(buf: bytes) -> np.ndarray:
    if buf[:4] != GRID_MAGIC:
        raise FormatError("not a grid file (bad magic)")
    version, rank = struct.unpack_from("<HH", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported grid version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    off = 8 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != 4 * count:
        raise FormatError(f"payload holds {len(buf) - off} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype=_F32, count=count, offset=off).reshape(dims).copy()


def write_grid(path, arr) -> None:
    atomic_write(path, encode_grid(arr))


def read_grid(path) -> np.ndarray:
    return decode_grid(Path(path).read_bytes())


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = _f32(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<H", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    try:
        return _decode_checkpoint(buf)
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"corrupt checkpoint: {e}") from None


def _decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"incompatible checkpoint version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<H", buf, off)
        off += 2
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64))
        if off + 4 * n > len(buf):
            raise FormatError(f"truncated payload for tensor {name!r}")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(buf, dtype=_F32, count=n, offset=off).reshape(dims).copy()
        off += 4 * n
    if off != len(buf):
        raise FormatError("trailing bytes after last tensor")
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write(path, encode_checkpoint(tensors))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def manifest_path(artifact) -> Path:
    p = Path(artifact)
    return p.with_name(p.name + ".manifest.json")


def write_manifest(artifact, command: str, config: dict, seed: int | None = None,
                   inputs: dict | None = None) -> Path:
    from . import __version__

    data = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": inputs or {},
        "versions": {"vvnet": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    path = manifest_path(artifact)
    atomic_write(path, (json.dumps(data, indent=2, sort_keys=True, default=str) + "\n").encode())
    return path


def read_manifest(artifact) -> dict:
    path = manifest_path(artifact)
    if not path.exists():
        raise FileNotFoundError(f"missing manifest {path}")
    return json.loads(path.read_text(encoding="utf-8"))
