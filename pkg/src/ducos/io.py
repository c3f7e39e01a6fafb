"""File formats: tagged containers, checkpoints and depth rasters.

A container is ``magic (4 bytes) | header length (uint32 LE) | JSON header |
payload``. The JSON header is indented text so it can be read with ``head``.
Payload arrays are little-endian and laid out in header order.
"""

from __future__ import annotations

import json
import os
import zlib
from pathlib import Path

import numpy as np


class CorruptFileError(ValueError):
    """Bad magic, truncated payload or checksum mismatch."""


class IncompatibleFileError(ValueError):
    """A well-formed file that does not fit what the caller asked for."""


def crc32(payload: bytes) -> int:
    return zlib.crc32(payload) & 0xFFFFFFFF


def _le(dtype: str) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def pack_arrays(arrays: list[np.ndarray], dtype: str) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype=_le(dtype)).tobytes() for a in arrays)


def unpack_arrays(payload: bytes, shapes: list[list[int]], dtype: str) -> list[np.ndarray]:
    dt = _le(dtype)
    need = sum(int(np.prod(s)) for s in shapes) * dt.itemsize
    if len(payload) != need:
        raise CorruptFileError(f"payload is {len(payload)} bytes, header describes {need}")
    out, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=dt, count=n, offset=offset).reshape(shape)
        out.append(arr.astype(np.dtype(dtype), copy=True))
        offset += n * dt.itemsize
    return out


def write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    """Write atomically (temp file + rename); the header gains a payload CRC32."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    header = dict(header, checksum=crc32(payload))
    text = json.dumps(header, indent=1, sort_keys=True).encode()
    blob = magic + len(text).to_bytes(4, "little") + text + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def read_container(path, magic: bytes) -> tuple[dict, bytes]:
    blob = Path(path).read_bytes()
    if blob[:4] != magic:
        raise CorruptFileError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    if len(blob) < 8:
        raise CorruptFileError(f"{path}: truncated header")
    n = int.from_bytes(blob[4:8], "little")
    try:
        header = json.loads(blob[8 : 8 + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header ({exc})") from None
    payload = blob[8 + n :]
    if crc32(payload) != header.get("checksum"):
        raise CorruptFileError(f"{path}: checksum mismatch")
    return header, payload


# ----------------------------------------------------------------- checkpoints
CKPT_MAGIC = b"DCK1"


def save_checkpoint(path, named: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> None:
    names = list(named)
    dtypes = {str(np.asarray(a).dtype) for a in named.values()}
    if len(dtypes) > 1:
        raise ValueError(f"mixed parameter dtypes {dtypes}")
    dtype = dtypes.pop() if dtypes else "float32"
    header = {
        "format": "ducos-checkpoint",
        "version": 1,
        "dtype": dtype,
        "params": [{"name": k, "shape": list(named[k].shape)} for k in names],
        "config": config,
        "extra": extra or {},
    }
    write_container(path, CKPT_MAGIC, header, pack_arrays([named[k] for k in names], dtype))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    header, payload = read_container(path, CKPT_MAGIC)
    specs = header["params"]
    arrays = unpack_arrays(payload, [s["shape"] for s in specs], header["dtype"])
    return {s["name"]: a for s, a in zip(specs, arrays)}, header["config"], header.get("extra", {})


# ---------------------------------------------------------------- raw float32
def write_raw(path, array: np.ndarray) -> None:
    """Little-endian float32 body plus a ``.json`` sidecar ``{shape, dtype}``."""
    path = Path(path)
    arr = np.asarray(array, dtype="<f4")
    path.write_bytes(arr.tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"shape": list(arr.shape), "dtype": "float32"}))


def read_raw(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    if meta.get("dtype") != "float32":
        raise IncompatibleFileError(f"{path}: unsupported dtype {meta.get('dtype')}")
    body = path.read_bytes()
    shape = tuple(meta["shape"])
    if len(body) != 4 * int(np.prod(shape)):
        raise CorruptFileError(f"{path}: {len(body)} bytes does not match shape {shape}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


# ------------------------------------------------------------------------ PGM
def _single_channel(a: np.ndarray) -> np.ndarray:
    d = np.asarray(a, dtype=np.float64)
    while d.ndim > 2 and d.shape[0] == 1:
        d = d[0]
    return d


def write_pgm16(path, depth: np.ndarray, scale_to_meters: float = 0.001) -> None:
    """16-bit binary PGM; stored value = round(depth / scale_to_meters)."""
    d = _single_channel(depth)
    if d.ndim != 2:
        raise ValueError(f"expected a single-channel map, got shape {np.shape(depth)}")
    q = np.clip(np.round(d / scale_to_meters), 0, 65535).astype(">u2")
    h, w = q.shape
    head = f"P5\n# scale_to_meters={scale_to_meters!r}\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(head + q.tobytes())


def _pgm_tokens(blob: bytes):
    """Yield (header tokens, comments, body offset) for a binary PGM."""
    tokens, comments, i = [], [], 0
    while len(tokens) < 4:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":
            j = blob.index(b"\n", i)
            comments.append(blob[i + 1 : j].decode().strip())
            i = j + 1
            continue
        j = i
        while j < len(blob) and not blob[j : j + 1].isspace():
            j += 1
        tokens.append(blob[i:j].decode())
        i = j
    return tokens, comments, i + 1


def read_pgm(path) -> tuple[np.ndarray, float | None]:
    """Return (values in meters if a scale comment exists else raw counts, scale)."""
    blob = Path(path).read_bytes()
    tokens, comments, offset = _pgm_tokens(blob)
    if tokens[0] != "P5":
        raise CorruptFileError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dt = ">u2" if maxval > 255 else "u1"
    body = blob[offset:]
    if len(body) != w * h * np.dtype(dt).itemsize:
        raise CorruptFileError(f"{path}: truncated raster")
    q = np.frombuffer(body, dtype=dt).reshape(h, w)
    scale = None
    for c in comments:
        if c.startswith("scale_to_meters="):
            scale = float(c.split("=", 1)[1])
    if scale is None:
        return q.astype(np.float64), None
    return q.astype(np.float64) * scale, scale


def write_pgm8(path, image: np.ndarray) -> None:
    """8-bit PGM of a map min-max scaled to 0..255 (error maps)."""
    d = _single_channel(image)
    if d.ndim != 2:
        raise ValueError(f"expected a single-channel map, got shape {np.shape(image)}")
    lo, hi = d.min(), d.max()
    q = np.round(255 * (d - lo) / (hi - lo)) if hi > lo else np.zeros_like(d)
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + q.astype(np.uint8).tobytes())
