"""Matrix files (CSV and raw binary), PGM images and JSON summaries."""

from __future__ import annotations

import json
import math
import re
import struct

import numpy as np

from .errors import ConfigurationError
from .field import ReducedMap

MAGIC = b"BIPHOTON"
VERSION = 1
DTYPE_TAG = b"f8le"


def write_csv(path: str, rmap: ReducedMap) -> None:
    """Two header lines hold the x and y axes; then one row per x sample."""
    c = rmap.coords
    axis = ",".join(f"{v:.17g}" for v in c)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# x[{rmap.domain}],{axis}\n")
        fh.write(f"# y[{rmap.domain}],{axis}\n")
        for row in rmap.values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(x, y, values)`` from :func:`write_csv` output."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or not (lines[0].startswith("# x") and lines[1].startswith("# y")):
        raise ConfigurationError(f"{path}: missing the two axis header lines")
    x = np.array([float(v) for v in lines[0].split(",")[1:]])
    y = np.array([float(v) for v in lines[1].split(",")[1:]])
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln], dtype=float)
    return x, y, values.reshape(len(x), len(y))


def write_binary(path: str, array: np.ndarray) -> None:
    """Magic, uint32 version, dtype tag, uint32 rank, uint64 dims, row-major float64 LE data."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(DTYPE_TAG)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_binary(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(MAGIC)
    if data[:head] != MAGIC:
        raise ConfigurationError(f"{path}: not a biphoton matrix file")
    (version,) = struct.unpack_from("<I", data, head)
    if version != VERSION:
        raise ConfigurationError(f"{path}: unsupported version {version}")
    tag = data[head + 4: head + 8]
    if tag != DTYPE_TAG:
        raise ConfigurationError(f"{path}: unsupported dtype tag {tag!r}")
    (rank,) = struct.unpack_from("<I", data, head + 8)
    dims = struct.unpack_from(f"<{rank}Q", data, head + 12)
    off = head + 12 + 8 * rank
    count = math.prod(dims)
    if len(data) - off != 8 * count:
        raise ConfigurationError(f"{path}: payload has {len(data) - off} bytes, expected {8 * count}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims).copy()


def write_pgm(path: str, rmap: ReducedMap) -> None:
    """8-bit binary PGM of the unit-peak map; image rows run along y, top row is max y."""
    v = rmap.values
    peak = v.max()
    img = np.zeros_like(v) if not peak > 0 else v / peak
    pix = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8).T[::-1]
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ConfigurationError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ConfigurationError(f"{path}: only 8-bit PGM is supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
