"""Portable file formats: float/int raster maps, PGM images, CSV, JSON.

Formats are chosen for bit-exact round trips and diff-ability:

  FMAP: text header "FMAP <width> <height>\\n" then little-endian float32,
        row-major.  IMAP is the same with int32 payload.
  PGM:  binary (P5) 8-bit grayscale.
  CSV:  floats serialized with repr() (shortest exact round trip).
  JSON: sorted keys, repr floats.

Depth maps are float64 in memory; FMAP quantizes to float32 at write time
only.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class FileFormatError(Exception):
    pass


def write_fmap(path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("FMAP stores a single 2-d map")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"FMAP {w} {h}\n".encode("ascii"))
        f.write(arr.astype("<f4").tobytes())


def read_fmap(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 3 or header[0] != "FMAP":
            raise FileFormatError(f"{path}: not an FMAP file")
        w, h = int(header[1]), int(header[2])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != w * h:
        raise FileFormatError(f"{path}: payload size mismatch")
    return data.reshape(h, w).astype(np.float64)


def write_imap(path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype="<i4")
    if arr.ndim != 2:
        raise ValueError("IMAP stores a single 2-d map")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"IMAP {w} {h}\n".encode("ascii"))
        f.write(arr.tobytes())


def read_imap(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 3 or header[0] != "IMAP":
            raise FileFormatError(f"{path}: not an IMAP file")
        w, h = int(header[1]), int(header[2])
        data = np.frombuffer(f.read(), dtype="<i4")
    if data.size != w * h:
        raise FileFormatError(f"{path}: payload size mismatch")
    return data.reshape(h, w).astype(np.int32)


def write_pgm(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError("PGM stores a single 2-d image")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise FileFormatError(f"{path}: not a binary PGM")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        if maxval != 255:
            raise FileFormatError(f"{path}: expected 8-bit PGM")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    return data.reshape(h, w)


def normalize_to_gray(values: np.ndarray):
    """Linear min-max normalization to uint8; a constant map becomes
    uniform mid-gray (128).  Returns (image, vmin, vmax)."""
    arr = np.asarray(values, dtype=np.float64)
    vmin = float(arr.min())
    vmax = float(arr.max())
    if vmax == vmin:
        return np.full(arr.shape, 128, dtype=np.uint8), vmin, vmax
    scaled = (arr - vmin) / (vmax - vmin) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8), vmin, vmax


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_csv(path):
    lines = Path(path).read_text(encoding="ascii").strip().split("\n")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="ascii")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="ascii"))
