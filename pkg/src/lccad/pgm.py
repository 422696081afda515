"""Binary PGM (P5) heatmap output.

Heatmaps are written as 8-bit grayscale PGM images with min-max scaling,
and the scaling parameters go into a JSON sidecar so the original value
range can be recovered from the artifacts alone.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

__all__ = [
    "scale_to_gray",
    "write_pgm",
    "write_heatmap",
    "read_pgm",
    "atomic_write_bytes",
]


def atomic_write_bytes(path, payload):
    """Write bytes to path atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def scale_to_gray(values, lo=None, hi=None):
    """Min-max scale a 2-D array to uint8 gray levels.

    Returns (gray, lo, hi). A constant image maps to 0.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("heatmap values must be 2-D")
    if not np.all(np.isfinite(values)):
        raise ValueError("heatmap values must be finite")
    lo = float(values.min()) if lo is None else float(lo)
    hi = float(values.max()) if hi is None else float(hi)
    if hi > lo:
        unit = (values - lo) / (hi - lo)
    else:
        unit = np.zeros_like(values)
    gray = np.clip(np.rint(unit * 255.0), 0, 255).astype(np.uint8)
    return gray, lo, hi


def write_pgm(path, gray):
    """Write a uint8 2-D array as binary PGM (P5, maxval 255)."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    h, w = gray.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + gray.tobytes())


def write_heatmap(path, values, lo=None, hi=None):
    """Write values as a scaled PGM plus a .json scaling sidecar.

    Returns the (lo, hi) range that maps to gray levels 0..255.
    """
    gray, lo, hi = scale_to_gray(values, lo=lo, hi=hi)
    write_pgm(path, gray)
    meta = {
        "format": "P5",
        "maxval": 255,
        "height": int(gray.shape[0]),
        "width": int(gray.shape[1]),
        "lo": lo,
        "hi": hi,
    }
    sidecar = path + ".json"
    payload = (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("ascii")
    atomic_write_bytes(sidecar, payload)
    return lo, hi


def read_pgm(path):
    """Read a binary P5 PGM written by write_pgm. Returns a uint8 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos + 1)
    return pixels.reshape(h, w).copy()
