"""File formats shared by the pipeline stages.

Grid files: a one-line UTF-8 JSON header terminated by ``\\n``, followed by
the raw little-endian array bytes in C order. The header always carries
``dtype`` and ``shape`` plus any extra metadata the writer attached (seed,
config hash, ...). Images move as PNG (via Pillow) or plain binary PGM.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

_GRID_DTYPES = {"float32", "float64", "int32", "int8", "uint8"}


class GridFormatError(ValueError):
    """Malformed grid file."""


def write_grid(path, array, meta=None):
    arr = np.ascontiguousarray(array)
    if arr.dtype.name not in _GRID_DTYPES:
        raise GridFormatError(f"unsupported grid dtype {arr.dtype.name}")
    header = {"dtype": arr.dtype.name, "shape": list(arr.shape)}
    if meta:
        for key in meta:
            if key in ("dtype", "shape"):
                raise GridFormatError(f"meta key {key!r} is reserved")
        header.update(meta)
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GridFormatError(f"{path}: bad grid header ({exc})") from exc
        if not isinstance(header, dict) or "dtype" not in header or "shape" not in header:
            raise GridFormatError(f"{path}: grid header missing dtype/shape")
        dtype = header["dtype"]
        if dtype not in _GRID_DTYPES:
            raise GridFormatError(f"{path}: unsupported dtype {dtype!r}")
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.fromfile(fh, dtype=np.dtype(dtype).newbyteorder("<"), count=count)
    if data.size != count:
        raise GridFormatError(f"{path}: truncated grid (got {data.size} of {count} values)")
    meta = {k: v for k, v in header.items() if k not in ("dtype", "shape")}
    return data.reshape(shape).astype(dtype), meta


def write_pgm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise GridFormatError("PGM writer expects a 2-D uint8 array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # magic, dims, maxval separated by whitespace; comments unsupported
    fields = data.split(maxsplit=4)
    if len(fields) < 5 or fields[0] != b"P5":
        raise GridFormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise GridFormatError(f"{path}: only maxval 255 supported")
    raw = fields[4][: w * h]
    if len(raw) != w * h:
        raise GridFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()


def save_image(path, image):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, image)
    else:
        from PIL import Image

        Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)


def load_image(path):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    img = Image.open(path).convert("L")
    return np.asarray(img, dtype=np.uint8).copy()


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def config_hash(obj) -> str:
    """Stable hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
