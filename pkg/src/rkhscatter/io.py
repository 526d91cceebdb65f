"""File formats: binary arrays, graymap images, metric records and configs.

Array files are laid out as::

    b"SCAT1"            magic
    uint8               element tag (0 = float64, 1 = complex128)
    uint32              rank
    uint64 * rank       dims
    payload             row-major, little endian

All integers are little endian.
"""

import configparser
import math
import os
import struct

import numpy as np

from .exceptions import ConfigError, InvalidArgumentError

MAGIC = b"SCAT1"
REAL64 = 0
COMPLEX128 = 1
_DTYPES = {REAL64: np.dtype("<f8"), COMPLEX128: np.dtype("<c16")}


def encode_array(arr):
    """Serialise a real or complex array to bytes."""
    arr = np.asarray(arr)
    if arr.dtype.kind == "c":
        tag = COMPLEX128
    elif arr.dtype.kind in "fiub":
        tag = REAL64
    else:
        raise InvalidArgumentError(f"cannot store dtype {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
    head = MAGIC + struct.pack("<BI", tag, data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + data.tobytes(order="C")


def decode_array(buf):
    """Inverse of :func:`encode_array`."""
    buf = bytes(buf)
    if buf[:5] != MAGIC:
        raise InvalidArgumentError("not an array file (bad magic)")
    if len(buf) < 10:
        raise InvalidArgumentError("truncated array header")
    tag, rank = struct.unpack_from("<BI", buf, 5)
    if tag not in _DTYPES:
        raise InvalidArgumentError(f"unknown element tag {tag}")
    off = 10 + 8 * rank
    if len(buf) < off:
        raise InvalidArgumentError("truncated array header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 10)
    dtype = _DTYPES[tag]
    size = math.prod(shape) * dtype.itemsize
    if len(buf) - off != size:
        raise InvalidArgumentError(f"payload is {len(buf) - off} bytes, expected {size}")
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(shape).copy()


def write_array(path, arr):
    with open(path, "wb") as fh:
        fh.write(encode_array(arr))


def read_array(path):
    with open(path, "rb") as fh:
        return decode_array(fh.read())


def graymap_pixels(values, vmin=None, vmax=None):
    """Map values linearly to 0..255, rounding half up.

    Returns ``(pixels, vmin, vmax, constant)``; a constant field (or an
    empty range) maps to 128.
    """
    values = np.asarray(values, dtype=float)
    vmin = float(np.min(values)) if vmin is None else float(vmin)
    vmax = float(np.max(values)) if vmax is None else float(vmax)
    if not vmax > vmin:
        return np.full(values.shape, 128, dtype=np.uint8), vmin, vmax, True
    scaled = np.floor((values - vmin) / (vmax - vmin) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8), vmin, vmax, False


def encode_pgm(values, vmin=None, vmax=None):
    """Binary 8-bit PGM (P5) of a 2-D array; row 0 is the first image row."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise InvalidArgumentError("graymap needs a 2-D array")
    pix, lo, hi, constant = graymap_pixels(values, vmin, vmax)
    comment = f"# min={lo!r} max={hi!r}"
    if constant:
        comment += " constant"
    rows, cols = pix.shape
    head = f"P5\n{comment}\n{cols} {rows}\n255\n".encode("ascii")
    return head + pix.tobytes()


def write_pgm(path, values, vmin=None, vmax=None):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(values, vmin, vmax))


def read_pgm(path):
    """Return ``(pixels, comments)`` from a P5 file written by :func:`write_pgm`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    lines, pos, comments = [], 0, []
    while len(lines) < 3:
        end = buf.index(b"\n", pos)
        line = buf[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line)
        else:
            lines.append(line)
    if lines[0] != "P5":
        raise InvalidArgumentError("not a binary graymap")
    cols, rows = (int(v) for v in lines[1].split())
    pix = np.frombuffer(buf, dtype=np.uint8, offset=pos, count=rows * cols)
    return pix.reshape(rows, cols), comments


def format_metrics(record):
    """``key=value`` lines in insertion order; floats use ``repr`` for round-tripping."""
    out = []
    for key, val in record.items():
        if isinstance(val, (float, np.floating)):
            val = repr(float(val))
        out.append(f"{key}={val}")
    return "\n".join(out) + "\n"


def write_metrics(path, record):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_metrics(record))


def read_metrics(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            out[key] = val
    return out


def read_config_text(text, schema):
    """Parse ``[section]`` / ``key=value`` text against ``schema``.

    ``schema`` maps section names to sets of allowed keys (``None`` allows
    any key). Returns a dict of dicts of raw strings. Unknown sections or
    keys raise :class:`ConfigError`.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}]")
        allowed = schema[section]
        for key, val in parser.items(section):
            if allowed is not None and key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out.setdefault(section, {})[key] = val
    return out


def read_config(path, schema):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return read_config_text(fh.read(), schema)
