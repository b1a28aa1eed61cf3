"""TPSEG1 flat tensor archive.

Layout: the 6-byte magic ``TPSEG1`` followed by records until end of file.
Each record is, little-endian throughout::

    u32 name length | name (utf-8) | u32 ndim | u32 dims[ndim] | u8 dtype code | raw data
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TPSEG1"
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def dumps(tensors):
    """Serialize a name -> array mapping (insertion order kept)."""
    parts = [MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", DTYPE_CODES[dt]))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def loads(blob):
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected TPSEG1", offset=0)
    out = {}
    pos = len(MAGIC)
    end = len(blob)

    def take(n, what, name=None):
        nonlocal pos
        if pos + n > end:
            raise FormatError(f"truncated {what}", offset=pos, record=name)
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < end:
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("record name is not utf-8", offset=pos - nlen) from exc
        (ndim,) = struct.unpack("<I", take(4, "ndim", name))
        if ndim > 32:
            raise FormatError(f"implausible ndim {ndim}", offset=pos - 4, record=name)
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims", name))
        (code,) = struct.unpack("<B", take(1, "dtype code", name))
        if code not in CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code}", offset=pos - 1, record=name)
        dt = CODE_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        data = take(count * dt.itemsize, "data", name)
        out[name] = np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    return out


def save(path, tensors):
    Path(path).write_bytes(dumps(tensors))


def load(path):
    return loads(Path(path).read_bytes())
