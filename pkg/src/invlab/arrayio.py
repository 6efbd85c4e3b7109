"""Raw float64 array blobs: a one-line ASCII shape header plus
little-endian fp64 data.  Inspectable with xxd, loadable anywhere.
"""

from __future__ import annotations

import numpy as np

__all__ = ["write_array", "read_array"]

_MAGIC = b"f64le"


def write_array(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    header = b" ".join([_MAGIC, str(arr.ndim).encode()]
                       + [str(d).encode() for d in arr.shape]) + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8").tobytes())  # tobytes emits C order


def read_array(path):
    with open(path, "rb") as fh:
        header = fh.readline()
        parts = header.split()
        if not parts or parts[0] != _MAGIC:
            raise ValueError(f"{path}: not a {_MAGIC.decode()} blob")
        ndim = int(parts[1])
        shape = tuple(int(p) for p in parts[2:2 + ndim])
        if len(shape) != ndim:
            raise ValueError(f"{path}: malformed shape header")
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read()
        if len(payload) < 8 * count:
            raise ValueError(f"{path}: truncated blob")
        data = np.frombuffer(payload, dtype="<f8", count=count)
        return data.reshape(shape).astype(np.float64)
