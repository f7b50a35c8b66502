"""Stable softmax helpers and a small binary array container used for
checkpoints and index files."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

__all__ = ["log_softmax", "logsumexp", "softmax", "write_arrays", "read_arrays",
           "fingerprint_arrays", "check_finite"]

_MAGIC = b"RAVQA-ARR1\n"


def check_finite(name: str, *values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite value in {name}")


def fingerprint_arrays(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def write_arrays(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a JSON header followed by row-major little-endian float64 blobs.

    The layout has no timestamps, so identical inputs give identical bytes.
    """
    specs = [[name, list(arrays[name].shape)] for name in arrays]
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in arrays:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def read_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a ravqa array file")
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return header["meta"], arrays
