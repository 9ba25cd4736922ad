"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"QCKP" | u32 version | u32 len | JSON spec blob
    repeated: u32 name_len | name | u8 dtype | u32 ndim | u32 dims[ndim] | values

dtype 0 is float64, 1 is float32. Records run to end of file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import ArchitectureSpec, Model

MAGIC = b"QCKP"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {"f64": 0, "f32": 1}


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _arrays(model: Model) -> dict[str, np.ndarray]:
    out = {name: p.value for name, p in model.parameters().items()}
    out.update(model.buffers())
    return out


def checkpoint_bytes(model: Model, dtype: str = "f64") -> bytes:
    code = _CODES[dtype]
    blob = json.dumps(
        {"spec": model.spec.to_dict(), "rng_seed": int(model.rng_seed)},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, arr in _arrays(model).items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path, dtype: str = "f64") -> Path:
    """Write ``model`` to ``path``; ``dtype="f32"`` halves the file at the cost of exactness."""
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model, dtype))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} at byte {self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def load_checkpoint(path) -> Model:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointVersionError(f"bad magic {magic!r}; not a version-{VERSION} checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<I", "spec length")
    meta = json.loads(r.take(blob_len, "spec blob").decode("utf-8"))
    model = Model(ArchitectureSpec.from_dict(meta["spec"]), rng_seed=meta["rng_seed"])
    targets = _arrays(model)
    seen = set()
    while not r.done:
        (name_len,) = r.unpack("<I", "record name length")
        name = r.take(name_len, "record name").decode("utf-8")
        code, ndim = r.unpack("<BI", f"{name} header")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I", f"{name} dims")
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(r.take(count * dt.itemsize, f"{name} values"), dtype=dt)
        if name not in targets:
            raise CheckpointShapeError(f"record {name!r} does not exist in the architecture")
        if tuple(shape) != targets[name].shape:
            raise CheckpointShapeError(
                f"{name}: stored shape {tuple(shape)} != architecture shape {targets[name].shape}"
            )
        targets[name][...] = values.reshape(shape)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointTruncatedError(f"checkpoint is missing records: {sorted(missing)}")
    return model
