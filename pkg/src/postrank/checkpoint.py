"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"MFTRR1"
    u32 n, then n bytes of UTF-8 JSON metadata (model config, ablation mask, seed)
    u32 record count
    per record:
        u16 k, then k bytes of UTF-8 parameter path
        u8 ndim, then ndim x u32 extents
        prod(extents) x f64 payload, row-major

Loading rebuilds the architecture from the metadata and rejects any record
whose path or shape does not match it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import numerics as nx
from .model import AblationMask, ModelParams, config_from_json, init_params

MAGIC = b"MFTRR1"


class CheckpointError(ValueError):
    pass


def dumps(params: ModelParams) -> bytes:
    meta = json.dumps(params.meta(), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(params.tensors))]
    for path, t in params.items():
        key = path.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(params))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> ModelParams:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n_meta,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n_meta).decode("utf-8"))
        config = config_from_json(meta["model"])
        mask = AblationMask(**meta["mask"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"bad checkpoint metadata: {e}") from None
    template = init_params(config, meta.get("seed") or 0, mask)
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (k,) = r.unpack("<H")
        path = r.take(k).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if path not in template.tensors:
            raise CheckpointError(f"unexpected parameter {path!r}")
        want = template[path].shape
        if tuple(shape) != want:
            raise CheckpointError(f"{path}: stored shape {tuple(shape)} but config expects {want}")
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[path] = nx.parameter(data)
    missing = set(template.tensors) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last record")
    ordered = {k: tensors[k] for k in template.tensors}
    return ModelParams(config, ordered, mask, meta.get("seed"))


def load_checkpoint(path) -> ModelParams:
    return loads(Path(path).read_bytes())
