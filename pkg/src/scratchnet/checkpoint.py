"""Versioned binary checkpoint container.

Layout (all integers little-endian):

  magic "SNCK" | u32 version
  u32 meta count    | per entry: u16 key len, key utf-8, u32 val len, val utf-8
  u32 tensor count  | per entry: u16 name len, name utf-8, u8 dtype code,
                      u8 ndim, ndim x u64 shape, raw little-endian data

Containers round-trip bit-exactly: save -> load -> save yields identical
bytes for identical content and insertion order.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (CheckpointError, CheckpointTruncatedError,
                     CheckpointVersionError, ShapeError)

MAGIC = b"SNCK"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("int64"): 2,
    np.dtype("uint64"): 3,
}
_CODE_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "<u8"}


@dataclass
class Checkpoint:
    tensors: dict
    meta: dict


def save_checkpoint(path, tensors, meta=None):
    """Write named tensors plus string metadata."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta = meta or {}
    chunks.append(struct.pack("<I", len(meta)))
    for key, val in meta.items():
        kb, vb = str(key).encode(), str(val).encode()
        chunks.append(struct.pack("<H", len(kb)) + kb)
        chunks.append(struct.pack("<I", len(vb)) + vb)
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = str(name).encode()
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(_CODE_DTYPES[_DTYPE_CODES[arr.dtype]],
                                 copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"{self.path}: ended at byte {len(self.buf)} while reading "
                f"{n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.unpack("<I")[0]
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, "
                                     f"this build reads {VERSION}")
    meta = {}
    for _ in range(r.unpack("<I")[0]):
        key = r.take(r.unpack("<H")[0]).decode()
        meta[key] = r.take(r.unpack("<I")[0]).decode()
    tensors = {}
    for _ in range(r.unpack("<I")[0]):
        name = r.take(r.unpack("<H")[0]).decode()
        code, ndim = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype "
                                  f"code {code}")
        shape = r.unpack(f"<{ndim}Q")
        dtype = np.dtype(_CODE_DTYPES[code])
        data = r.take(int(np.prod(shape)) * dtype.itemsize)
        tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return Checkpoint(tensors=tensors, meta=meta)


def split_prefix(tensors, prefix):
    """Sub-dict of entries under prefix, with the prefix stripped."""
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


def pack_training_state(model, optimizer=None, rng=None, epochs_done=None,
                        arch=None, extra_meta=None):
    """Standard tensor/meta layout for a training checkpoint."""
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    meta = dict(extra_meta or {})
    if optimizer is not None:
        for k, v in optimizer.state_dict().items():
            tensors[f"optim.{k}"] = v
    if rng is not None:
        meta["rng_state"] = str(rng.get_state())
    if epochs_done is not None:
        meta["epochs_done"] = str(epochs_done)
    if arch is not None:
        meta["arch"] = arch
    return tensors, meta


def unpack_training_state(ckpt: Checkpoint):
    """Resume dict for network.train, or model-only restore material."""
    state = {"model": split_prefix(ckpt.tensors, "model.")}
    optim = split_prefix(ckpt.tensors, "optim.")
    if optim:
        state["optimizer"] = optim
    if "rng_state" in ckpt.meta:
        state["rng_state"] = int(ckpt.meta["rng_state"])
    if "epochs_done" in ckpt.meta:
        state["epochs_done"] = int(ckpt.meta["epochs_done"])
    return state


def restore_model(model, ckpt: Checkpoint, expected_arch=None):
    if expected_arch is not None and ckpt.meta.get("arch") not in (None, expected_arch):
        raise ShapeError(f"checkpoint architecture {ckpt.meta.get('arch')!r} "
                         f"does not match {expected_arch!r}")
    model.load_state_dict(split_prefix(ckpt.tensors, "model."))
