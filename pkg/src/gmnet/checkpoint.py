"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GMNT"  u32 version  u32 config_len  config (UTF-8 key=value lines)
    u32 n_tensors
    n_tensors x { u16 name_len, name, u8 dtype, u8 flags, u8 ndim,
                  ndim x u64 shape, u64 offset, u64 nbytes }
    payload (tensors back to back, offsets relative to payload start)

``flags`` bit 0 marks a trainable tensor.  Tensors are written in sorted
name order so that identical models always serialise to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import GmNetModel, ModelConfig
from .errors import CheckpointError, GmNetError

MAGIC = b"GMNT"
VERSION = 1
FLAG_TRAINABLE = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return _CODES[dt]


def to_bytes(model: GmNetModel) -> bytes:
    tensors = model.named_tensors()
    trainable = set(model.trainable_names())
    config = model.config.to_text().encode("utf-8")
    names = sorted(tensors)
    directory = []
    payload = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        code = _code(arr)
        raw = arr.astype(_DTYPES[code], copy=False).tobytes(order="C")
        nb = name.encode("utf-8")
        entry = struct.pack("<H", len(nb)) + nb
        entry += struct.pack("<BBB", code, FLAG_TRAINABLE if name in trainable else 0, arr.ndim)
        entry += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        entry += struct.pack("<QQ", offset, len(raw))
        directory.append(entry)
        payload.append(raw)
        offset += len(raw)
    head = MAGIC + struct.pack("<II", VERSION, len(config)) + config + struct.pack("<I", len(names))
    return head + b"".join(directory) + b"".join(payload)


def save(model: GmNetModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def read_tensors(buf: bytes):
    """Parse a checkpoint into (config, {name: array}, {name: flags})."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, clen = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_text(r.take(clen).decode("utf-8"))
    except (UnicodeDecodeError, ValueError, GmNetError) as exc:
        raise CheckpointError(f"malformed config document: {exc}") from None
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, flags, ndim = r.unpack("<BBB")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        offset, nbytes = r.unpack("<QQ")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        entries.append((name, _DTYPES[code], flags, tuple(shape), offset, nbytes))
    payload = buf[r.pos :]
    tensors, flags_by_name = {}, {}
    spans = []
    for name, dt, flags, shape, offset, nbytes in entries:
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CheckpointError(f"{name}: byte count does not match shape")
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{name}: payload out of bounds")
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        flags_by_name[name] = flags
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CheckpointError(f"tensors {n0!r} and {n1!r} overlap")
    end = spans[-1][1] if spans else 0
    if end != len(payload):
        raise CheckpointError("trailing bytes after the last tensor")
    return config, tensors, flags_by_name


def from_bytes(buf: bytes) -> GmNetModel:
    config, tensors, flags = read_tensors(buf)
    model = GmNetModel(config)
    expected_trainable = set(model.trainable_names())
    for name, fl in flags.items():
        if bool(fl & FLAG_TRAINABLE) != (name in expected_trainable):
            raise CheckpointError(f"{name}: trainable flag disagrees with the config")
    compiled = {n: v for n, v in model.named_tensors().items() if n not in expected_trainable}
    try:
        model.set_tensors(tensors, strict=True)
    except GmNetError as exc:
        raise CheckpointError(str(exc)) from None
    # Frozen eigenvalues must be the compiled ones, bit for bit.
    for name, ref in compiled.items():
        if not np.array_equal(tensors[name], ref):
            raise CheckpointError(f"{name}: frozen coefficients differ from the compiled values")
        tensors[name].flags.writeable = False
    return model


def load(path) -> GmNetModel:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    return from_bytes(buf)
