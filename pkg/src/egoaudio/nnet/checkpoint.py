"""EGONET01 checkpoint files.

Layout (little-endian): magic ``EGONET01``, u32 version, u32 num_classes,
f64 width_scale, f64 dropout, u64 seed, u32 tensor count, then per tensor
u16 name length, name bytes (UTF-8), u8 ndim, u32 dims, f32 data. A trailer
of u32 epoch, u32 length and that many bytes of RNG state follows; readers
that stop after the tensors can ignore it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from egoaudio.errors import FormatError
from egoaudio.nnet.model import VGG11, ModelConfig, restore_rng_state, rng_state

NET_MAGIC = b"EGONET01"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sIIddQI")


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: list[tuple[str, np.ndarray]]
    epoch: int = 0
    rng_state: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        names = [n for n, _ in self.tensors]
        if len(set(names)) != len(names):
            raise FormatError("duplicate tensor names")


def to_checkpoint(model: VGG11, epoch: int = 0, extra_state: dict | None = None) -> Checkpoint:
    tensors = [(name, np.array(v, dtype=np.float32)) for name, v in model.named_parameters()]
    return Checkpoint(model.config, tensors, epoch, rng_state(model, extra_state))


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> VGG11:
    model = VGG11(ckpt.config, dtype)
    model.load_parameters(ckpt.tensors)
    restore_rng_state(model, ckpt.rng_state)
    return model


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    parts = [_HEAD.pack(NET_MAGIC, FORMAT_VERSION, cfg.num_classes, float(cfg.width_scale),
                        float(cfg.dropout_rate), int(cfg.seed), len(ckpt.tensors))]
    for name, arr in ckpt.tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack(f"<H{len(raw)}sB", len(raw), raw, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<II", int(ckpt.epoch), len(ckpt.rng_state)))
    parts.append(ckpt.rng_state)
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Checkpoint:
    try:
        magic, version, num_classes, width, drop, seed, count = _HEAD.unpack_from(data, 0)
    except struct.error as exc:
        raise FormatError("checkpoint header truncated") from exc
    if magic != NET_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = _HEAD.size
    tensors = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise FormatError(f"tensor {name!r} runs past end of file")
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
            tensors.append((name, arr))
        epoch, blob = 0, b""
        if pos < len(data):
            epoch, blen = struct.unpack_from("<II", data, pos)
            pos += 8
            blob = data[pos:pos + blen]
            pos += blen
            if len(blob) != blen:
                raise FormatError("rng state truncated")
    except struct.error as exc:
        raise FormatError("checkpoint truncated") from exc
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint")
    config = ModelConfig(num_classes=num_classes, width_scale=width, dropout_rate=drop, seed=seed)
    return Checkpoint(config, tensors, epoch, bytes(blob))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
