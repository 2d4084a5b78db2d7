"""Binary checkpoint format.

Layout (all integers little-endian)::

    header   magic b"CAPSGAN\\0" | u32 version | u64 total file length | u32 crc32(header[:20])
    config   u64 length | canonical JSON (sorted keys, compact separators), UTF-8
    buffers  u32 count, then per buffer:
             u32 name length | name (UTF-8) | u32 ndim | u64 dims[ndim] | u64 count | f64 data[count]
    trailer  u32 crc32 of every preceding byte

Buffers are written in sorted-name order: ``g/<param>``, ``d/<param>`` and the
Adam moments ``g_opt/m/<param>``, ``g_opt/v/<param>``, ``d_opt/...``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from ..autodiff import Adam, Tensor
from .config import DiscriminatorConfig, GeneratorConfig, TrainingConfig
from .model import GanModel

MAGIC = b"CAPSGAN\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")
HEADER_SIZE = _HEADER.size + 4


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class VariantMismatchError(CheckpointError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _buffers(model: GanModel) -> dict[str, np.ndarray]:
    out = {}
    for prefix, params in (("g", model.g_params), ("d", model.d_params)):
        for k, p in params.items():
            out[f"{prefix}/{k}"] = p.data
    for prefix, opt in (("g_opt", model.g_opt), ("d_opt", model.d_opt)):
        for k in opt.m:
            out[f"{prefix}/m/{k}"] = opt.m[k]
            out[f"{prefix}/v/{k}"] = opt.v[k]
    return out


def checkpoint_bytes(model: GanModel) -> bytes:
    meta = model.config_dict()
    meta["state"] = {"step": model.step, "g_opt_steps": model.g_opt.step_count,
                     "d_opt_steps": model.d_opt.step_count}
    body = bytearray()
    cfg = canonical_json(meta).encode()
    body += struct.pack("<Q", len(cfg)) + cfg
    buffers = _buffers(model)
    body += struct.pack("<I", len(buffers))
    for name in sorted(buffers):
        arr = np.ascontiguousarray(buffers[name], dtype="<f8")
        raw = name.encode()
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += struct.pack("<Q", arr.size) + arr.tobytes()
    total = HEADER_SIZE + len(body) + 4
    head = _HEADER.pack(MAGIC, VERSION, total)
    blob = head + struct.pack("<I", zlib.crc32(head)) + bytes(body)
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_checkpoint(model: GanModel, path) -> None:
    """Write atomically: a partial file never replaces a good one."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(model))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, pos: int, end: int):
        self.blob, self.pos, self.end = blob, pos, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise CheckpointFormatError("checkpoint body overruns its declared length")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def parse_checkpoint(blob: bytes, expected_variant: str | None = None) -> GanModel:
    if len(blob) < HEADER_SIZE:
        raise CheckpointTruncatedError(f"checkpoint has {len(blob)} bytes, header needs {HEADER_SIZE}")
    magic, version, total = _HEADER.unpack(blob[:_HEADER.size])
    (head_crc,) = struct.unpack("<I", blob[_HEADER.size:HEADER_SIZE])
    if zlib.crc32(blob[:_HEADER.size]) != head_crc:
        if magic != MAGIC:
            raise CheckpointFormatError("not a checkpoint file (bad magic)")
        raise CheckpointChecksumError("checkpoint header checksum mismatch")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {VERSION}")
    if len(blob) < total:
        raise CheckpointTruncatedError(f"checkpoint truncated: {len(blob)} of {total} bytes")
    if len(blob) > total:
        raise CheckpointFormatError(f"checkpoint has {len(blob) - total} trailing bytes")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointChecksumError("checkpoint checksum mismatch")

    r = _Reader(blob, HEADER_SIZE, len(blob) - 4)
    (cfg_len,) = r.unpack("<Q")
    meta = json.loads(r.take(cfg_len).decode())
    (count,) = r.unpack("<I")
    buffers = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (size,) = r.unpack("<Q")
        if size != int(np.prod(shape)):
            raise CheckpointFormatError(f"buffer {name}: {size} values for shape {shape}")
        buffers[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)

    disc = meta["discriminator"]
    if expected_variant is not None and disc["variant"] != expected_variant:
        raise VariantMismatchError(
            f"checkpoint holds a {disc['variant']} discriminator, expected {expected_variant}")
    gen_cfg = GeneratorConfig(**meta["generator"])
    disc_cfg = DiscriminatorConfig(**disc)
    train_cfg = TrainingConfig(**meta["training"])
    state = meta["state"]

    def params(prefix):
        n = len(prefix) + 1
        return {k[n:]: Tensor(v, requires_grad=True)
                for k, v in buffers.items() if k.startswith(prefix + "/")}

    def optimizer(prefix, steps):
        opt = Adam(lr=train_cfg.learning_rate, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                   eps=train_cfg.eps, step_count=steps)
        for k, v in buffers.items():
            if k.startswith(prefix + "/m/"):
                opt.m[k[len(prefix) + 3:]] = v.copy()
            elif k.startswith(prefix + "/v/"):
                opt.v[k[len(prefix) + 3:]] = v.copy()
        return opt

    return GanModel(gen_cfg, disc_cfg, train_cfg, params("g"), params("d"),
                    optimizer("g_opt", state["g_opt_steps"]), optimizer("d_opt", state["d_opt_steps"]),
                    step=state["step"])


def load_checkpoint(path, expected_variant: str | None = None) -> GanModel:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), expected_variant)
