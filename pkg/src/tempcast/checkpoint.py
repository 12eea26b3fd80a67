"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"TEMPCAST"                 magic, 8 bytes
    u32 version                 FORMAT_VERSION
    u64 total_length            whole file, checksum included
    u32 n, bytes[n]             canonical JSON: {"model": <ModelConfig>, "meta": {...}}
    b"SCAL" u32 F  f64[F] f64[F]            scaler minima then maxima
    b"PARM" u32 K  K x tensor               tensors in ParamSet order
        tensor: u16 n, name[n], u8 ndim, u32[ndim] shape, f64[prod(shape)] data
    sha256(all preceding bytes), 32 bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    CheckpointFormatError,
    CheckpointVersionError,
    ConfigError,
    TruncatedCheckpointError,
)
from .model import ModelConfig, ParamSet, build
from .preprocessing import ScalerParams

MAGIC = b"TEMPCAST"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class ModelBundle:
    params: ParamSet
    scaler: ScalerParams
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_block(config: ModelConfig, meta: dict) -> bytes:
    text = canonical_json({"model": config.to_dict(), "meta": meta}).encode("utf-8")
    return struct.pack("<I", len(text)) + text


def _scaler_block(scaler: ScalerParams) -> bytes:
    n = scaler.n_features
    return b"SCAL" + struct.pack("<I", n) + scaler.min.astype("<f8").tobytes() + scaler.max.astype("<f8").tobytes()


def _param_block(params: ParamSet) -> bytes:
    named = params.named_tensors()
    parts = [b"PARM", struct.pack("<I", len(named))]
    for name, arr in named.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def frame(blocks: list[bytes], version: int = FORMAT_VERSION) -> bytes:
    """Wrap body blocks with the header and trailing checksum."""
    body = b"".join(blocks)
    total = _HEADER.size + len(body) + _DIGEST
    data = _HEADER.pack(MAGIC, version, total) + body
    return data + hashlib.sha256(data).digest()


def encode(params: ParamSet, scaler: ScalerParams, meta: dict | None = None) -> bytes:
    return frame([_config_block(params.config, meta or {}), _scaler_block(scaler), _param_block(params)])


def save(params: ParamSet, scaler: ScalerParams, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode(params, scaler, meta))
    return path


class _Reader:
    def __init__(self, data: bytes, pos: int, end: int):
        self.data, self.pos, self.end = data, pos, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise CheckpointFormatError("block runs past the end of the checkpoint body")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def tag(self, expected: bytes, what: str):
        got = self.data[self.pos : self.pos + len(expected)]
        if got != expected:
            raise CheckpointFormatError(f"missing {what} block (expected tag {expected!r}, found {got!r})")
        self.pos += len(expected)


def decode(data: bytes) -> ModelBundle:
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        if len(data) < _HEADER.size and MAGIC.startswith(data[:8]):
            raise TruncatedCheckpointError(f"checkpoint is only {len(data)} bytes long")
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    _, version, total = _HEADER.unpack_from(data)
    if len(data) < total:
        raise TruncatedCheckpointError(f"checkpoint truncated: {len(data)} of {total} bytes present")
    if len(data) > total:
        raise CheckpointFormatError(f"{len(data) - total} trailing bytes after checkpoint")
    if hashlib.sha256(data[:-_DIGEST]).digest() != data[-_DIGEST:]:
        raise ChecksumError("checkpoint checksum mismatch (file corrupted)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")

    r = _Reader(data, _HEADER.size, total - _DIGEST)
    (n,) = r.unpack("<I")
    try:
        header = json.loads(r.take(n).decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointFormatError(f"unreadable config block: {exc}") from exc
    meta = header.get("meta", {})

    r.tag(b"SCAL", "scaler")
    (n_feat,) = r.unpack("<I")
    lo = np.frombuffer(r.take(8 * n_feat), dtype="<f8").astype(np.float64)
    hi = np.frombuffer(r.take(8 * n_feat), dtype="<f8").astype(np.float64)
    scaler = ScalerParams(lo, hi)

    r.tag(b"PARM", "parameter")
    (k,) = r.unpack("<I")
    named = {}
    for _ in range(k):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        named[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != r.end:
        raise CheckpointFormatError("unexpected bytes after parameter block")

    skeleton = build(config)
    layout = skeleton.named_tensors()
    if list(named) != list(layout):
        raise CheckpointFormatError("parameter names/order do not match the configured model")
    for name, arr in layout.items():
        if named[name].shape != arr.shape:
            raise CheckpointFormatError(f"{name} has shape {named[name].shape}, config implies {arr.shape}")
    return ModelBundle(skeleton.with_tensors(named), scaler, meta)


def load(path) -> ModelBundle:
    return decode(Path(path).read_bytes())
