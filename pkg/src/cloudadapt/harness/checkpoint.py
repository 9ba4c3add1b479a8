"""Single-file binary checkpoints.

Layout (little-endian)::

    "CDCK" | version u16 | hash_len u16 | config hash ascii | n_sections u32
    per section: name_len u16 | name utf-8 | ndim u8 | dims u32[ndim] | f64 data
    crc32 of everything before it

Section names are ``<block>/<param>`` for the encoder, fda and adr blocks, plus
a ``meta/head_slot`` section holding the head dims.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adr import AdrParams
from ..encoder import EncoderParams
from ..fda import FdaParams
from .training import Models

MAGIC = b"CDCK"
VERSION = 1
_BLOCKS = (("encoder", EncoderParams), ("fda", FdaParams), ("adr", AdrParams))


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    models: Models
    config_hash: str


def to_bytes(models: Models, config_hash: str) -> bytes:
    sections = []
    for block, _ in _BLOCKS:
        for name, arr in getattr(models, block).arrays().items():
            sections.append((f"{block}/{name}", arr))
    sections.append(("meta/head_slot", np.asarray(models.head_slot, dtype=np.float64)))
    h = config_hash.encode("ascii")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(h)), h, struct.pack("<I", len(sections))]
    for name, arr in sections:
        n = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(n)) + n + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 16:
        raise CheckpointError("checkpoint file is truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if body[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<HH", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    try:
        off = 8
        config_hash = body[off:off + hlen].decode("ascii")
        off += hlen
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            size = int(np.prod(shape))
            arrays[name] = np.frombuffer(body, "<f8", size, off).reshape(shape).copy()
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    blocks = {}
    for block, cls in _BLOCKS:
        prefix = block + "/"
        part = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        if not part:
            raise CheckpointError(f"checkpoint has no {block} section")
        blocks[block] = cls.from_arrays(part)
    if "meta/head_slot" not in arrays:
        raise CheckpointError("checkpoint has no head slot")
    slot = tuple(int(v) for v in arrays["meta/head_slot"])
    return Checkpoint(Models(blocks["encoder"], blocks["fda"], blocks["adr"], slot), config_hash)


def save(path, models: Models, config_hash: str) -> None:
    Path(path).write_bytes(to_bytes(models, config_hash))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
