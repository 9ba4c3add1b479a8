"""Synthetic multi-device video/query corpora with controlled distribution shift.

Each device sees the same class prototypes, but

* every frame of its videos is offset by ``shift_strength`` along a device direction,
* the prototypes are rotated by an angle proportional to ``shift_strength``,
* a growing number of class pairs have their answer labels swapped.

With ``shift_strength == 0`` all devices are identically distributed. The label
swaps make the answer a function of (cluster, device), which no single static
linear head can represent.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ContractError

PROTO_SCALE = 0.6
VIDEO_NOISE = 0.9
FRAME_NOISE = 1.0
ROTATION_RATE = 0.15  # radians per unit of shift
QUERY_SIGNAL = 0.45
MIN_QUERY_LEN = 3
FULL_SHIFT = 3.0  # shift at which every class pair is swapped


@dataclass(frozen=True)
class SyntheticVideo:
    frames: np.ndarray  # [N_f, d_raw]
    domain_id: int
    clip_id: int


@dataclass(frozen=True)
class SyntheticQuery:
    token_ids: tuple

    def __post_init__(self):
        if len(self.token_ids) == 0:
            raise ContractError("empty query")


@dataclass(frozen=True)
class LabeledSample:
    video: SyntheticVideo
    query: SyntheticQuery
    label: int

    @property
    def device_id(self) -> int:
        return self.video.domain_id


@dataclass
class DeviceCorpus:
    device_id: int
    history: list
    realtime: list
    shift: np.ndarray
    rotation_seed: int
    label_map: np.ndarray
    vocab: int
    max_len: int

    @property
    def num_answers(self) -> int:
        return len(self.label_map)


@dataclass
class Batch:
    frames: np.ndarray   # [n, N_f, d_raw]
    tokens: np.ndarray   # [n, L] zero-padded
    lengths: np.ndarray  # [n]
    labels: np.ndarray   # [n]
    devices: np.ndarray  # [n]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Batch":
        return Batch(self.frames[idx], self.tokens[idx], self.lengths[idx], self.labels[idx], self.devices[idx])


def swap_count(shift_strength: float, num_answers: int) -> int:
    frac = min(max(shift_strength, 0.0), FULL_SHIFT) / FULL_SHIFT
    return int(round(frac * (num_answers // 2)))


def _rotation(seed: int, d: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` in a random plane."""
    r = np.random.default_rng(seed)
    a = r.normal(size=d)
    a /= np.linalg.norm(a)
    b = r.normal(size=d)
    b -= a * (a @ b)
    b /= np.linalg.norm(b)
    return (np.eye(d) + np.sin(angle) * (np.outer(b, a) - np.outer(a, b))
            + (np.cos(angle) - 1.0) * (np.outer(a, a) + np.outer(b, b)))


def _balanced(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.permutation(np.resize(np.arange(k), n))


def _queries(rng, clusters, vocab, max_len, num_answers):
    owned = vocab // num_answers * num_answers
    out = []
    for k in clusters:
        length = int(rng.integers(MIN_QUERY_LEN, max_len + 1))
        toks = []
        for _ in range(length):
            if rng.random() < QUERY_SIGNAL:
                toks.append(int(k + num_answers * rng.integers(owned // num_answers)))
            else:
                toks.append(int(rng.integers(vocab)))
        out.append(SyntheticQuery(tuple(toks)))
    return out


def make_corpus(num_devices: int = 3, per_device_history: int = 2000, per_device_realtime: int = 500,
                num_answers: int = 10, shift_strength: float = 3.0, seed: int = 0, d_raw: int = 32,
                n_frames: int = 8, vocab: int = 64, max_len: int = 6) -> list[DeviceCorpus]:
    """Generate one :class:`DeviceCorpus` per device; deterministic in ``seed``."""
    if num_devices < 1:
        raise ContractError("need at least one device")
    if per_device_history < 1 or per_device_realtime < 1 or num_answers < 2:
        raise ContractError("sample and answer counts must be positive")
    if shift_strength < 0:
        raise ContractError("shift_strength must be >= 0")
    if vocab < num_answers or max_len < MIN_QUERY_LEN or n_frames < 2:
        raise ContractError("vocab/max_len/n_frames too small")
    root = np.random.SeedSequence(seed)
    children = root.spawn(num_devices + 1)
    g = np.random.default_rng(children[0])
    prototypes = g.normal(0.0, PROTO_SCALE, size=(num_answers, d_raw))
    devices = []
    clip = 0
    for d in range(num_devices):
        rng = np.random.default_rng(children[d + 1])
        u = rng.normal(size=d_raw)
        shift = (shift_strength * u / np.linalg.norm(u)).astype(np.float32)
        rotation_seed = int(rng.integers(2**63 - 1))
        R = _rotation(rotation_seed, d_raw, ROTATION_RATE * shift_strength)
        pairs = rng.permutation(num_answers)
        label_map = np.arange(num_answers)
        for j in range(swap_count(shift_strength, num_answers)):
            a, b = pairs[2 * j], pairs[2 * j + 1]
            label_map[a], label_map[b] = b, a
        centres = prototypes @ R.T + shift.astype(np.float64)
        splits = []
        for n in (per_device_history, per_device_realtime):
            clusters = _balanced(rng, n, num_answers)
            video_mean = centres[clusters] + rng.normal(0.0, VIDEO_NOISE, size=(n, d_raw))
            frames = video_mean[:, None, :] + rng.normal(0.0, FRAME_NOISE, size=(n, n_frames, d_raw))
            frames = frames.astype(np.float32).astype(np.float64)
            queries = _queries(rng, clusters, vocab, max_len, num_answers)
            samples = []
            for i in range(n):
                samples.append(LabeledSample(SyntheticVideo(frames[i], d, clip), queries[i], int(label_map[clusters[i]])))
                clip += 1
            splits.append(samples)
        devices.append(DeviceCorpus(d, splits[0], splits[1], shift, rotation_seed, label_map, vocab, max_len))
    return devices


def split_history_realtime(corpus: list[DeviceCorpus]) -> tuple[list, dict]:
    """Pooled cloud-side history (device ids kept on each video) and per-device realtime streams."""
    if not corpus:
        raise ContractError("empty corpus")
    pooled = [s for dev in corpus for s in dev.history]
    streams = {dev.device_id: sorted(dev.realtime, key=lambda s: s.video.clip_id) for dev in corpus}
    return pooled, streams


def stack(samples: list, max_len: int | None = None) -> Batch:
    """Array view of a sample list for batched encoding."""
    if max_len is None:
        max_len = max(len(s.query.token_ids) for s in samples)
    n = len(samples)
    tokens = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(samples):
        ids = s.query.token_ids
        tokens[i, :len(ids)] = ids
        lengths[i] = len(ids)
    return Batch(
        frames=np.stack([s.video.frames for s in samples]),
        tokens=tokens,
        lengths=lengths,
        labels=np.array([s.label for s in samples], dtype=np.int64),
        devices=np.array([s.video.domain_id for s in samples], dtype=np.int64),
    )


# --- binary corpus files -------------------------------------------------

MAGIC = b"CDCD"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIIII")
_DEVICE = struct.Struct("<IIIQ")


class CorpusFormatError(ValueError):
    pass


def _sample_dtype(max_len: int, n_frames: int, d_raw: int) -> np.dtype:
    return np.dtype([("clip", "<u4"), ("domain", "<u4"), ("label", "<u4"), ("qlen", "<u4"),
                     ("tokens", "<u4", (max_len,)), ("frames", "<f4", (n_frames, d_raw))])


def corpus_to_bytes(corpus: list[DeviceCorpus]) -> bytes:
    first = corpus[0]
    n_frames, d_raw = first.history[0].video.frames.shape
    k = first.num_answers
    parts = [_HEADER.pack(MAGIC, VERSION, len(corpus), d_raw, n_frames, first.max_len, first.vocab, k)]
    dt = _sample_dtype(first.max_len, n_frames, d_raw)
    for dev in corpus:
        parts.append(_DEVICE.pack(dev.device_id, len(dev.history), len(dev.realtime), dev.rotation_seed))
        parts.append(np.asarray(dev.shift, dtype="<f4").tobytes())
        parts.append(np.asarray(dev.label_map, dtype="<u4").tobytes())
        for samples in (dev.history, dev.realtime):
            rec = np.zeros(len(samples), dtype=dt)
            for i, s in enumerate(samples):
                ids = s.query.token_ids
                rec[i]["clip"] = s.video.clip_id
                rec[i]["domain"] = s.video.domain_id
                rec[i]["label"] = s.label
                rec[i]["qlen"] = len(ids)
                rec[i]["tokens"][:len(ids)] = ids
                rec[i]["frames"] = s.video.frames
            parts.append(rec.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def corpus_from_bytes(buf: bytes) -> list[DeviceCorpus]:
    if len(buf) < _HEADER.size + 4:
        raise CorpusFormatError("truncated corpus file")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    magic, version, n_dev, d_raw, n_frames, max_len, vocab, k = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CorpusFormatError("bad magic")
    if version != VERSION:
        raise CorpusFormatError(f"unsupported corpus version {version}")
    if zlib.crc32(body) != crc:
        raise CorpusFormatError("CRC mismatch")
    dt = _sample_dtype(max_len, n_frames, d_raw)
    off = _HEADER.size
    out = []
    try:
        for _ in range(n_dev):
            dev_id, n_hist, n_rt, rot = _DEVICE.unpack_from(body, off)
            off += _DEVICE.size
            shift = np.frombuffer(body, "<f4", d_raw, off).copy()
            off += 4 * d_raw
            label_map = np.frombuffer(body, "<u4", k, off).astype(np.int64)
            off += 4 * k
            splits = []
            for n in (n_hist, n_rt):
                rec = np.frombuffer(body, dt, n, off)
                off += n * dt.itemsize
                splits.append([
                    LabeledSample(
                        SyntheticVideo(r["frames"].astype(np.float64), int(r["domain"]), int(r["clip"])),
                        SyntheticQuery(tuple(int(t) for t in r["tokens"][:r["qlen"]])),
                        int(r["label"]))
                    for r in rec])
            out.append(DeviceCorpus(dev_id, splits[0], splits[1], shift, rot, label_map, vocab, max_len))
    except (struct.error, ValueError) as exc:
        raise CorpusFormatError(f"malformed corpus body: {exc}") from exc
    if off != len(body):
        raise CorpusFormatError("trailing bytes in corpus file")
    return out


def save_corpus(path, corpus: list[DeviceCorpus]) -> None:
    Path(path).write_bytes(corpus_to_bytes(corpus))


def load_corpus(path) -> list[DeviceCorpus]:
    return corpus_from_bytes(Path(path).read_bytes())
