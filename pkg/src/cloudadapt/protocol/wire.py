"""Binary framing for feature uploads, head downloads, and error replies.

Every frame is little-endian and ends with a CRC32 of all preceding bytes::

    request   "CDCA" | version u16 | type u8 = 1 | device_id u32 | task_id u8 | dim u32 | f32[dim] | crc u32
    response  "CDCA" | version u16 | type u8 = 2 | device_id u32 | in_dim u32 | out_dim u32 | f32 weights | f32 bias | crc u32
    error     "CDCA" | version u16 | type u8 = 255 | code u16 | len u16 | utf-8 message | crc u32

Weights are row-major ``[out_dim, in_dim]``.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"CDCA"
VERSION = 1
MSG_REQUEST = 1
MSG_RESPONSE = 2
MSG_ERROR = 255

_PREFIX = struct.Struct("<4sHB")
_REQ = struct.Struct("<IBI")
_RESP = struct.Struct("<III")
_ERR = struct.Struct("<HH")
_CRC = struct.Struct("<I")

# error codes carried in error frames
ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_BAD_CRC = 3
ERR_TRUNCATED = 4
ERR_STRUCTURE = 5
ERR_DIMENSION = 6
ERR_TOO_LARGE = 7
ERR_DEGENERATE = 8  # feature has (near-)zero spread; statistics undefined
ERR_INTERNAL = 100


class DecodeError(ValueError):
    code = ERR_STRUCTURE


class BadMagic(DecodeError):
    code = ERR_BAD_MAGIC


class BadVersion(DecodeError):
    code = ERR_BAD_VERSION


class BadCRC(DecodeError):
    code = ERR_BAD_CRC


class Truncated(DecodeError):
    code = ERR_TRUNCATED


class StructureError(DecodeError):
    code = ERR_STRUCTURE


class RemoteError(RuntimeError):
    """The peer answered with an error frame."""

    def __init__(self, code: int, message: str):
        super().__init__(f"remote error {code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class AdaptRequest:
    device_id: int
    task_id: int
    feature: np.ndarray  # float32 [dim]

    def __post_init__(self):
        f = np.ascontiguousarray(self.feature, dtype="<f4")
        if f.ndim != 1:
            raise ValueError("feature must be a vector")
        if not np.all(np.isfinite(f)):
            raise ValueError("feature must be finite")
        if not (0 <= self.device_id < 2**32 and 0 <= self.task_id < 2**8):
            raise ValueError("device_id must fit u32 and task_id u8")
        object.__setattr__(self, "feature", f)

    def __eq__(self, other):
        return (isinstance(other, AdaptRequest) and self.device_id == other.device_id
                and self.task_id == other.task_id and self.feature.tobytes() == other.feature.tobytes())


@dataclass(frozen=True)
class AdaptResponse:
    device_id: int
    weights: np.ndarray  # float32 [out_dim, in_dim]
    bias: np.ndarray     # float32 [out_dim]

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype="<f4")
        b = np.ascontiguousarray(self.bias, dtype="<f4")
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"weights {w.shape} and bias {b.shape} do not form a head")
        if not 0 <= self.device_id < 2**32:
            raise ValueError("device_id must fit u32")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        return (isinstance(other, AdaptResponse) and self.device_id == other.device_id
                and self.weights.shape == other.weights.shape
                and self.weights.tobytes() == other.weights.tobytes()
                and self.bias.tobytes() == other.bias.tobytes())


@dataclass(frozen=True)
class ErrorFrame:
    code: int
    message: str


def _seal(body: bytes) -> bytes:
    return body + _CRC.pack(zlib.crc32(body))


def encode_request(req: AdaptRequest) -> bytes:
    head = _PREFIX.pack(MAGIC, VERSION, MSG_REQUEST) + _REQ.pack(req.device_id, req.task_id, req.feature.size)
    return _seal(head + req.feature.tobytes())


def encode_response(resp: AdaptResponse) -> bytes:
    head = _PREFIX.pack(MAGIC, VERSION, MSG_RESPONSE) + _RESP.pack(resp.device_id, resp.in_dim, resp.out_dim)
    return _seal(head + resp.weights.tobytes() + resp.bias.tobytes())


def encode_error(code: int, message: str) -> bytes:
    text = message.encode("utf-8")[:0xFFFF]
    # do not cut a multi-byte character in half
    text = text.decode("utf-8", "ignore").encode("utf-8")
    return _seal(_PREFIX.pack(MAGIC, VERSION, MSG_ERROR) + _ERR.pack(code, len(text)) + text)


def _open(buf: bytes) -> tuple[int, memoryview]:
    """Check framing and CRC; return the message type and the body after the prefix."""
    buf = memoryview(bytes(buf))
    if len(buf) < 4:
        raise Truncated(f"frame of {len(buf)} bytes is shorter than the magic")
    if bytes(buf[:4]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[:4])!r}")
    if len(buf) < _PREFIX.size + _CRC.size:
        raise Truncated(f"frame of {len(buf)} bytes is shorter than the minimal frame")
    _, version, msg_type = _PREFIX.unpack_from(buf, 0)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    (crc,) = _CRC.unpack_from(buf, len(buf) - _CRC.size)
    if zlib.crc32(buf[:-_CRC.size]) != crc:
        raise BadCRC("CRC mismatch")
    return msg_type, buf[_PREFIX.size:-_CRC.size]


def _expect(body: memoryview, n: int, what: str) -> None:
    if len(body) != n:
        kind = Truncated if len(body) < n else StructureError
        raise kind(f"{what}: expected {n} body bytes, got {len(body)}")


def decode_request(buf: bytes) -> AdaptRequest:
    msg_type, body = _open(buf)
    if msg_type != MSG_REQUEST:
        raise StructureError(f"expected request frame, got type {msg_type}")
    if len(body) < _REQ.size:
        raise Truncated("request header cut short")
    device_id, task_id, dim = _REQ.unpack_from(body, 0)
    _expect(body, _REQ.size + 4 * dim, "request")
    feature = np.frombuffer(body, "<f4", dim, _REQ.size).copy()
    if not np.all(np.isfinite(feature)):
        raise StructureError("request feature is not finite")
    return AdaptRequest(device_id, task_id, feature)


def decode_response(buf: bytes) -> AdaptResponse:
    msg_type, body = _open(buf)
    if msg_type == MSG_ERROR:
        err = _decode_error_body(body)
        raise RemoteError(err.code, err.message)
    if msg_type != MSG_RESPONSE:
        raise StructureError(f"expected response frame, got type {msg_type}")
    if len(body) < _RESP.size:
        raise Truncated("response header cut short")
    device_id, in_dim, out_dim = _RESP.unpack_from(body, 0)
    n_w = in_dim * out_dim
    _expect(body, _RESP.size + 4 * (n_w + out_dim), "response")
    if out_dim == 0:
        raise StructureError("response head has no outputs")
    floats = np.frombuffer(body, "<f4", n_w + out_dim, _RESP.size)
    return AdaptResponse(device_id, floats[:n_w].reshape(out_dim, in_dim).copy(), floats[n_w:].copy())


def _decode_error_body(body: memoryview) -> ErrorFrame:
    if len(body) < _ERR.size:
        raise Truncated("error header cut short")
    code, length = _ERR.unpack_from(body, 0)
    _expect(body, _ERR.size + length, "error")
    try:
        message = bytes(body[_ERR.size:]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise StructureError("error message is not utf-8") from exc
    return ErrorFrame(code, message)


def decode_error(buf: bytes) -> ErrorFrame:
    msg_type, body = _open(buf)
    if msg_type != MSG_ERROR:
        raise StructureError(f"expected error frame, got type {msg_type}")
    return _decode_error_body(body)


def decode_any(buf: bytes):
    """Decode whichever message the frame holds."""
    msg_type, _ = _open(buf)
    if msg_type == MSG_REQUEST:
        return decode_request(buf)
    if msg_type == MSG_RESPONSE:
        return decode_response(buf)
    if msg_type == MSG_ERROR:
        return decode_error(buf)
    raise StructureError(f"unknown message type {msg_type}")


def payload_section(frame: bytes) -> bytes:
    """The float payload of a request or response (framing and CRC stripped)."""
    msg_type, body = _open(frame)
    if msg_type == MSG_REQUEST:
        return bytes(body[_REQ.size:])
    if msg_type == MSG_RESPONSE:
        return bytes(body[_RESP.size:])
    raise StructureError("error frames carry no float payload")
