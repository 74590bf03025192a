"""HFLS binary message format.

Layout (all integers little-endian)::

    offset size field
         0    4 magic b"HFLS"
         4    1 version (0x01)
         5    1 msg_type (0 share, 1 weights, 2 prediction)
         6    4 sender_id (u32)
        10    2 share_index (u16)
        12    2 share_count (u16)
        14    4 dim (u32)
        18  8*d ring elements (u64)
    18+8d    4 CRC-32 (reflected, poly 0xEDB88320) of all preceding bytes

Weights and prediction messages reuse the header with ``share_index=0`` and
``share_count=1``.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, BadVersion, CrcMismatch, Truncated, WireError
from .ring import RingVector, SecretShare

MAGIC = b"HFLS"
VERSION = 1
_HEADER = struct.Struct("<4sBBIHHI")
HEADER_SIZE = _HEADER.size  # 18
CRC_SIZE = 4


class MsgType(enum.IntEnum):
    SHARE = 0
    WEIGHTS = 1
    PREDICTION = 2


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    sender_id: int
    share_index: int
    share_count: int
    payload: RingVector

    def as_share(self) -> SecretShare:
        if self.msg_type != MsgType.SHARE:
            raise WireError(f"message type {self.msg_type.name} is not a share")
        return SecretShare(self.sender_id, self.share_index, self.share_count, self.payload)


def crc32(data: bytes) -> int:
    # zlib's CRC-32 is the reflected 0xEDB88320 polynomial with init/xorout 0xFFFFFFFF
    return zlib.crc32(data) & 0xFFFFFFFF


def encode_message(msg: Message) -> bytes:
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        int(msg.msg_type),
        msg.sender_id,
        msg.share_index,
        msg.share_count,
        msg.payload.dim,
    )
    body = header + msg.payload.elems.astype("<u8", copy=False).tobytes()
    return body + struct.pack("<I", crc32(body))


def decode_message(data: bytes) -> Message:
    """Parse one message.  The checksum is verified before any header field
    is trusted, so any single-bit corruption surfaces as ``CrcMismatch``."""
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise Truncated(f"{len(data)} bytes is shorter than an empty message")
    (crc,) = struct.unpack_from("<I", data, len(data) - CRC_SIZE)
    if crc != crc32(data[:-CRC_SIZE]):
        raise CrcMismatch("checksum does not match")
    magic, version, msg_type, sender, index, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"version {version}")
    expected = HEADER_SIZE + 8 * dim + CRC_SIZE
    if len(data) < expected:
        raise Truncated(f"need {expected} bytes for dim={dim}, got {len(data)}")
    if len(data) > expected:
        raise WireError(f"{len(data) - expected} trailing bytes")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise WireError(f"unknown msg_type {msg_type}") from None
    elems = np.frombuffer(data, dtype="<u8", count=dim, offset=HEADER_SIZE)
    return Message(kind, sender, index, count, RingVector(elems))


def serialize_share(share: SecretShare) -> bytes:
    return encode_message(
        Message(MsgType.SHARE, share.sender_id, share.share_index, share.share_count, share.payload)
    )


def deserialize_share(data: bytes) -> SecretShare:
    return decode_message(data).as_share()


def weights_message(sender_id: int, payload: RingVector) -> bytes:
    return encode_message(Message(MsgType.WEIGHTS, sender_id, 0, 1, payload))


def prediction_message(sender_id: int, community_id: int, round_: int, location: int, time: int) -> bytes:
    payload = RingVector(np.array([community_id, round_, location, time], dtype=np.uint64))
    return encode_message(Message(MsgType.PREDICTION, sender_id, 0, 1, payload))


def parse_prediction(msg: Message) -> tuple[int, int, int, int]:
    """(community_id, round, location, time) from a prediction message."""
    if msg.msg_type != MsgType.PREDICTION or msg.payload.dim != 4:
        raise WireError("not a prediction message")
    c, r, loc, t = (int(x) for x in msg.payload.elems)
    return c, r, loc, t
