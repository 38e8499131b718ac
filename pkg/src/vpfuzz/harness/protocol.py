"""Length-prefixed framing between harness and VP.

Frame: ``type:u8 | length:u32le | payload[length]``.  RESULT payloads are
``exit_kind:u8 crash_reason:u8 exit_value:u32 instructions:u64 exec_us:u64``
followed by the raw 65,536-byte coverage map, all little-endian.
"""

import enum
import struct
from dataclasses import dataclass

from vpfuzz.coverage import MAP_SIZE

HEADER = struct.Struct("<BI")
RESULT_HEAD = struct.Struct("<BBIQQ")
RESULT_PAYLOAD_SIZE = RESULT_HEAD.size + MAP_SIZE
MAX_PAYLOAD = 16 * 1024 * 1024


class MsgType(enum.IntEnum):
    CONFIGURE = 0x01
    READY = 0x02
    RUN = 0x03
    RESULT = 0x04
    SHUTDOWN = 0x05
    ERROR = 0x06


class ProtocolError(Exception):
    def __init__(self, offset, msg):
        super().__init__(f"offset {offset}: {msg}")
        self.offset = offset


class NeedMoreData(Exception):
    """The buffer ends inside a frame; not an error on a live stream."""

    def __init__(self, offset, needed):
        super().__init__(f"frame at offset {offset} needs {needed} more bytes")
        self.offset = offset
        self.needed = needed


@dataclass(frozen=True)
class Configure:
    text: str


@dataclass(frozen=True)
class Ready:
    pass


@dataclass(frozen=True)
class Run:
    input: bytes


@dataclass(frozen=True)
class Result:
    exit_kind: int
    crash_reason: int
    exit_value: int
    instructions: int
    exec_us: int
    coverage: bytes


@dataclass(frozen=True)
class Shutdown:
    pass


@dataclass(frozen=True)
class Error:
    text: str


_TYPE_OF = {Configure: MsgType.CONFIGURE, Ready: MsgType.READY, Run: MsgType.RUN,
            Result: MsgType.RESULT, Shutdown: MsgType.SHUTDOWN, Error: MsgType.ERROR}


def _payload(msg):
    if isinstance(msg, (Configure, Error)):
        return msg.text.encode("utf-8")
    if isinstance(msg, Run):
        return bytes(msg.input)
    if isinstance(msg, Result):
        if len(msg.coverage) != MAP_SIZE:
            raise ValueError(f"coverage must be {MAP_SIZE} bytes, got {len(msg.coverage)}")
        return RESULT_HEAD.pack(msg.exit_kind, msg.crash_reason, msg.exit_value,
                                msg.instructions, msg.exec_us) + bytes(msg.coverage)
    return b""


def encode_frame(msg):
    payload = _payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(_TYPE_OF[type(msg)], len(payload)) + payload


def decode_frame(buf, offset=0):
    """Decode the frame starting at ``offset``; returns ``(msg, next_offset)``.

    Raises NeedMoreData if the buffer ends mid-frame and ProtocolError (at
    the frame's start offset) for unknown types, oversize lengths or
    malformed payloads.
    """
    avail = len(buf) - offset
    if avail < HEADER.size:
        raise NeedMoreData(offset, HEADER.size - avail)
    mtype, length = HEADER.unpack_from(buf, offset)
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise ProtocolError(offset, f"unknown message type {mtype:#04x}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(offset, f"length {length} exceeds {MAX_PAYLOAD}")
    end = offset + HEADER.size + length
    if len(buf) < end:
        raise NeedMoreData(offset, end - len(buf))
    payload = bytes(buf[offset + HEADER.size:end])
    return _message(mtype, payload, offset), end


def _message(mtype, payload, offset):
    if mtype in (MsgType.READY, MsgType.SHUTDOWN):
        if payload:
            raise ProtocolError(offset, f"{mtype.name} carries no payload")
        return Ready() if mtype == MsgType.READY else Shutdown()
    if mtype == MsgType.RUN:
        return Run(payload)
    if mtype == MsgType.RESULT:
        if len(payload) != RESULT_PAYLOAD_SIZE:
            raise ProtocolError(offset, f"RESULT payload is {len(payload)} bytes, expected {RESULT_PAYLOAD_SIZE}")
        head = RESULT_HEAD.unpack_from(payload)
        return Result(*head, payload[RESULT_HEAD.size:])
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError(offset, f"{mtype.name} payload is not UTF-8") from None
    return Configure(text) if mtype == MsgType.CONFIGURE else Error(text)


def decode_stream(buf):
    """Decode a complete byte string into messages.

    A trailing partial frame is a ProtocolError at that frame's offset.
    """
    msgs, off = [], 0
    while off < len(buf):
        try:
            msg, off = decode_frame(buf, off)
        except NeedMoreData as exc:
            raise ProtocolError(exc.offset, "truncated frame") from None
        msgs.append(msg)
    return msgs


class FrameReader:
    """Incremental decoder for a byte stream arriving in chunks."""

    def __init__(self):
        self.buf = bytearray()
        self.consumed = 0  # stream offset of buf[0]

    def feed(self, data):
        self.buf += data

    def next(self):
        """Return the next complete message or None."""
        try:
            msg, end = decode_frame(self.buf, 0)
        except NeedMoreData:
            return None
        except ProtocolError as exc:
            raise ProtocolError(self.consumed + exc.offset, str(exc).split(": ", 1)[1]) from None
        del self.buf[:end]
        self.consumed += end
        return msg
