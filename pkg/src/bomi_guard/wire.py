"""Wire protocol for class-load events, doubling as the trace file format.

A request frame is::

    u32 name_len (big-endian) | name UTF-8 | u32 class_len | class bytes

and a response is two bytes: status (0x00 ALLOW, 0x01 DENY) then reason
(0x00 none, 0x01 NOT_ALLOWLISTED, 0x02 TAMPERED).  A ``.bomitrc`` trace file
is the 8-byte magic ``BOMITRC1`` followed by concatenated request frames.

Length caps keep a hostile peer from making the reader balloon: names to
64 KiB, class bodies to 64 MiB.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Iterator

__all__ = (
    "TRACE_MAGIC",
    "STATUS_ALLOW",
    "STATUS_DENY",
    "REASON_NONE",
    "REASON_NOT_ALLOWLISTED",
    "REASON_TAMPERED",
    "MAX_NAME_LEN",
    "MAX_CLASS_LEN",
    "FrameError",
    "TraceCorrupt",
    "encode_frame",
    "read_frame",
    "encode_response",
    "decode_response",
    "write_trace",
    "read_trace",
)

TRACE_MAGIC = b"BOMITRC1"

STATUS_ALLOW = 0x00
STATUS_DENY = 0x01

REASON_NONE = 0x00
REASON_NOT_ALLOWLISTED = 0x01
REASON_TAMPERED = 0x02

MAX_NAME_LEN = 1 << 16
MAX_CLASS_LEN = 1 << 26


class FrameError(ValueError):
    def __init__(self, offset: int, detail: str):
        self.offset = offset
        super().__init__(f"{detail} at offset {offset}")


class TraceCorrupt(FrameError):
    pass


def encode_frame(name: str, data: bytes) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > MAX_NAME_LEN:
        raise FrameError(0, "name too long")
    if len(data) > MAX_CLASS_LEN:
        raise FrameError(0, "class body too long")
    return struct.pack(">I", len(raw)) + raw + struct.pack(">I", len(data)) + data


def _read_exactly(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO, offset: int = 0,
               error: type[FrameError] = FrameError) -> tuple[str, bytes] | None:
    """Read one frame; None at a clean end-of-stream.  ``offset`` is only
    used to report positions in errors (useful for trace files)."""
    header = _read_exactly(stream, 4)
    if not header:
        return None
    if len(header) < 4:
        raise error(offset, "truncated name length")
    (name_len,) = struct.unpack(">I", header)
    if name_len > MAX_NAME_LEN:
        raise error(offset, f"name length {name_len} over cap")
    raw_name = _read_exactly(stream, name_len)
    if len(raw_name) < name_len:
        raise error(offset + 4, "truncated name")
    try:
        name = raw_name.decode("utf-8")
    except UnicodeDecodeError:
        raise error(offset + 4, "name is not UTF-8") from None
    size_field = _read_exactly(stream, 4)
    if len(size_field) < 4:
        raise error(offset + 4 + name_len, "truncated class length")
    (class_len,) = struct.unpack(">I", size_field)
    if class_len > MAX_CLASS_LEN:
        raise error(offset + 4 + name_len, f"class length {class_len} over cap")
    data = _read_exactly(stream, class_len)
    if len(data) < class_len:
        raise error(offset + 8 + name_len, "truncated class body")
    return name, data


def encode_response(status: int, reason: int) -> bytes:
    return bytes((status, reason))


def decode_response(raw: bytes) -> tuple[int, int]:
    if len(raw) != 2:
        raise FrameError(0, "response is not two bytes")
    return raw[0], raw[1]


def write_trace(fp: BinaryIO, events: Iterable[tuple[str, bytes]]) -> None:
    fp.write(TRACE_MAGIC)
    for name, data in events:
        fp.write(encode_frame(name, data))


def read_trace(fp: BinaryIO) -> Iterator[tuple[int, str, bytes]]:
    """Yield (seq, name, class bytes) with seq starting at 1."""
    magic = _read_exactly(fp, len(TRACE_MAGIC))
    if magic != TRACE_MAGIC:
        raise TraceCorrupt(0, "missing trace magic")
    offset = len(TRACE_MAGIC)
    seq = 0
    while True:
        frame = read_frame(fp, offset, TraceCorrupt)
        if frame is None:
            return
        name, data = frame
        seq += 1
        offset += 8 + len(name.encode("utf-8")) + len(data)
        yield seq, name, data
