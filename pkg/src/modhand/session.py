"""Session records: append-only capture of raw telemetry frames.

A session record is the flight recorder for one coordinator run.  Every
valid frame the coordinator receives is stored verbatim together with
its arrival time, after a small header that snapshots the hand
configuration.  Replays re-emit the stored frames with their original
relative timing (optionally scaled), and decode to exactly the same
message sequence — byte-identical frames in, byte-identical frames out.

Byte layout (all integers little-endian):

========== ======= ====================================================
offset     size    field
========== ======= ====================================================
0          4       magic ``MHSR``
4          1       record format version (currently 1)
5          1       wire protocol version the frames use
6          8       start time, microseconds (u64)
14         4       config snapshot length N (u32)
18         N       config snapshot, UTF-8 text (may be empty)
--         --      then zero or more entries:
+0         8       arrival time, microseconds (u64, non-decreasing)
+8         4       frame length L (u32)
+12        L       raw frame bytes, exactly as received
========== ======= ====================================================

Structural damage (bad magic, truncated entry, non-monotone arrivals)
raises :class:`~modhand.errors.SessionFormatError`; when the damage is
inside the entry list the error names the frame index.  Frame *content*
is not validated on read — :func:`decode_entries` does that on demand,
again naming the offending index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable

from modhand.clock import Clock
from modhand.errors import SessionFormatError
from modhand.protocol import VERSION as PROTOCOL_VERSION
from modhand.protocol import DecodedMessage, decode

__all__ = [
    "FORMAT_VERSION",
    "SessionEntry",
    "SessionRecord",
    "SessionWriter",
    "read_session",
    "decode_entries",
    "replay_schedule",
    "replay",
]

MAGIC = b"MHSR"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sBBQI")
_ENTRY = struct.Struct("<QI")


@dataclass(frozen=True)
class SessionEntry:
    """One recorded frame and when it arrived."""

    arrival_us: int
    frame: bytes


@dataclass(frozen=True)
class SessionRecord:
    """A fully loaded session file."""

    format_version: int
    protocol_version: int
    start_time_us: int
    config_text: str
    entries: tuple[SessionEntry, ...]

    def duration_us(self) -> int:
        if not self.entries:
            return 0
        return self.entries[-1].arrival_us - self.entries[0].arrival_us


class SessionWriter:
    """Streams a session record to a binary sink.

    Accepts a path or any binary file object.  Entries must arrive in
    non-decreasing time order; violations raise ValueError immediately
    rather than corrupting the file.
    """

    def __init__(
        self,
        sink: str | Path | BinaryIO,
        start_time_us: int,
        config_text: str = "",
        protocol_version: int = PROTOCOL_VERSION,
    ):
        if isinstance(sink, (str, Path)):
            self._file: BinaryIO = open(sink, "wb")
            self._owns_file = True
        else:
            self._file = sink
            self._owns_file = False
        self._last_arrival_us: int | None = None
        self.frames_written = 0
        snapshot = config_text.encode("utf-8")
        self._file.write(
            _HEADER.pack(
                MAGIC, FORMAT_VERSION, protocol_version, start_time_us, len(snapshot)
            )
        )
        self._file.write(snapshot)

    def append(self, arrival_us: int, frame: bytes) -> None:
        if self._last_arrival_us is not None and arrival_us < self._last_arrival_us:
            raise ValueError(
                f"arrival timestamps must be non-decreasing "
                f"({arrival_us} after {self._last_arrival_us})"
            )
        self._last_arrival_us = arrival_us
        self._file.write(_ENTRY.pack(arrival_us, len(frame)))
        self._file.write(frame)
        self.frames_written += 1

    def close(self) -> None:
        if self._owns_file and not self._file.closed:
            self._file.close()
        elif not self._owns_file:
            self._file.flush()

    def __enter__(self) -> "SessionWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def read_session(source: str | Path | bytes | BinaryIO) -> SessionRecord:
    """Load and structurally validate a session record."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()

    if len(data) < _HEADER.size:
        raise SessionFormatError("session record truncated before header")
    magic, fmt, proto, start_us, config_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SessionFormatError(f"bad session magic {magic!r}")
    if fmt != FORMAT_VERSION:
        raise SessionFormatError(f"unsupported session format version {fmt}")
    offset = _HEADER.size
    if len(data) < offset + config_len:
        raise SessionFormatError("session record truncated inside config snapshot")
    try:
        config_text = data[offset : offset + config_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SessionFormatError(f"config snapshot is not valid UTF-8: {exc}") from exc
    offset += config_len

    entries: list[SessionEntry] = []
    last_arrival: int | None = None
    index = 0
    while offset < len(data):
        if offset + _ENTRY.size > len(data):
            raise SessionFormatError(
                f"frame {index}: truncated entry header", frame_index=index
            )
        arrival_us, length = _ENTRY.unpack_from(data, offset)
        offset += _ENTRY.size
        if offset + length > len(data):
            raise SessionFormatError(
                f"frame {index}: truncated frame body "
                f"(want {length} bytes, have {len(data) - offset})",
                frame_index=index,
            )
        if last_arrival is not None and arrival_us < last_arrival:
            raise SessionFormatError(
                f"frame {index}: arrival timestamp went backwards",
                frame_index=index,
            )
        last_arrival = arrival_us
        entries.append(SessionEntry(arrival_us, bytes(data[offset : offset + length])))
        offset += length
        index += 1

    return SessionRecord(
        format_version=fmt,
        protocol_version=proto,
        start_time_us=start_us,
        config_text=config_text,
        entries=tuple(entries),
    )


def decode_entries(record: SessionRecord) -> list[DecodedMessage]:
    """Decode every stored frame, or fail naming the bad frame's index."""
    if record.protocol_version != PROTOCOL_VERSION:
        raise SessionFormatError(
            f"record uses protocol version {record.protocol_version}, "
            f"this build speaks {PROTOCOL_VERSION}"
        )
    messages: list[DecodedMessage] = []
    for index, entry in enumerate(record.entries):
        result = decode(entry.frame)
        if not isinstance(result, DecodedMessage):
            raise SessionFormatError(
                f"frame {index}: {result.kind} ({result.detail or 'undecodable'})",
                frame_index=index,
            )
        messages.append(result)
    return messages


def replay_schedule(
    record: SessionRecord, speed: float = 1.0
) -> list[tuple[int, bytes]]:
    """(emit_offset_us, frame) pairs with relative timing scaled by 1/speed.

    Offsets are relative to the replay start; the first frame emits at
    offset 0.  An empty record yields an empty schedule.
    """
    if speed <= 0.0:
        raise ValueError("replay speed must be > 0")
    if not record.entries:
        return []
    first = record.entries[0].arrival_us
    return [
        (round((entry.arrival_us - first) / speed), entry.frame)
        for entry in record.entries
    ]


def replay(
    record: SessionRecord,
    emit: Callable[[bytes], None],
    clock: Clock,
    speed: float = 1.0,
) -> int:
    """Re-emit the record against a clock; returns frames emitted.

    Each frame is handed to ``emit`` once the clock passes its scheduled
    offset, preserving the original inter-frame gaps scaled by 1/speed.
    """
    start = clock.now_us()
    count = 0
    for offset_us, frame in replay_schedule(record, speed):
        clock.sleep_until_us(start + offset_us)
        emit(frame)
        count += 1
    return count
