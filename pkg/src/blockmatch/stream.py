"""Wire format for detection-event streams plus latency instrumentation.

A stream is a fixed header followed by bit-packed per-cycle frames.  Each
frame holds one bit per detector of the cycle, LSB-first within each byte,
padding bits zero.  A frame of all 0xFF bytes is followed by one guard
byte: 0x00 marks the end of an open-ended shot, 0x01 says the frame was
ordinary data that happened to be all ones (only possible when the frame
has no padding bits).  Bounded shots carry exactly ``cycles_per_shot``
frames each; a terminator guard inside one is a format error.
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass

import numpy as np

MAGIC = b"DETSTRM1"
VERSION = 1
_HEADER = struct.Struct("<8sHIHQ")
HEADER_SIZE = _HEADER.size

TERMINATOR_GUARD = 0x00
DATA_GUARD = 0x01


class StreamFormatError(ValueError):
    """Malformed stream bytes; the message names the byte offset."""


@dataclass(frozen=True)
class StreamHeader:
    detectors_per_cycle: int
    observables: int
    cycles_per_shot: int  # 0 = open-ended, shots end at the terminator
    version: int = VERSION

    @property
    def frame_bytes(self) -> int:
        return (self.detectors_per_cycle + 7) // 8

    @property
    def unbounded(self) -> bool:
        return self.cycles_per_shot == 0

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.version, self.detectors_per_cycle, self.observables, self.cycles_per_shot
        )


def read_header(f) -> StreamHeader:
    raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise StreamFormatError(f"truncated header: got {len(raw)} of {HEADER_SIZE} bytes")
    magic, version, dpc, obs, cps = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise StreamFormatError(f"unsupported version {version} at byte 8")
    if dpc == 0:
        raise StreamFormatError("detectors_per_cycle must be positive (byte 10)")
    return StreamHeader(dpc, obs, cps, version)


# Single-byte frames are the common case for narrow codes and sit on the
# per-cycle hot path, so both directions go through small lookup tables.
_FIRED_BY_BYTE = [[j for j in range(8) if value >> j & 1] for value in range(256)]


def pack_frame(header: StreamHeader, fired) -> bytes:
    """Bit-pack one cycle's fired cycle-local detector indices."""
    dpc = header.detectors_per_cycle
    if header.frame_bytes == 1:
        value = 0
        for j in fired:
            if not 0 <= j < dpc:
                raise ValueError(f"detector {j} outside cycle of {dpc}")
            value |= 1 << j
        return value.to_bytes(1, "little")
    bits = np.zeros(header.frame_bytes * 8, dtype=np.uint8)
    for j in fired:
        if not 0 <= j < dpc:
            raise ValueError(f"detector {j} outside cycle of {dpc}")
        bits[j] = 1
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_frame(header: StreamHeader, raw: bytes) -> list[int]:
    dpc = header.detectors_per_cycle
    if header.frame_bytes == 1:
        value = raw[0]
        if value >> dpc:
            raise StreamFormatError("nonzero padding bits in frame")
        return _FIRED_BY_BYTE[value]
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    if np.any(bits[dpc:]):
        raise StreamFormatError("nonzero padding bits in frame")
    return np.nonzero(bits[:dpc])[0].tolist()


class StreamWriter:
    """Writes the header up front, then frames shot by shot."""

    def __init__(self, f, header: StreamHeader, write_header: bool = True):
        self.f = f
        self.header = header
        self._all_ones = b"\xff" * header.frame_bytes
        if write_header:
            f.write(header.pack())

    def write_cycle(self, fired) -> None:
        raw = pack_frame(self.header, fired)
        self.f.write(raw)
        if raw == self._all_ones:
            self.f.write(bytes([DATA_GUARD]))

    def write_shot(self, cycles_fired) -> None:
        n = 0
        for fired in cycles_fired:
            self.write_cycle(fired)
            n += 1
        if self.header.unbounded:
            self.f.write(self._all_ones)
            self.f.write(bytes([TERMINATOR_GUARD]))
        elif n != self.header.cycles_per_shot:
            raise ValueError(f"shot has {n} cycles, header says {self.header.cycles_per_shot}")


class StreamReader:
    """Iterates shots; each shot is a generator of per-cycle fired lists."""

    def __init__(self, f, header: StreamHeader | None = None):
        self.f = f
        self.offset = 0
        if header is None:
            header = read_header(f)
            self.offset = HEADER_SIZE
        self.header = header
        self._all_ones = b"\xff" * header.frame_bytes

    def _read_exact(self, n: int, what: str) -> bytes | None:
        raw = self.f.read(n)
        if not raw:
            return None
        if len(raw) < n:
            raise StreamFormatError(
                f"truncated {what} at byte {self.offset}: got {len(raw)} of {n} bytes"
            )
        self.offset += n
        return raw

    def _next_frame(self):
        """One frame's fired list, "terminator", or None at clean EOF."""
        raw = self._read_exact(self.header.frame_bytes, "frame")
        if raw is None:
            return None
        if raw == self._all_ones:
            at = self.offset
            guard = self._read_exact(1, "guard byte")
            if guard is None:
                raise StreamFormatError(f"missing guard byte after all-ones frame at byte {at}")
            if guard[0] == TERMINATOR_GUARD:
                if not self.header.unbounded:
                    raise StreamFormatError(f"terminator inside a bounded shot at byte {at}")
                return "terminator"
            if guard[0] != DATA_GUARD:
                raise StreamFormatError(f"bad guard byte {guard[0]:#04x} at byte {at}")
        try:
            return unpack_frame(self.header, raw)
        except StreamFormatError as exc:
            raise StreamFormatError(f"{exc} (frame ending at byte {self.offset})") from None

    def shot_cycles(self):
        """Generator of per-cycle fired lists for one shot; None if at EOF."""
        first = self._next_frame()
        if first is None:
            return None
        if first == "terminator":
            raise StreamFormatError(f"empty shot: terminator at byte {self.offset}")

        def gen():
            item = first
            count = 0
            while True:
                if item == "terminator":
                    return
                yield item
                count += 1
                if not self.header.unbounded and count == self.header.cycles_per_shot:
                    return
                item = self._next_frame()
                if item is None:
                    if self.header.unbounded:
                        raise StreamFormatError(
                            f"stream ended without terminator at byte {self.offset}"
                        )
                    raise StreamFormatError(
                        f"stream ended mid-shot at byte {self.offset}: "
                        f"{count} of {self.header.cycles_per_shot} cycles"
                    )

        return gen()

    def __iter__(self):
        while True:
            shot = self.shot_cycles()
            if shot is None:
                return
            yield shot


def read_frames(f):
    """All cycles of the first shot of a stream (convenience reader)."""
    reader = StreamReader(f)
    shot = reader.shot_cycles()
    return [] if shot is None else list(shot)


# ---------------------------------------------------------------------------
# Latency instrumentation


@dataclass(frozen=True)
class LatencyRecord:
    shot_index: int
    block_index: int
    t_block_acquired: int  # monotonic ns
    t_block_done: int
    queue_depth: int = 0

    @property
    def sub_shot_latency_ns(self) -> int:
        return self.t_block_done - self.t_block_acquired


@dataclass(frozen=True)
class ShotLatency:
    shot_index: int
    end_of_shot_latency_ns: int
    t_software_median_ns: float
    t_software_p99_ns: float


@dataclass(frozen=True)
class TimingBudget:
    """Configured I/O and control constants for report arithmetic."""

    t_input_ns: int = 0
    t_output_ns: int = 0
    t_control_ns: int = 0

    def __post_init__(self):
        if min(self.t_input_ns, self.t_output_ns, self.t_control_ns) < 0:
            raise ValueError("timing constants must be non-negative")

    def t_decode_ns(self, t_software_ns: float) -> float:
        return self.t_input_ns + t_software_ns + self.t_output_ns

    def t_react_ns(self, t_software_ns: float) -> float:
        return self.t_decode_ns(t_software_ns) + self.t_control_ns


class MetricsSink:
    """Append-only JSON-lines sink for per-block latency records."""

    def __init__(self, f):
        self.f = f

    def record(self, rec: LatencyRecord) -> None:
        self.f.write(
            json.dumps(
                {
                    "shot": rec.shot_index,
                    "block": rec.block_index,
                    "t_acquired_ns": rec.t_block_acquired,
                    "t_done_ns": rec.t_block_done,
                    "sub_shot_latency_ns": rec.sub_shot_latency_ns,
                    "queue_depth": rec.queue_depth,
                },
                separators=(",", ":"),
            )
            + "\n"
        )


def emit_prediction(prediction, latency: ShotLatency | None = None) -> str:
    """One JSON line per finalized shot; latency fields null when offline."""
    obj = {
        "shot": prediction.shot_index,
        "observables": hex(prediction.observables),
        "heralded": prediction.heralded,
        "end_of_shot_latency_us": (
            None if latency is None else latency.end_of_shot_latency_ns / 1000.0
        ),
        "t_software_median_us": (
            None if latency is None else latency.t_software_median_ns / 1000.0
        ),
    }
    return json.dumps(obj, separators=(",", ":"))


def summarize_shot_latency(shot_index, block_latencies_ns, end_of_shot_ns) -> ShotLatency:
    lat = np.asarray(sorted(block_latencies_ns), dtype=np.float64)
    if lat.size == 0:
        return ShotLatency(shot_index, end_of_shot_ns, 0.0, 0.0)
    return ShotLatency(
        shot_index,
        end_of_shot_ns,
        float(np.median(lat)),
        float(np.percentile(lat, 99)),
    )


def replay(in_f, out_f, rate_cycles_per_second: float, clock=time.monotonic, sleep=time.sleep):
    """Re-send a recorded stream, pacing frames at the given cycle rate.

    The header goes out immediately; each subsequent frame (with any guard
    byte) is released on its schedule.  Returns the number of cycles sent.
    """
    if rate_cycles_per_second <= 0:
        raise ValueError("rate must be positive")
    header = read_header(in_f)
    reader = StreamReader(in_f, header)
    writer = StreamWriter(out_f, header)

    start = clock()
    sent = 0
    for shot in reader:
        for fired in shot:
            due = start + sent / rate_cycles_per_second
            delay = due - clock()
            if delay > 0:
                sleep(delay)
            writer.write_cycle(fired)
            sent += 1
        if header.unbounded:
            out_f.write(writer._all_ones)
            out_f.write(bytes([TERMINATOR_GUARD]))
        if hasattr(out_f, "flush"):
            out_f.flush()
    return sent
