"""Protocol messages, node identities, and clock-quality descriptors.

Everything here is a plain value type plus a bit-exact binary codec for the
Follow_Up (FUP) message, so the synchronization engine can later be backed by
a real transport.  All integers on the wire are big-endian.

FUP frame layout::

    magic   0x444F ("DO")          2 B
    version 0x01                   1 B
    sender                         6 B
    seq                            4 B   (u32, trace correlation only)
    e       error estimate         8 B   (i64, nanoseconds)
    sq      source clock quality  12 B   (u8 u8 u8 u16 u8 + 6 B identity)
    record_count                   1 B
    records, each:
        ap                         6 B
        tsf                        8 B   (u64, microseconds)
        t                          8 B   (i64, nanoseconds)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAGIC = 0x444F
VERSION = 0x01

_HEADER = struct.Struct(">HB6sIqBBBHB6sB")
_RECORD = struct.Struct(">6sQq")

HEADER_SIZE = _HEADER.size  # 34
RECORD_SIZE = _RECORD.size  # 22
MAX_RECORDS = 255

# Carried error estimates are saturated here instead of using an unencodable
# infinity (roughly 11.5 days -- far worse than any usable clock source).
ERROR_CEILING_NS = 10**15


class WireError(Exception):
    """Base class for codec failures."""


class EncodeError(WireError):
    def __init__(self, fld: str, message: str):
        super().__init__(f"cannot encode FUP ({fld}): {message}")
        self.field = fld


class DecodeError(WireError):
    def __init__(self, fld: str, message: str):
        super().__init__(f"cannot decode FUP ({fld}): {message}")
        self.field = fld


@dataclass(frozen=True, order=True)
class NodeId:
    """6-byte node identifier with MAC-address semantics.

    Totally ordered by lexicographic byte comparison; unique per node in a
    scenario.
    """

    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 6:
            raise ValueError(f"NodeId needs exactly 6 octets, got {len(self.octets)}")

    @classmethod
    def from_hex(cls, text: str) -> "NodeId":
        cleaned = text.replace(":", "").replace("-", "").strip().lower()
        if len(cleaned) != 12:
            raise ValueError(f"node id must be 12 hex digits, got {text!r}")
        return cls(bytes.fromhex(cleaned))

    def hex(self) -> str:
        return self.octets.hex()

    def __str__(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"NodeId({self.hex()})"


class Ordering(enum.Enum):
    BETTER = -1
    EQUAL = 0
    WORSE = 1


@dataclass(frozen=True, order=True)
class ClockQuality:
    """Lexicographically ordered clock descriptor; lower compares as better.

    Field order matters: comparison runs over (priority1, clock_class,
    accuracy, variance, priority2, identity) in that sequence, so two
    descriptors from distinct nodes never compare equal.
    """

    priority1: int
    clock_class: int
    accuracy: int
    variance: int
    priority2: int
    identity: NodeId

    def __post_init__(self):
        for name, width in (
            ("priority1", 8),
            ("clock_class", 8),
            ("accuracy", 8),
            ("variance", 16),
            ("priority2", 8),
        ):
            value = getattr(self, name)
            if not 0 <= value < (1 << width):
                raise ValueError(f"{name}={value} outside u{width} range")

    @property
    def is_infinite(self) -> bool:
        return self == INFINITE_QUALITY

    def __str__(self) -> str:
        return (
            f"{self.priority1}.{self.clock_class}.{self.accuracy}."
            f"{self.variance}.{self.priority2}.{self.identity.hex()}"
        )


# Reserved "worst possible" descriptor used for pure slave clocks; encoded as
# all-ones in every field so it sorts after every finite descriptor.
INFINITE_QUALITY = ClockQuality(0xFF, 0xFF, 0xFF, 0xFFFF, 0xFF, NodeId(b"\xff" * 6))


def compare_quality(a: ClockQuality, b: ClockQuality) -> Ordering:
    """Three-way quality comparison: is `a` better, equal, or worse than `b`?"""
    if a == b:
        return Ordering.EQUAL
    return Ordering.BETTER if a < b else Ordering.WORSE


@dataclass(frozen=True)
class Beacon:
    """One on-air beacon instance: originating AP plus its TSF counter value."""

    ap: NodeId
    tsf: int  # microseconds, u64

    def __post_init__(self):
        if not 0 <= self.tsf < (1 << 64):
            raise ValueError(f"tsf={self.tsf} outside u64 range")


@dataclass(frozen=True)
class BeaconRecord:
    """A logged beacon: (ap, tsf) identifies the instance, t_ns is the precise
    local arrival timestamp in the logger's own time base."""

    ap: NodeId
    tsf: int  # microseconds, u64
    t_ns: int  # nanoseconds, i64, local clock at arrival

    def __post_init__(self):
        if not 0 <= self.tsf < (1 << 64):
            raise ValueError(f"tsf={self.tsf} outside u64 range")
        if not -(1 << 63) <= self.t_ns < (1 << 63):
            raise ValueError(f"t_ns={self.t_ns} outside i64 range")


@dataclass(frozen=True)
class FupMessage:
    """Master-side broadcast carrying recent beacon records, the sender's own
    error estimate (nanoseconds), and the source clock quality it follows."""

    sender: NodeId
    seq: int
    records: tuple[BeaconRecord, ...]
    error_ns: int
    quality: ClockQuality

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))


def _check_records(records: tuple[BeaconRecord, ...], err) -> None:
    if not records:
        raise err("records", "a FUP must carry at least one record")
    if len(records) > MAX_RECORDS:
        raise err("record_count", f"{len(records)} records exceed limit {MAX_RECORDS}")
    for prev, cur in zip(records, records[1:]):
        if cur.t_ns < prev.t_ns:
            raise err("records", "records must be sorted by ascending t")


def encode_fup(msg: FupMessage) -> bytes:
    """Serialize a FUP message; inverse of :func:`decode_fup`."""
    _check_records(msg.records, EncodeError)
    if not 0 <= msg.seq < (1 << 32):
        raise EncodeError("seq", f"{msg.seq} outside u32 range")
    if not -(1 << 63) <= msg.error_ns < (1 << 63):
        raise EncodeError("e", f"{msg.error_ns} outside i64 range")
    q = msg.quality
    out = bytearray(
        _HEADER.pack(
            MAGIC,
            VERSION,
            msg.sender.octets,
            msg.seq,
            msg.error_ns,
            q.priority1,
            q.clock_class,
            q.accuracy,
            q.variance,
            q.priority2,
            q.identity.octets,
            len(msg.records),
        )
    )
    for rec in msg.records:
        out += _RECORD.pack(rec.ap.octets, rec.tsf, rec.t_ns)
    return bytes(out)


def decode_fup(data: bytes) -> FupMessage:
    """Parse a FUP frame, naming the offending field on failure."""
    if len(data) < HEADER_SIZE:
        raise DecodeError("header", f"need {HEADER_SIZE} bytes, got {len(data)}")
    (
        magic,
        version,
        sender,
        seq,
        error_ns,
        priority1,
        clock_class,
        accuracy,
        variance,
        priority2,
        identity,
        count,
    ) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DecodeError("magic", f"expected {MAGIC:#06x}, got {magic:#06x}")
    if version != VERSION:
        raise DecodeError("version", f"unsupported version {version}")
    expected = HEADER_SIZE + count * RECORD_SIZE
    if len(data) < expected:
        raise DecodeError(
            "records", f"{count} records need {expected} bytes, got {len(data)}"
        )
    if len(data) > expected:
        raise DecodeError("length", f"{len(data) - expected} trailing bytes")
    records = []
    for i in range(count):
        ap, tsf, t_ns = _RECORD.unpack_from(data, HEADER_SIZE + i * RECORD_SIZE)
        records.append(BeaconRecord(NodeId(ap), tsf, t_ns))
    msg = FupMessage(
        sender=NodeId(sender),
        seq=seq,
        records=tuple(records),
        error_ns=error_ns,
        quality=ClockQuality(
            priority1, clock_class, accuracy, variance, priority2, NodeId(identity)
        ),
    )
    _check_records(msg.records, DecodeError)
    return msg
