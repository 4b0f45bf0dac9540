"""MAC frame formats, air times, duration-field accounting and identity metadata."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

from .kernel import NS_PER_S, SimTime


class FrameKind(IntEnum):
    RTS = 0
    CTS = 1
    SCH_RTS = 2
    SCH_CTS = 3
    DATA = 4
    ACK = 5

    @property
    def is_sch(self) -> bool:
        return self in (FrameKind.SCH_RTS, FrameKind.SCH_CTS)

    @property
    def is_control(self) -> bool:
        return self != FrameKind.DATA


@dataclass
class MacParams:
    """Protocol timing and size constants; defaults follow the evaluated setup."""

    slot_us: int = 20
    difs_us: int = 50
    sifs_us: int = 10
    aifs_us: int = 20
    cw_min: int = 15
    cw_max: int = 1023
    short_retry_limit: int = 7
    long_retry_limit: int = 4
    data_rate_bps: int = 1_000_000  # per beam
    rts_bytes: int = 20
    cts_bytes: int = 14
    ack_bytes: int = 14
    data_bytes: int = 512
    # MAC overhead added to data payloads on the air; control frames are
    # already full frames at the sizes above.  Set to 0 to count the payload
    # alone as airtime.
    data_header_bytes: int = 28
    # Extra deference after a node completes its own transmission cycle, so
    # its receiver (and scheduled neighbors) win the channel next.  Must
    # exceed the peer's RTS flight plus response turnaround; DIFS + 9 slots
    # covers every sub-3 km layout.
    role_yield_us: int = 230
    # Reach of the radio used for timeout margins (two-way propagation).
    max_range_m: float = 3_000.0

    def __post_init__(self):
        if not (self.sifs_us < self.aifs_us < self.difs_us):
            raise ValueError(
                f"interframe spacing must satisfy SIFS < AIFS < DIFS, got "
                f"{self.sifs_us}/{self.aifs_us}/{self.difs_us}"
            )

    @property
    def slot_ns(self) -> SimTime:
        return self.slot_us * 1_000

    @property
    def difs_ns(self) -> SimTime:
        return self.difs_us * 1_000

    @property
    def sifs_ns(self) -> SimTime:
        return self.sifs_us * 1_000

    @property
    def aifs_ns(self) -> SimTime:
        return self.aifs_us * 1_000

    @property
    def eifs_ns(self) -> SimTime:
        # Extended spacing after a garbled reception: SIFS + ACK airtime + DIFS.
        return self.sifs_ns + tx_duration(self.ack_bytes, self.data_rate_bps) + self.difs_ns

    def size_for(self, kind: FrameKind) -> int:
        return {
            FrameKind.RTS: self.rts_bytes,
            FrameKind.SCH_RTS: self.rts_bytes,
            FrameKind.CTS: self.cts_bytes,
            FrameKind.SCH_CTS: self.cts_bytes,
            FrameKind.ACK: self.ack_bytes,
            FrameKind.DATA: self.data_bytes,
        }[kind]


@dataclass
class Frame:
    """One MAC-layer frame; value semantics, copied rather than shared."""

    kind: FrameKind
    tx_addr: int
    rx_addr: int
    final_dest_addr: int
    duration_ns: SimTime = 0
    size_bytes: int = 0
    seq_no: int = 0
    tree_id: int = 0
    short_retry_count: int = 0
    long_retry_count: int = 0
    queue_index: int = 1
    antenna_index: int = -1  # arrival beam, filled in by the receiver PHY
    created_at: SimTime = 0

    def copy(self) -> "Frame":
        return replace(self)


def tx_duration(size_bytes: int, rate_bps: int) -> SimTime:
    """Airtime of size_bytes at rate_bps, exact in integer nanoseconds."""
    if rate_bps <= 0:
        raise ValueError("data rate must be positive")
    bits = size_bytes * 8
    return (bits * NS_PER_S + rate_bps // 2) // rate_bps


def air_bytes(kind: FrameKind, size_bytes: int, params: MacParams) -> int:
    """On-air size: data frames carry the MAC header, control frames do not."""
    if kind == FrameKind.DATA:
        return size_bytes + params.data_header_bytes
    return size_bytes


def air_time(kind: FrameKind, size_bytes: int, params: MacParams) -> SimTime:
    return tx_duration(air_bytes(kind, size_bytes, params), params.data_rate_bps)


def frame_air_time(frame: Frame, params: MacParams) -> SimTime:
    return air_time(frame.kind, frame.size_bytes, params)


def nav_duration(
    kind: FrameKind,
    params: MacParams,
    rate_bps: Optional[int] = None,
    jump_backoff: bool = False,
) -> SimTime:
    """Duration-field value: virtual-carrier time for the rest of the exchange.

    An RTS (or SCH/RTS) covers CTS + data + ACK with their SIFS gaps, a CTS
    (or SCH/CTS) covers data + ACK, a data frame covers its ACK, and an ACK
    closes the exchange.  A jump-backoff SCH/CTS adds one AIFS so scheduled
    neighbors defer past the receiver's own channel access.
    """
    if rate_bps is None:
        rate_bps = params.data_rate_bps
    sifs = params.sifs_ns
    cts = air_time(FrameKind.CTS, params.cts_bytes, params)
    data = air_time(FrameKind.DATA, params.data_bytes, params)
    ack = air_time(FrameKind.ACK, params.ack_bytes, params)
    if kind in (FrameKind.RTS, FrameKind.SCH_RTS):
        base = 3 * sifs + cts + data + ack
    elif kind in (FrameKind.CTS, FrameKind.SCH_CTS):
        base = 2 * sifs + data + ack
    elif kind == FrameKind.DATA:
        base = sifs + ack
    elif kind == FrameKind.ACK:
        base = 0
    else:  # pragma: no cover - exhaustive
        raise ValueError(f"unknown frame kind {kind}")
    if jump_backoff and kind == FrameKind.SCH_CTS:
        base += params.aifs_ns
    return base


def make_sch(base: Frame) -> Frame:
    """Scheduling twin of an RTS or CTS: same fields, distinct kind tag."""
    if base.kind == FrameKind.RTS:
        out = base.copy()
        out.kind = FrameKind.SCH_RTS
        return out
    if base.kind == FrameKind.CTS:
        out = base.copy()
        out.kind = FrameKind.SCH_CTS
        return out
    raise ValueError(f"only RTS/CTS frames have scheduling twins, got {base.kind.name}")


# Debug wire format: length-prefixed binary records in a stable field order.
_WIRE = struct.Struct(">BqqqqIqqBBBbq")


def encode_frame(frame: Frame) -> bytes:
    body = _WIRE.pack(
        frame.kind,
        frame.tx_addr,
        frame.rx_addr,
        frame.final_dest_addr,
        frame.duration_ns,
        frame.size_bytes,
        frame.seq_no,
        frame.tree_id,
        frame.short_retry_count,
        frame.long_retry_count,
        frame.queue_index,
        frame.antenna_index,
        frame.created_at,
    )
    return struct.pack(">I", len(body)) + body


def decode_frame(blob: bytes) -> tuple[Frame, bytes]:
    """Decode one record, returning the frame and the unconsumed tail."""
    (length,) = struct.unpack_from(">I", blob, 0)
    body = blob[4:4 + length]
    if len(body) != length:
        raise ValueError("truncated frame record")
    fields = _WIRE.unpack(body)
    frame = Frame(
        kind=FrameKind(fields[0]),
        tx_addr=fields[1],
        rx_addr=fields[2],
        final_dest_addr=fields[3],
        duration_ns=fields[4],
        size_bytes=fields[5],
        seq_no=fields[6],
        tree_id=fields[7],
        short_retry_count=fields[8],
        long_retry_count=fields[9],
        queue_index=fields[10],
        antenna_index=fields[11],
        created_at=fields[12],
    )
    return frame, blob[4 + length:]
