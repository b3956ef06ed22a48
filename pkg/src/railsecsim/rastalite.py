"""Simplified RaSTA-style safety transport.

Frames carry a network id, sequence numbers, a timestamp, and a CRC-32
safety code over the canonical serialization; every frame is sent over all
up channels of the conduit and deduplicated at the receiver. Acceptance is
in-order only: a frame whose seq is not above the highest accepted one is
discarded, which together with per-channel FIFO delivery keeps accepted
sequence numbers strictly increasing per connection.

Wire format (all integers big-endian):

    u32 network_id
    u16 sender_len    | sender (utf-8)
    u16 receiver_len  | receiver (utf-8)
    u16 kind_len      | kind (utf-8)
    u64 seq
    u64 ack_seq
    u64 timestamp_ms
    u32 payload_len   | payload
    u32 safety_code          (CRC-32 over everything above)

Deserialization consumes the buffer exactly; any leftover or truncation is
treated as an integrity failure, so every single-bit corruption of the wire
bytes is detected (CRC for in-place flips, strict framing for length-field
flips).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

DEDUP_WINDOW = 1024


class WireFormatError(Exception):
    pass


def crc32_ieee(data: bytes) -> int:
    """CRC-32, IEEE 802.3 polynomial, standard init and final XOR."""
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass
class Frame:
    network_id: int
    sender: str
    receiver: str
    kind: str
    seq: int
    ack_seq: int
    timestamp: int
    payload: bytes
    safety_code: int = 0

    def serialize_body(self) -> bytes:
        sender = self.sender.encode()
        receiver = self.receiver.encode()
        kind = self.kind.encode()
        return b"".join([
            struct.pack(">I", self.network_id),
            struct.pack(">H", len(sender)), sender,
            struct.pack(">H", len(receiver)), receiver,
            struct.pack(">H", len(kind)), kind,
            struct.pack(">QQQ", self.seq, self.ack_seq, self.timestamp),
            struct.pack(">I", len(self.payload)), self.payload,
        ])

    def serialize(self) -> bytes:
        return self.serialize_body() + struct.pack(">I", self.safety_code)

    def summary(self) -> dict:
        return {
            "sender": self.sender,
            "receiver": self.receiver,
            "kind": self.kind,
            "seq": self.seq,
            "network_id": self.network_id,
        }


def compute_safety_code(frame: Frame) -> int:
    return crc32_ieee(frame.serialize_body())


def seal(frame: Frame) -> Frame:
    frame.safety_code = compute_safety_code(frame)
    return frame


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireFormatError("truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


def deserialize(data: bytes) -> Frame:
    r = _Reader(data)
    network_id = r.u32()
    try:
        sender = r.take(r.u16()).decode()
        receiver = r.take(r.u16()).decode()
        kind = r.take(r.u16()).decode()
    except UnicodeDecodeError as exc:
        raise WireFormatError("bad utf-8") from exc
    seq = r.u64()
    ack_seq = r.u64()
    timestamp = r.u64()
    payload = r.take(r.u32())
    safety_code = r.u32()
    if not r.done():
        raise WireFormatError("trailing bytes")
    return Frame(network_id, sender, receiver, kind, seq, ack_seq, timestamp, payload, safety_code)


class ReceiveStatus(str, Enum):
    ACCEPT = "Accept"
    DUPLICATE_DISCARD = "DuplicateDiscard"
    INTEGRITY_FAIL = "IntegrityFail"
    WRONG_NETWORK = "WrongNetwork"
    STALE_SEQ = "StaleSeq"


@dataclass
class ReceiveResult:
    status: ReceiveStatus
    frame: Optional[Frame] = None


@dataclass
class Connection:
    """One endpoint's transport state for a peer-to-peer association."""

    local: str
    remote: str
    network_id: int
    next_seq: int = 1
    highest_accepted_seq: int = 0
    window: set = field(default_factory=set)
    stats: dict = field(default_factory=lambda: {
        "sent": 0, "accepted": 0, "duplicate": 0, "integrity_fail": 0,
        "wrong_network": 0, "stale": 0,
    })

    def build_frame(self, kind: str, payload: bytes, now: int) -> Frame:
        frame = Frame(
            network_id=self.network_id,
            sender=self.local,
            receiver=self.remote,
            kind=kind,
            seq=self.next_seq,
            ack_seq=self.highest_accepted_seq,
            timestamp=now,
            payload=payload,
        )
        self.next_seq += 1
        self.stats["sent"] += 1
        return seal(frame)


class AllChannelsDownError(Exception):
    pass


@dataclass
class Channel:
    index: int
    latency_ms: int = 10
    jitter_ms: int = 5
    loss: float = 0.0
    up: bool = True
    rng: object = None
    lost_count: int = 0
    congestion: list = field(default_factory=list)  # (start, end, extra_ms)
    _last_delivery: dict = field(default_factory=dict)

    def congestion_extra(self, now: int) -> int:
        extra = 0
        for start, end, ms in self.congestion:
            if start <= now < end:
                extra = max(extra, ms)
        return extra

    def plan_delivery(self, now: int, dest: str) -> Optional[int]:
        """Delivery instant for a frame handed over at `now`, or None if lost.

        FIFO per destination: a frame never overtakes an earlier one on the
        same channel. A flood saturating the channel shows up as a congestion
        window adding a fixed transit delay.
        """
        jitter = 0
        if self.jitter_ms > 0 and self.rng is not None:
            jitter = self.rng.randint(-self.jitter_ms, self.jitter_ms)
        if self.loss > 0 and self.rng is not None and self.rng.random() < self.loss:
            self.lost_count += 1
            return None
        at = now + max(0, self.latency_ms + jitter) + self.congestion_extra(now)
        at = max(at, self._last_delivery.get(dest, 0))
        self._last_delivery[dest] = at
        return at


@dataclass
class ChannelSet:
    channels: list[Channel]

    def up_channels(self) -> list[Channel]:
        return [c for c in self.channels if c.up]


@dataclass
class SendResult:
    frame: Frame
    deliveries: list  # (channel_index, deliver_at)
    all_channels_down: bool


def send(conn: Connection, channels: ChannelSet, kind: str, payload: bytes, now: int) -> SendResult:
    """Build, seal, and fan the frame out over every up channel.

    Even with all channels down the frame counts as issued; the caller's
    availability metric picks the miss up.
    """
    frame = conn.build_frame(kind, payload, now)
    ups = channels.up_channels()
    deliveries = []
    for channel in ups:
        at = channel.plan_delivery(now, conn.remote)
        if at is not None:
            deliveries.append((channel.index, at))
    return SendResult(frame, deliveries, all_channels_down=not ups)


def receive(conn: Connection, frame: Frame) -> ReceiveResult:
    """Verify safety code, network id, then sequence freshness, in that order."""
    if compute_safety_code(frame) != frame.safety_code:
        conn.stats["integrity_fail"] += 1
        return ReceiveResult(ReceiveStatus.INTEGRITY_FAIL)
    if frame.network_id != conn.network_id:
        conn.stats["wrong_network"] += 1
        return ReceiveResult(ReceiveStatus.WRONG_NETWORK)
    if frame.seq > conn.highest_accepted_seq:
        conn.highest_accepted_seq = frame.seq
        conn.window.add(frame.seq)
        floor = frame.seq - DEDUP_WINDOW
        if len(conn.window) > DEDUP_WINDOW:
            conn.window = {s for s in conn.window if s > floor}
        conn.stats["accepted"] += 1
        return ReceiveResult(ReceiveStatus.ACCEPT, frame)
    if frame.seq in conn.window:
        conn.stats["duplicate"] += 1
        return ReceiveResult(ReceiveStatus.DUPLICATE_DISCARD)
    conn.stats["stale"] += 1
    return ReceiveResult(ReceiveStatus.STALE_SEQ)


def receive_wire(conn: Connection, data: bytes) -> ReceiveResult:
    """Wire-level receive: unparseable bytes are integrity failures."""
    try:
        frame = deserialize(data)
    except WireFormatError:
        conn.stats["integrity_fail"] += 1
        return ReceiveResult(ReceiveStatus.INTEGRITY_FAIL)
    return receive(conn, frame)
