"""Security box: authenticated encryption, filtering, rate limiting, tamper.

Each protected Object Controller gets a box; the Technology Center holds the
termination point, itself a box. Keys are scoped per (conduit, box,
direction) with at most one active key per directed box channel; tamper
revocation is conduit-wide.

Envelope wire format (all integers big-endian):

    u16 key_id_len   | key_id (utf-8)
    u64 counter                          (the nonce, strictly increasing per key)
    u16 sender_len   | sender (utf-8)    \
    u16 receiver_len | receiver (utf-8)   > associated data, authenticated plaintext
    u16 conduit_len  | conduit (utf-8)   /
    u32 ct_len       | ciphertext
    16-byte auth tag

The AEAD is ChaCha20-Poly1305 with nonce = 4 zero bytes || u64 counter; the
associated data is the length-prefixed (sender, receiver, conduit) block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

MAX_COUNTER = 2**64 - 1
TAG_LEN = 16


class RevokedKeyError(Exception):
    pass


class NonceExhaustedError(Exception):
    pass


class DuplicateActiveKeyError(Exception):
    pass


@dataclass
class KeyRecord:
    key_id: str
    secret: bytes
    conduit_id: str
    box_id: str
    direction: str  # "up": box -> center, "down": center -> box
    status: str = "active"
    wrap_counter: int = 0
    compromised: bool = False


class KeyStore:
    def __init__(self):
        self.records: dict[str, KeyRecord] = {}

    def add(self, record: KeyRecord) -> None:
        if record.status == "active":
            existing = self.active_for(record.conduit_id, record.box_id, record.direction)
            if existing is not None:
                raise DuplicateActiveKeyError(
                    f"{existing.key_id} already active for "
                    f"({record.conduit_id}, {record.box_id}, {record.direction})")
        self.records[record.key_id] = record

    def get(self, key_id: str) -> Optional[KeyRecord]:
        return self.records.get(key_id)

    def active_for(self, conduit_id: str, box_id: str, direction: str) -> Optional[KeyRecord]:
        for record in self.records.values():
            if (record.conduit_id, record.box_id, record.direction) == (conduit_id, box_id, direction) \
                    and record.status == "active":
                return record
        return None

    def revoke_conduit(self, conduit_id: str) -> list[str]:
        """Revoke every active key on the conduit; returns newly revoked ids."""
        revoked = []
        for record in self.records.values():
            if record.conduit_id == conduit_id and record.status == "active":
                record.status = "revoked"
                revoked.append(record.key_id)
        return revoked

    def keys_of_box(self, box_id: str) -> list[KeyRecord]:
        return [r for r in self.records.values() if r.box_id == box_id]


@dataclass
class Envelope:
    key_id: str
    counter: int
    sender: str
    receiver: str
    conduit_id: str
    ciphertext: bytes
    tag: bytes


def _prefixed(value: str) -> bytes:
    raw = value.encode()
    return struct.pack(">H", len(raw)) + raw


def associated_data(sender: str, receiver: str, conduit_id: str) -> bytes:
    return _prefixed(sender) + _prefixed(receiver) + _prefixed(conduit_id)


def encode_envelope(env: Envelope) -> bytes:
    return b"".join([
        _prefixed(env.key_id),
        struct.pack(">Q", env.counter),
        associated_data(env.sender, env.receiver, env.conduit_id),
        struct.pack(">I", len(env.ciphertext)), env.ciphertext,
        env.tag,
    ])


def decode_envelope(data: bytes) -> Envelope:
    def take(pos, n):
        if pos + n > len(data):
            raise ValueError("truncated")
        return data[pos:pos + n], pos + n

    def take_str(pos):
        raw, pos = take(pos, 2)
        ln = struct.unpack(">H", raw)[0]
        raw, pos = take(pos, ln)
        return raw.decode(), pos

    pos = 0
    key_id, pos = take_str(pos)
    raw, pos = take(pos, 8)
    counter = struct.unpack(">Q", raw)[0]
    sender, pos = take_str(pos)
    receiver, pos = take_str(pos)
    conduit_id, pos = take_str(pos)
    raw, pos = take(pos, 4)
    ct_len = struct.unpack(">I", raw)[0]
    ciphertext, pos = take(pos, ct_len)
    tag, pos = take(pos, TAG_LEN)
    if pos != len(data):
        raise ValueError("trailing bytes")
    return Envelope(key_id, counter, sender, receiver, conduit_id, ciphertext, tag)


def wrap(frame_bytes: bytes, key: KeyRecord, sender: str, receiver: str) -> Envelope:
    """Authenticated encryption of the canonical frame bytes under `key`."""
    if key.status != "active":
        raise RevokedKeyError(key.key_id)
    if key.wrap_counter >= MAX_COUNTER:
        raise NonceExhaustedError(key.key_id)
    key.wrap_counter += 1
    counter = key.wrap_counter
    nonce = b"\x00\x00\x00\x00" + struct.pack(">Q", counter)
    ad = associated_data(sender, receiver, key.conduit_id)
    sealed = ChaCha20Poly1305(key.secret).encrypt(nonce, frame_bytes, ad)
    return Envelope(key.key_id, counter, sender, receiver, key.conduit_id,
                    sealed[:-TAG_LEN], sealed[-TAG_LEN:])


def forge_wrap(frame_bytes: bytes, key: KeyRecord, sender: str, receiver: str) -> Envelope:
    """Wrap with stolen key material, ignoring defender-side status.

    The attacker cannot observe revocation, so a revoked key still produces a
    well-formed envelope; the receiver's keystore check rejects it.
    """
    if key.wrap_counter >= MAX_COUNTER:
        raise NonceExhaustedError(key.key_id)
    key.wrap_counter += 1
    counter = key.wrap_counter
    nonce = b"\x00\x00\x00\x00" + struct.pack(">Q", counter)
    ad = associated_data(sender, receiver, key.conduit_id)
    sealed = ChaCha20Poly1305(key.secret).encrypt(nonce, frame_bytes, ad)
    return Envelope(key.key_id, counter, sender, receiver, key.conduit_id,
                    sealed[:-TAG_LEN], sealed[-TAG_LEN:])


class UnwrapStatus(str, Enum):
    OK = "Ok"
    AUTH_FAIL = "AuthFail"
    UNKNOWN_KEY = "UnknownKey"


@dataclass
class UnwrapResult:
    status: UnwrapStatus
    frame_bytes: Optional[bytes] = None
    reason: str = ""
    key_id: str = ""


def unwrap(data: bytes, keystore: KeyStore, recv_counters: dict[str, int],
           scope: str = "") -> UnwrapResult:
    """Decrypt and verify; accepts only strictly increasing counters per key.

    `scope` partitions the freshness state (one scope per ingress channel:
    redundant copies are wrapped separately, and per-channel FIFO keeps each
    scope's counters monotone).
    """
    try:
        env = decode_envelope(data)
    except (ValueError, UnicodeDecodeError):
        return UnwrapResult(UnwrapStatus.AUTH_FAIL, reason="malformed")
    key = keystore.get(env.key_id)
    if key is None:
        return UnwrapResult(UnwrapStatus.UNKNOWN_KEY, reason="unknown-key", key_id=env.key_id)
    if key.status != "active":
        return UnwrapResult(UnwrapStatus.AUTH_FAIL, reason="revoked-key", key_id=env.key_id)
    nonce = b"\x00\x00\x00\x00" + struct.pack(">Q", env.counter)
    ad = associated_data(env.sender, env.receiver, env.conduit_id)
    try:
        plain = ChaCha20Poly1305(key.secret).decrypt(nonce, env.ciphertext + env.tag, ad)
    except InvalidTag:
        return UnwrapResult(UnwrapStatus.AUTH_FAIL, reason="bad-tag", key_id=env.key_id)
    slot = env.key_id if not scope else f"{env.key_id}|{scope}"
    if env.counter <= recv_counters.get(slot, 0):
        return UnwrapResult(UnwrapStatus.AUTH_FAIL, reason="replay", key_id=env.key_id)
    recv_counters[slot] = env.counter
    return UnwrapResult(UnwrapStatus.OK, frame_bytes=plain, key_id=env.key_id)


@dataclass
class TokenBucket:
    capacity: int
    refill_per_s: int
    tokens: float = -1.0
    last_ms: int = 0

    def __post_init__(self):
        if self.tokens < 0:
            self.tokens = float(self.capacity)

    def try_consume(self, now_ms: int) -> bool:
        if now_ms > self.last_ms:
            self.tokens = min(float(self.capacity),
                              self.tokens + (now_ms - self.last_ms) * self.refill_per_s / 1000.0)
            self.last_ms = now_ms
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


@dataclass
class SecBoxConfig:
    conduit_id: str
    allow_rules: list  # (sender, receiver, kind), "*" wildcards allowed
    rate_capacity: int = 30
    refill_per_s: int = 15


class FilterVerdict(str, Enum):
    PASS = "Pass"
    NOT_ALLOWED = "NotAllowed"
    RATE_EXCEEDED = "RateExceeded"


def rule_matches(rule: tuple, sender: str, receiver: str, kind: str) -> bool:
    return all(r == "*" or r == v for r, v in zip(rule, (sender, receiver, kind)))


def filter_frame(sender: str, receiver: str, kind: str,
                 config: SecBoxConfig, bucket: TokenBucket, now_ms: int) -> FilterVerdict:
    """Allow-list first; a token is consumed only on Pass."""
    if not any(rule_matches(rule, sender, receiver, kind) for rule in config.allow_rules):
        return FilterVerdict.NOT_ALLOWED
    if not bucket.try_consume(now_ms):
        return FilterVerdict.RATE_EXCEEDED
    return FilterVerdict.PASS


@dataclass
class TamperState:
    armed: bool = True
    triggered: bool = False


class SecurityBox:
    """Per-box runtime state: ingress buckets per channel, receive counters,
    tamper state. Crypto and filtering are the module-level functions."""

    def __init__(self, box_id: str, conduit_id: str, config: SecBoxConfig, channel_count: int):
        self.box_id = box_id
        self.conduit_id = conduit_id
        self.config = config
        self.buckets = {
            i: TokenBucket(config.rate_capacity, config.refill_per_s)
            for i in range(channel_count)
        }
        self.recv_counters: dict[str, int] = {}
        self.tamper = TamperState()

    def ingress_rate_ok(self, channel_index: int, now_ms: int) -> bool:
        bucket = self.buckets.get(channel_index)
        if bucket is None:
            bucket = TokenBucket(self.config.rate_capacity, self.config.refill_per_s)
            self.buckets[channel_index] = bucket
        return bucket.try_consume(now_ms)

    def allow_check(self, sender: str, receiver: str, kind: str) -> bool:
        return any(rule_matches(rule, sender, receiver, kind) for rule in self.config.allow_rules)


@dataclass
class TamperOutcome:
    alarm: bool
    leaked: list
    revoked: list


def on_tamper(box: SecurityBox, keystore: KeyStore, suppressed: bool,
              revoke_policy: bool) -> TamperOutcome:
    """Housing-alert semantics.

    The zeroization circuit (revoke_policy) fires on any tamper of an armed
    box, suppressed or not; suppression defeats only the alarm report and
    lets the attacker walk away with the key material (references, so later
    revocation reaches the stolen copies too).
    """
    if not box.tamper.armed:
        return TamperOutcome(alarm=False, leaked=[], revoked=[])
    box.tamper.triggered = True
    leaked: list[KeyRecord] = []
    if suppressed:
        leaked = keystore.keys_of_box(box.box_id)
        for record in leaked:
            record.compromised = True
    revoked = keystore.revoke_conduit(box.conduit_id) if revoke_policy else []
    return TamperOutcome(alarm=not suppressed, leaked=leaked, revoked=revoked)
