"""Bit-exact packet formats.

Every packet starts with a one-byte type tag followed by a big-endian
fixed layout.  Device ids are 3 bytes, cluster ids in request lists 1 byte,
epochs 4 bytes.  MAC tags are full 32-byte HMAC outputs computed over every
preceding byte of the packet.  The normative table lives in README.md.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass, field

from . import crypto
from .errors import MalformedPacket

NONCE_UPDATE = 1
ATTEST_REQUEST = 2
KEY_DISCLOSE = 3
ACK = 4
REPORT_UP = 5
SECRET_UPDATE = 6
COMMIT_ROTATE = 7

VARIANT_A = 0x41  # 'A'
VARIANT_B = 0x42  # 'B'

IDS_LIST = 0
IDS_BITMAP = 1

MAX_DEVICE_ID = (1 << 24) - 1
TAG = crypto.DIGEST_SIZE
SLOT_SIZE = 3 + crypto.KEY16_SIZE + TAG

_HDR = struct.Struct(">BI")  # type, epoch
ACK_SIZE = _HDR.size + 3 + 3 + TAG


def _u24(v: int) -> bytes:
    if not 0 <= v <= MAX_DEVICE_ID:
        raise ValueError(f"value {v} does not fit in 3 bytes")
    return v.to_bytes(3, "big")


def _get_u24(buf: bytes, off: int) -> int:
    return int.from_bytes(buf[off:off + 3], "big")


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, n: int) -> bytes:
        end = self.off + n
        if n < 0 or end > len(self.raw):
            raise MalformedPacket(f"truncated packet: need {n} bytes at offset {self.off}")
        out = self.raw[self.off:end]
        self.off = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u24(self) -> int:
        return int.from_bytes(self.take(3), "big")

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def done(self):
        if self.off != len(self.raw):
            raise MalformedPacket(f"{len(self.raw) - self.off} trailing bytes")


# --------------------------------------------------------------------------
# bit vectors

def _bit_mask(n_bits: int, dev_id: int) -> int:
    # bit for device i sits at position i-1, MSB-first within the byte string
    nbytes = (n_bits + 7) // 8
    return 1 << (nbytes * 8 - dev_id)


@dataclass(frozen=True)
class PresenceVector:
    n_bits: int
    bits: int = 0

    @property
    def nbytes(self) -> int:
        return (self.n_bits + 7) // 8

    def with_id(self, dev_id: int) -> "PresenceVector":
        if not 1 <= dev_id <= self.n_bits:
            raise ValueError(f"device id {dev_id} outside 1..{self.n_bits}")
        return PresenceVector(self.n_bits, self.bits | _bit_mask(self.n_bits, dev_id))

    def __or__(self, other: "PresenceVector") -> "PresenceVector":
        if other.n_bits != self.n_bits:
            raise ValueError("presence vectors of different length")
        return PresenceVector(self.n_bits, self.bits | other.bits)

    def is_set(self, dev_id: int) -> bool:
        return 1 <= dev_id <= self.n_bits and bool(self.bits & _bit_mask(self.n_bits, dev_id))

    def ids(self) -> list[int]:
        return _bitmap_ids(self.to_bytes())

    def count(self) -> int:
        return bin(self.bits).count("1")

    def to_bytes(self) -> bytes:
        return self.bits.to_bytes(self.nbytes, "big")

    @classmethod
    def from_bytes(cls, n_bits: int, raw: bytes) -> "PresenceVector":
        bits = int.from_bytes(raw, "big")
        nbytes = (n_bits + 7) // 8
        pad = nbytes * 8 - n_bits
        if len(raw) != nbytes or (pad and bits & ((1 << pad) - 1)):
            raise MalformedPacket("presence vector padding bits set or wrong length")
        return cls(n_bits, bits)

    @classmethod
    def of(cls, n_bits: int, ids) -> "PresenceVector":
        buf = bytearray((n_bits + 7) // 8)
        for i in ids:
            if not 1 <= i <= n_bits:
                raise ValueError(f"device id {i} outside 1..{n_bits}")
            p = i - 1
            buf[p >> 3] |= 0x80 >> (p & 7)
        return cls(n_bits, int.from_bytes(buf, "big"))


def _bitmap_ids(raw: bytes) -> list[int]:
    out = []
    for byte_i, b in enumerate(raw):
        if b:
            base = byte_i * 8 + 1
            for bit in range(8):
                if b & (0x80 >> bit):
                    out.append(base + bit)
    return out


@dataclass(frozen=True)
class AggregateReport:
    attest_xor: bytes = crypto.ZERO_DIGEST
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.attest_xor) != crypto.DIGEST_SIZE:
            raise ValueError("attest_xor must be 32 bytes")
        if any(b <= a for a, b in zip(self.ids, self.ids[1:])):
            raise ValueError("aggregate ids must be strictly increasing")
        if not self.ids and self.attest_xor != crypto.ZERO_DIGEST:
            raise ValueError("empty aggregate must carry the zero digest")


def fold_aggregates(parts) -> AggregateReport:
    """XOR-fold aggregates and merge their id lists."""
    acc = 0
    ids: list[int] = []
    for p in parts:
        acc ^= int.from_bytes(p.attest_xor, "big")
        ids.extend(p.ids)
    ids.sort()
    for a, b in zip(ids, ids[1:]):
        if a == b:
            raise ValueError(f"device {a} contributes twice to an aggregate")
    return AggregateReport(acc.to_bytes(crypto.DIGEST_SIZE, "big"), tuple(ids))


def _encode_ids(ids, n_bits: int) -> bytes:
    """Shorter of an explicit id list and a bitmap spanning first..last id."""
    list_len = 3 + 3 * len(ids)
    if ids:
        first, span = ids[0], ids[-1] - ids[0] + 1
        map_len = 6 + (span + 7) // 8
        if map_len < list_len:
            buf = bytearray((span + 7) // 8)
            for i in ids:
                p = i - first
                buf[p >> 3] |= 0x80 >> (p & 7)
            return bytes([IDS_BITMAP]) + _u24(first) + _u24(span) + bytes(buf)
    return bytes([IDS_LIST]) + _u24(len(ids)) + b"".join(_u24(i) for i in ids)


def _decode_ids(r: _Reader, n_bits: int) -> tuple[int, ...]:
    fmt = r.u8()
    if fmt == IDS_LIST:
        count = r.u24()
        raw = r.take(3 * count)
        ids = tuple(_get_u24(raw, 3 * k) for k in range(count))
    elif fmt == IDS_BITMAP:
        first, span = r.u24(), r.u24()
        if span == 0:
            raise MalformedPacket("empty id bitmap")
        raw = r.take((span + 7) // 8)
        ids = tuple(first - 1 + i for i in _bitmap_ids(raw))
        pad = len(raw) * 8 - span
        if not ids or ids[0] != first or ids[-1] != first + span - 1 or (pad and raw[-1] & ((1 << pad) - 1)):
            raise MalformedPacket("id bitmap is not canonical")
    else:
        raise MalformedPacket(f"unknown id-list format {fmt}")
    if ids and (ids[0] < 1 or ids[-1] > n_bits):
        raise MalformedPacket("aggregate id outside 1..DevNum")
    return ids


# --------------------------------------------------------------------------
# messages

@dataclass(frozen=True)
class NonceUpdateMsg:
    epoch: int
    n_new: bytes
    tag: bytes = b""

    type = NONCE_UPDATE
    key_index = 1

    def signed_bytes(self) -> bytes:
        return _HDR.pack(NONCE_UPDATE, self.epoch) + self.n_new


@dataclass(frozen=True)
class AttestRequestBody:
    n_new: bytes
    dev_num: int
    a_send: tuple[int, ...] = ()
    a_calc: tuple[int, ...] = ()

    def encode(self) -> bytes:
        for lst in (self.a_send, self.a_calc):
            if any(not 0 <= c <= 255 for c in lst) or list(lst) != sorted(set(lst)):
                raise ValueError("cluster lists must be sorted unique 1-byte ids")
        return (self.n_new + struct.pack(">I", self.dev_num)
                + bytes([len(self.a_send)]) + bytes(self.a_send)
                + bytes([len(self.a_calc)]) + bytes(self.a_calc))

    @classmethod
    def decode(cls, raw: bytes) -> "AttestRequestBody":
        """Parse a decrypted body; wrong-key garbage fails the structural checks."""
        r = _Reader(raw)
        n_new = r.take(32)
        dev_num = r.u32()
        a_send = tuple(r.take(r.u8()))
        a_calc = tuple(r.take(r.u8()))
        r.done()
        if not 1 <= dev_num <= MAX_DEVICE_ID:
            raise MalformedPacket("implausible device count")
        for lst in (a_send, a_calc):
            if any(b <= a for a, b in zip(lst, lst[1:])):
                raise MalformedPacket("cluster list not strictly increasing")
        return cls(n_new, dev_num, a_send, a_calc)


@dataclass(frozen=True)
class AttestRequestMsg:
    epoch: int
    ciphertext: bytes
    tag: bytes = b""

    type = ATTEST_REQUEST
    key_index = 2

    def signed_bytes(self) -> bytes:
        return _HDR.pack(ATTEST_REQUEST, self.epoch) + struct.pack(">H", len(self.ciphertext)) + self.ciphertext


@dataclass(frozen=True)
class KeyDiscloseMsg:
    epoch: int
    key_index: int
    key: bytes

    type = KEY_DISCLOSE

    def signed_bytes(self) -> bytes:
        return _HDR.pack(KEY_DISCLOSE, self.epoch) + bytes([self.key_index]) + self.key


@dataclass(frozen=True)
class AckMsg:
    epoch: int
    child: int
    parent: int
    tag: bytes = b""

    type = ACK

    def signed_bytes(self) -> bytes:
        return _HDR.pack(ACK, self.epoch) + _u24(self.child) + _u24(self.parent)


@dataclass(frozen=True)
class ReportUpMsg:
    epoch: int
    sender: int
    presence: PresenceVector
    aggregate: AggregateReport = field(default_factory=AggregateReport)
    tag: bytes = b""

    type = REPORT_UP

    def signed_bytes(self) -> bytes:
        n = self.presence.n_bits
        return (_HDR.pack(REPORT_UP, self.epoch) + _u24(self.sender) + struct.pack(">I", n)
                + self.presence.to_bytes() + self.aggregate.attest_xor
                + _encode_ids(self.aggregate.ids, n))


@dataclass(frozen=True)
class SecretUpdateA:
    """New (nonce, K_0) for one cluster, encrypted under that cluster's key."""
    epoch: int
    cluster: int
    ciphertext: bytes  # 64 bytes
    tag: bytes = b""

    type = SECRET_UPDATE
    variant = VARIANT_A

    def signed_bytes(self) -> bytes:
        return _HDR.pack(SECRET_UPDATE, self.epoch) + bytes([VARIANT_A, self.cluster]) + self.ciphertext


@dataclass(frozen=True)
class KeySlot:
    device: int
    ciphertext: bytes  # 16 bytes
    tag: bytes


@dataclass(frozen=True)
class SecretUpdateB:
    """New cluster key for each healthy member, one slot per device key K_a."""
    epoch: int
    cluster: int
    slots: tuple[KeySlot, ...]

    type = SECRET_UPDATE
    variant = VARIANT_B

    def header(self) -> bytes:
        return _HDR.pack(SECRET_UPDATE, self.epoch) + bytes([VARIANT_B, self.cluster])

    def signed_bytes(self) -> bytes:
        # slots carry their own tags; there is no whole-message tag
        ids = [s.device for s in self.slots]
        if ids != sorted(set(ids)):
            raise ValueError("key slots must be sorted by device id")
        return (self.header() + _u24(len(self.slots))
                + b"".join(_u24(s.device) + s.ciphertext + s.tag for s in self.slots))


def slot_mac_input(epoch: int, cluster: int, device: int, ciphertext: bytes) -> bytes:
    return _HDR.pack(SECRET_UPDATE, epoch) + bytes([VARIANT_B, cluster]) + _u24(device) + ciphertext


@dataclass(frozen=True)
class CommitRotateMsg:
    epoch: int
    ciphertext: bytes  # 32 bytes
    tag: bytes = b""

    type = COMMIT_ROTATE

    def signed_bytes(self) -> bytes:
        return _HDR.pack(COMMIT_ROTATE, self.epoch) + self.ciphertext


_TAGGED = (NonceUpdateMsg, AttestRequestMsg, AckMsg, ReportUpMsg, SecretUpdateA, CommitRotateMsg)


def serialize(msg) -> bytes:
    if isinstance(msg, _TAGGED):
        if len(msg.tag) != TAG:
            raise ValueError(f"{type(msg).__name__} needs a 32-byte tag before serialization")
        return msg.signed_bytes() + msg.tag
    return msg.signed_bytes()


def seal(msg, key: bytes):
    """Return ``msg`` with its tag computed under ``key``."""
    from dataclasses import replace
    return replace(msg, tag=crypto.mac(key, msg.signed_bytes()))


def verify(msg, key: bytes) -> bool:
    return crypto.mac_ok(key, msg.signed_bytes(), msg.tag)


def peek_type(raw: bytes) -> int:
    if len(raw) < _HDR.size:
        raise MalformedPacket("packet shorter than header")
    return raw[0]


def peek_epoch(raw: bytes) -> int:
    return _HDR.unpack_from(raw)[1]


def parse(raw: bytes):
    r = _Reader(bytes(raw))
    kind = r.u8()
    epoch = r.u32()
    if kind == NONCE_UPDATE:
        msg = NonceUpdateMsg(epoch, r.take(32), r.take(TAG))
    elif kind == ATTEST_REQUEST:
        ct = r.take(r.u16())
        msg = AttestRequestMsg(epoch, ct, r.take(TAG))
    elif kind == KEY_DISCLOSE:
        msg = KeyDiscloseMsg(epoch, r.u8(), r.take(32))
    elif kind == ACK:
        msg = AckMsg(epoch, r.u24(), r.u24(), r.take(TAG))
    elif kind == REPORT_UP:
        sender = r.u24()
        n = r.u32()
        if n == 0 or n > MAX_DEVICE_ID:
            raise MalformedPacket("bad vector length")
        pv = PresenceVector.from_bytes(n, r.take((n + 7) // 8))
        xor = r.take(32)
        ids = _decode_ids(r, n)
        try:
            agg = AggregateReport(xor, ids)
        except ValueError as exc:
            raise MalformedPacket(str(exc)) from exc
        msg = ReportUpMsg(epoch, sender, pv, agg, r.take(TAG))
    elif kind == SECRET_UPDATE:
        variant, cluster = r.u8(), r.u8()
        if variant == VARIANT_A:
            msg = SecretUpdateA(epoch, cluster, r.take(64), r.take(TAG))
        elif variant == VARIANT_B:
            count = r.u24()
            slots = []
            for _ in range(count):
                slots.append(KeySlot(r.u24(), r.take(16), r.take(TAG)))
            if any(b.device <= a.device for a, b in zip(slots, slots[1:])):
                raise MalformedPacket("key slots not sorted")
            msg = SecretUpdateB(epoch, cluster, tuple(slots))
        else:
            raise MalformedPacket(f"unknown secret-update variant {variant}")
    elif kind == COMMIT_ROTATE:
        msg = CommitRotateMsg(epoch, r.take(32), r.take(TAG))
    else:
        raise MalformedPacket(f"unknown packet type {kind}")
    r.done()
    return msg


def secret_update_header(raw: bytes) -> tuple[int, int, int]:
    """(epoch, variant, cluster) without parsing the body."""
    if len(raw) < 7 or raw[0] != SECRET_UPDATE:
        raise MalformedPacket("not a secret update")
    return peek_epoch(raw), raw[5], raw[6]


def find_slot(raw: bytes, device: int) -> KeySlot | None:
    """Binary-search a serialized variant-B packet for one device's slot."""
    if len(raw) < 10:
        raise MalformedPacket("truncated variant-B packet")
    count = _get_u24(raw, 7)
    base = 10
    if len(raw) != base + count * SLOT_SIZE:
        raise MalformedPacket("variant-B length does not match slot count")

    class _Ids:
        def __len__(self):
            return count

        def __getitem__(self, k):
            return _get_u24(raw, base + k * SLOT_SIZE)

    k = bisect_left(_Ids(), device)
    if k == count or _Ids()[k] != device:
        return None
    off = base + k * SLOT_SIZE
    return KeySlot(device, bytes(raw[off + 3:off + 19]), bytes(raw[off + 19:off + SLOT_SIZE]))


# --------------------------------------------------------------------------
# prover storage blocks

PERSISTENT_BLOCK_SIZE = 3 * 3 + 3 * 16 + 3 * 32
MUTABLE_BLOCK_SIZE = 2 * 32


def pack_persistent_block(dev_id, par_id, clus_id, k_a, k_t, k_c, k_0, nonce, h_s) -> bytes:
    for name, v, n in (("K_a", k_a, 16), ("K_t", k_t, 16), ("K_c", k_c, 16),
                       ("K_0", k_0, 32), ("nonce", nonce, 32), ("H_S", h_s, 32)):
        if len(v) != n:
            raise ValueError(f"{name} must be {n} bytes")
    out = _u24(dev_id) + _u24(par_id or 0) + _u24(clus_id) + k_a + k_t + k_c + k_0 + nonce + h_s
    assert len(out) == PERSISTENT_BLOCK_SIZE
    return out


def unpack_persistent_block(raw: bytes) -> dict:
    if len(raw) != PERSISTENT_BLOCK_SIZE:
        raise MalformedPacket("persistent block must be 153 bytes")
    r = _Reader(raw)
    return {"id": r.u24(), "par_id": r.u24() or None, "clus_id": r.u24(),
            "k_a": r.take(16), "k_t": r.take(16), "k_c": r.take(16),
            "k_0": r.take(32), "nonce": r.take(32), "h_s": r.take(32)}


def pack_mutable_block(h_prime: bytes | None, last_session_key: bytes) -> bytes:
    out = (h_prime or crypto.ZERO_DIGEST) + last_session_key
    if len(out) != MUTABLE_BLOCK_SIZE:
        raise ValueError("mutable block fields must be 32 bytes each")
    return out
