"""Adversary actions and the knowledge-tracking eavesdropper.

Three kinds of attack are injected into a running simulation:

* remote tamper: the device's memory image is overwritten at a given time;
  the stored H' only reflects it after the next recomputation.
* physical capture: the device is silent for the whole offline window and
  the adversary copies every secret it holds at the start of the window.
* sophisticated: in addition the adversary records every transmission and
  uses the copied secrets to follow the group state forward.  When the
  device comes back online it is re-synchronised with whatever the tracker
  still knows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import crypto, wire
from ..errors import MalformedPacket
from ..keychain import hash_walk, open_rotation
from ..prover import SECRET_SUB_INTERVAL, apply_nonce_update, derive_kenc, group_key


@dataclass(frozen=True)
class RemoteTamper:
    device: int
    time: float


@dataclass(frozen=True)
class PhysicalCapture:
    device: int
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class AdversaryConfig:
    t_adv: float
    remote: list[RemoteTamper] = field(default_factory=list)
    physical: list[PhysicalCapture] = field(default_factory=list)
    sophisticated: bool = False

    def __post_init__(self):
        for cap in self.physical:
            if cap.duration < self.t_adv:
                raise ValueError(f"capture of device {cap.device} is shorter than T_adv")
        if len({c.device for c in self.physical}) != len(self.physical):
            raise ValueError("a device can be captured at most once per scenario")

    @property
    def compromised(self) -> set[int]:
        return {r.device for r in self.remote} | {c.device for c in self.physical}


def tamper_image(image: bytes, seed: int) -> bytes:
    """A different image of the same length (models injected malware)."""
    patch = crypto.HashDRBG(seed.to_bytes(8, "big") + image[:16]).read(max(1, len(image) // 4))
    out = bytearray(image)
    out[:len(patch)] = patch
    if bytes(out) == image:
        out[0] ^= 0xFF
    return bytes(out)


@dataclass
class _EpochRecord:
    update: bytes | None = None
    request: bytes | None = None
    keys: dict = field(default_factory=dict)


class Eavesdropper:
    """Offline replay of the transcript with secrets copied from one device.

    The tracker authenticates a key only if it hashes back to the commitment
    it believes in, and a packet only if its MAC verifies (or it decrypts to
    a well-formed body) under keys derived from tracked state.  After
    :meth:`mark_rotation` every such success is counted in
    ``post_rotation_authenticated``.
    """

    def __init__(self, device: int):
        self.device = device
        self.active = False
        self.records: dict[int, _EpochRecord] = {}
        self.seen: set[bytes] = set()
        self.epoch = -1
        self.stage = 0
        self.nonce = self.k_0 = self.k_c = self.k_a = None
        self.clus_id = None
        self.request_body = None
        self.rotated = False
        self.rotation_epoch = None
        self.post_rotation_authenticated = 0
        self.authenticated = 0

    # ------------------------------------------------------------ knowledge

    def capture(self, prover):
        """Copy the device's secrets at the moment of capture."""
        self.active = True
        self.k_a, self.k_c, self.k_0 = prover.k_a, prover.k_c, prover.k_0
        self.clus_id = prover.clus_id
        self.nonce = prover.nonce
        self.epoch = max(prover.epoch, 0)
        if prover.epoch < 0:
            self.stage = 0
        elif prover.refreshed:
            self.epoch, self.stage = prover.epoch + 1, 0
        elif prover.request is not None:
            self.stage = 2
            self.request_body = prover.request
        elif prover.nonce_after_first is not None:
            self.stage = 1
        else:
            self.stage = 0
        self._advance()

    def mark_rotation(self, epoch: int):
        """Secrets were refreshed at the end of ``epoch`` without this device."""
        self.rotated = True
        self.rotation_epoch = epoch

    def _credit(self, epoch: int | None = None):
        self.authenticated += 1
        # traffic of the rotation epoch itself may still be in the air afterwards
        if self.rotated and (epoch is None or epoch > self.rotation_epoch):
            self.post_rotation_authenticated += 1

    def _key_ok(self, key: bytes, idx: int) -> bool:
        return hash_walk(key, idx) == self.k_0

    # ------------------------------------------------------------- transcript

    def observe(self, raw: bytes, digest: bytes | None = None):
        digest = digest or crypto.hash(raw)
        if digest in self.seen:
            return
        self.seen.add(digest)
        try:
            kind = wire.peek_type(raw)
            epoch = wire.peek_epoch(raw)
        except MalformedPacket:
            return
        if kind == wire.SECRET_UPDATE:
            if self.active:
                self._secret_update(raw)
            return
        try:
            msg = wire.parse(raw)
        except MalformedPacket:
            return
        rec = self.records.setdefault(epoch, _EpochRecord())
        if kind == wire.NONCE_UPDATE:
            rec.update = raw
        elif kind == wire.ATTEST_REQUEST:
            rec.request = raw
        elif kind == wire.KEY_DISCLOSE:
            rec.keys[msg.key_index] = msg.key
        if not self.active:
            return
        if kind in (wire.ACK, wire.REPORT_UP):
            if epoch == self.epoch and self.stage == 2 and wire.verify(msg, group_key(self.k_0, self.nonce)):
                self._credit(epoch)
        elif kind == wire.COMMIT_ROTATE:
            if epoch == self.epoch and self.stage == 2:
                new_k0 = open_rotation(self.k_0, epoch, msg.ciphertext, msg.tag)
                if new_k0 is not None:
                    self._credit()
                    self.k_0 = new_k0
                    self.epoch, self.stage = epoch + 1, 0
        self._advance()

    def _advance(self):
        while self.active:
            rec = self.records.get(self.epoch)
            if rec is None:
                return
            if self.stage == 0:
                k1 = rec.keys.get(1)
                if rec.update is None or k1 is None or not self._key_ok(k1, 1):
                    return
                msg = wire.parse(rec.update)
                if not wire.verify(msg, k1):
                    return
                self._credit(self.epoch)
                self.nonce = apply_nonce_update(self.nonce, msg.n_new)
                self.stage = 1
            elif self.stage == 1:
                k2 = rec.keys.get(2)
                if rec.request is None or k2 is None or not self._key_ok(k2, 2):
                    return
                msg = wire.parse(rec.request)
                if not wire.verify(msg, k2):
                    return
                plain = crypto.decrypt(derive_kenc(k2, self.nonce), crypto.iv_for(self.epoch, 1), msg.ciphertext)
                try:
                    body = wire.AttestRequestBody.decode(plain)
                except MalformedPacket:
                    return
                self._credit(self.epoch)
                self.request_body = body
                self.nonce = apply_nonce_update(self.nonce, body.n_new)
                self.stage = 2
            else:
                return

    def _secret_update(self, raw):
        try:
            epoch, variant, cluster = wire.secret_update_header(raw)
        except MalformedPacket:
            return
        if cluster != self.clus_id:
            return
        iv = crypto.iv_for(epoch, SECRET_SUB_INTERVAL)
        if variant == wire.VARIANT_B:
            slot = wire.find_slot(raw, self.device)
            if slot and crypto.mac_ok(self.k_a, wire.slot_mac_input(epoch, cluster, self.device, slot.ciphertext),
                                      slot.tag):
                self._credit()
                self.k_c = crypto.decrypt(crypto.derive_key16(self.k_a), iv, slot.ciphertext)
            return
        msg = wire.parse(raw)
        if wire.verify(msg, self.k_c):
            self._credit()
            plain = crypto.decrypt(crypto.derive_key16(self.k_c), iv, msg.ciphertext)
            self.nonce, self.k_0 = plain[:32], plain[32:]
            self.epoch, self.stage = epoch + 1, 0

    @property
    def tracking(self) -> bool:
        """True while the tracked state still matches what healthy devices hold."""
        return self.active and not self.rotated

    def resync(self, prover):
        """Hand the tracked state back to the returned device."""
        prover.begin_epoch(self.epoch)
        prover.nonce, prover.k_0, prover.k_c = self.nonce, self.k_0, self.k_c
        prover.cursor.last_authenticated = self.k_0
        if self.stage >= 1:
            prover.nonce_after_first = self.nonce
        if self.stage == 2:
            prover.request = self.request_body
