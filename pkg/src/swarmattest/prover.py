"""Per-device attestation state machine.

A prover never acts on a broadcast until the key that authenticates it has
been disclosed: packets are buffered on arrival (if the schedule still
admits them) and re-broadcast once, then released in key order when the
disclosure arrives.  The handler methods return an :class:`Effects` record
describing outgoing packets, timers and the cryptographic work performed;
the caller (normally the simulator) turns the work into time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, wire
from .errors import ForgedKey, MalformedPacket, StaleKey
from .keychain import KeyCursor, authenticate_key, open_rotation, recover_intermediate
from .schedule import EpochSchedule, LocalClock, packet_admissible

SECRET_SUB_INTERVAL = 3

# names of work items; simnet.delays maps them to platform costs
OP_KEY_AUTH = "key_auth"
OP_NONCE_UPDATE = "nonce_update"
OP_REQUEST = "request"
OP_REPORT_PREP = "report_prep"
OP_VECTOR_OR = "vector_or"
OP_MAC = "mac_verify"
OP_HPRIME = "hprime"


def apply_nonce_update(nonce: bytes, n_new: bytes) -> bytes:
    return crypto.hash(nonce + n_new)


def derive_kenc(k2: bytes, nonce: bytes) -> bytes:
    return crypto.derive_key16(k2, nonce)


def group_key(k0: bytes, nonce: bytes) -> bytes:
    """MAC key for every prover-to-prover packet."""
    return crypto.hash(k0 + nonce)


def attest_value(h_prime: bytes, nonce: bytes) -> bytes:
    return crypto.hash(h_prime + nonce)


@dataclass
class Effects:
    ops: list = field(default_factory=list)
    # (number of ops done before the send, destination or None for broadcast, raw, is_relay)
    sends: list = field(default_factory=list)
    timers: list = field(default_factory=list)  # (ops before, tag, delay ms)
    notes: list = field(default_factory=list)   # (ops before, label)

    def op(self, name, times=1):
        self.ops.extend([name] * times)

    def send(self, dest, raw, relay=False):
        """``dest`` is None (broadcast), a node id, or a tuple of next hops in preference order."""
        self.sends.append((len(self.ops), dest, raw, relay))

    def timer(self, tag, delay):
        self.timers.append((len(self.ops), tag, delay))

    def note(self, label):
        self.notes.append((len(self.ops), label))


_NOTHING = Effects()


@dataclass
class EpochStats:
    duplicates: int = 0
    late: int = 0
    forged: int = 0
    undecryptable: int = 0
    bad_mac: int = 0
    recovered_keys: int = 0
    recovery_used: bool = False
    forwarded: int = 0


class Prover:
    """One device.  Construct through :func:`swarmattest.verifier.provision_swarm`."""

    def __init__(self, dev_id, clus_id, k_a, k_t, k_c, k_0, nonce, memory_image,
                 schedule: EpochSchedule, clock: LocalClock | None = None,
                 ack_wait: float = 500.0, child_wait: float = 2000.0):
        self.id = dev_id
        self.clus_id = clus_id
        self.k_a = k_a
        self.k_t = k_t
        self.k_c = k_c
        self.k_0 = k_0
        self.nonce = nonce
        self.memory_image = memory_image
        self.h_s = crypto.mac(k_t, memory_image)
        self.h_prime = self.h_s
        self.schedule = schedule
        self.clock = clock or LocalClock()
        self.ack_wait = ack_wait
        self.child_wait = child_wait
        self.epoch = -1
        self.cursor = KeyCursor(k_0, 0)
        self._reset_epoch_state()

    # ------------------------------------------------------------------ state

    def _reset_epoch_state(self):
        self.par_id = None
        self.upstream: list[int] = []  # neighbours heard relaying K_2, earliest first
        self.k2_digest = None
        self.children: set[int] = set()
        self.child_reports: dict[int, wire.ReportUpMsg] = {}
        self.extra_reports: list[wire.ReportUpMsg] = []
        self.below = 0  # OR of every presence vector received this epoch
        self.buffer: dict[int, list] = {}
        self.session_keys: dict[int, bytes] = {}
        self.seen: set[bytes] = set()
        self.nonce_after_first = None
        self.request: wire.AttestRequestBody | None = None
        self.ack_closed = False
        self.reported = False
        self.pending_a: list[bytes] = []
        self.refreshed = False  # group secrets already moved on to the next epoch's
        self.stats = EpochStats()

    def begin_epoch(self, epoch: int):
        if epoch <= self.epoch:
            return
        self.epoch = epoch
        self.cursor = KeyCursor(self.k_0, 0)
        self._reset_epoch_state()

    def persistent_block(self) -> bytes:
        return wire.pack_persistent_block(self.id, self.par_id, self.clus_id, self.k_a, self.k_t,
                                          self.k_c, self.k_0, self.nonce, self.h_s)

    def mutable_block(self) -> bytes:
        return wire.pack_mutable_block(self.h_prime, self.cursor.last_authenticated)

    @property
    def group_key(self) -> bytes:
        return group_key(self.k_0, self.nonce)

    @property
    def synchronized(self) -> bool:
        """True once this epoch's request has been decrypted and applied."""
        return self.request is not None

    # ------------------------------------------------------------------ input

    def on_packet(self, raw: bytes, arrival: float, sender: int, digest: bytes | None = None) -> Effects:
        try:
            kind = wire.peek_type(raw)
            epoch = wire.peek_epoch(raw)
        except MalformedPacket:
            return _NOTHING
        if kind in (wire.NONCE_UPDATE, wire.ATTEST_REQUEST, wire.KEY_DISCLOSE) and epoch > self.epoch:
            local = self.clock.now(arrival)
            if local + self.schedule.sync_error < self.schedule.start_of(epoch):
                return _NOTHING
            self.begin_epoch(epoch)
        if epoch != self.epoch:
            return _NOTHING
        if digest is None:
            digest = crypto.hash(raw)
        if digest in self.seen:
            self.stats.duplicates += 1
            if digest == self.k2_digest and sender not in self.upstream:
                self.upstream.append(sender)
            return _NOTHING
        self.seen.add(digest)

        if kind == wire.SECRET_UPDATE:
            return self._on_secret_update(raw)
        try:
            msg = wire.parse(raw)
        except MalformedPacket:
            return _NOTHING
        if kind in (wire.NONCE_UPDATE, wire.ATTEST_REQUEST):
            return self._on_buffered(msg, raw, arrival)
        if kind == wire.KEY_DISCLOSE:
            return self._on_key(msg, raw, sender, digest)
        if kind == wire.ACK:
            return self._on_ack(msg)
        if kind == wire.REPORT_UP:
            return self._on_report(msg, sender)
        if kind == wire.COMMIT_ROTATE:
            return self._on_rotate(msg, raw)
        return _NOTHING

    def on_timer(self, tag: str, now: float) -> Effects:
        fx = Effects()
        if tag == "ack_window" and not self.ack_closed:
            self.ack_closed = True
            if not self.children:
                self._send_report(fx)
            elif len(self.child_reports) == len(self.children):
                self._send_report(fx)
            else:
                fx.timer("child_wait", self.child_wait)
        elif tag == "child_wait" and not self.reported:
            self._send_report(fx)
        return fx

    # ------------------------------------------------------------- handlers

    def _on_buffered(self, msg, raw, arrival):
        k = msg.key_index
        if k <= self.cursor.last_index or not packet_admissible(self.schedule, self.clock, msg.epoch, k, arrival):
            self.stats.late += 1
            return _NOTHING
        self.buffer.setdefault(k, []).append(msg)
        fx = Effects()
        fx.send(None, raw, relay=True)
        return fx

    def _on_key(self, msg: wire.KeyDiscloseMsg, raw, sender, digest):
        before = self.cursor
        try:
            self.cursor = authenticate_key(before, msg.key, msg.key_index)
        except StaleKey:
            return _NOTHING
        except ForgedKey:
            self.stats.forged += 1
            return _NOTHING
        fx = Effects()
        fx.op(OP_KEY_AUTH, msg.key_index - before.last_index)
        fx.send(None, raw, relay=True)
        skipped = recover_intermediate(before, msg.key, msg.key_index)
        self.stats.recovered_keys += len(skipped)
        for idx, key in skipped:
            if self.buffer.get(idx):
                self.stats.recovery_used = True
        for idx, key in skipped + [(msg.key_index, msg.key)]:
            self.session_keys[idx] = key
            self._release(idx, key, fx)
        if msg.key_index == 2:
            self.k2_digest = digest
            self.upstream.append(sender)
        if msg.key_index >= 2 and self.par_id is None and self.request is not None:
            self._adopt_parent(sender, fx)
        return fx

    def _release(self, idx, key, fx):
        for msg in self.buffer.pop(idx, []):
            if idx == 1 and self.nonce_after_first is None:
                fx.op(OP_MAC)
                if not wire.verify(msg, key):
                    self.stats.bad_mac += 1
                    continue
                self.nonce = apply_nonce_update(self.nonce, msg.n_new)
                fx.op(OP_NONCE_UPDATE)
                self.nonce_after_first = self.nonce
            elif idx == 2 and self.request is None:
                fx.op(OP_REQUEST)
                if not wire.verify(msg, key):
                    self.stats.bad_mac += 1
                    continue
                plain = crypto.decrypt(derive_kenc(key, self.nonce), crypto.iv_for(msg.epoch, 1), msg.ciphertext)
                try:
                    body = wire.AttestRequestBody.decode(plain)
                except MalformedPacket:
                    self.stats.undecryptable += 1
                    continue
                if self.id > body.dev_num:
                    self.stats.undecryptable += 1
                    continue
                self.nonce = apply_nonce_update(self.nonce, body.n_new)
                fx.op(OP_NONCE_UPDATE)
                self.request = body

    def _adopt_parent(self, sender, fx):
        self.par_id = sender
        ack = wire.seal(wire.AckMsg(self.epoch, self.id, sender), self.group_key)
        fx.op(OP_MAC)
        fx.send(sender, wire.serialize(ack))
        fx.timer("ack_window", self.ack_wait)

    def _on_ack(self, msg: wire.AckMsg):
        if msg.parent != self.id or self.ack_closed or self.reported or self.request is None:
            return _NOTHING
        fx = Effects()
        fx.op(OP_MAC)
        if not wire.verify(msg, self.group_key):
            self.stats.bad_mac += 1
            return fx
        self.children.add(msg.child)
        return fx

    def _on_report(self, msg: wire.ReportUpMsg, sender):
        if self.request is None or msg.sender == self.id or msg.sender in self.child_reports:
            return _NOTHING
        fx = Effects()
        fx.op(OP_MAC)
        if not wire.verify(msg, self.group_key) or msg.presence.n_bits != self.request.dev_num:
            self.stats.bad_mac += 1
            return fx
        self.below |= msg.presence.bits
        expected = not self.reported and sender in self.children and msg.sender == sender
        if not expected:
            # a report the tree did not plan for (late, from an unacknowledged
            # child, or already forwarded): fold it in if we still can, else pass it on
            if self.reported:
                if self.par_id is not None:
                    fx.send(self.next_hops(), wire.serialize(msg))
                    self.stats.forwarded += 1
                return fx
            self.extra_reports.append(msg)
            fx.op(OP_VECTOR_OR)
            fx.op(OP_REPORT_PREP)
            return fx
        self.child_reports[sender] = msg
        # fold this child in right away: OR its vector, merge its aggregate
        fx.op(OP_VECTOR_OR)
        fx.op(OP_REPORT_PREP)
        if self.ack_closed and len(self.child_reports) == len(self.children):
            self._send_report(fx)
        return fx

    def next_hops(self) -> tuple[int, ...]:
        """The parent, then other synchronised neighbours to fall back on if it moved away.

        Known descendants (acknowledged children and anyone whose report came
        through here) are skipped so a detour never points back down the tree.
        """
        below = wire.PresenceVector(self.request.dev_num, self.below)
        return (self.par_id, *(u for u in self.upstream
                               if u != self.par_id and u not in self.children and not below.is_set(u)))

    def build_report(self) -> wire.ReportUpMsg:
        """Aggregate children's reports with this device's own contribution."""
        req = self.request
        presence = wire.PresenceVector(req.dev_num).with_id(self.id)
        parts = []
        for rep in [*self.child_reports.values(), *self.extra_reports]:
            presence = presence | rep.presence
            parts.append(rep.aggregate)
        if self.clus_id in req.a_send and self.h_prime == self.h_s:
            parts.append(wire.AggregateReport(attest_value(self.h_prime, self.nonce), (self.id,)))
        agg = wire.fold_aggregates(parts)
        return wire.seal(wire.ReportUpMsg(self.epoch, self.id, presence, agg), self.group_key)

    def _send_report(self, fx):
        if self.reported or self.par_id is None:
            return
        if not self.child_reports and not self.extra_reports:
            fx.op(OP_REPORT_PREP)
        rep = self.build_report()
        fx.op(OP_MAC)
        fx.send(self.next_hops(), wire.serialize(rep))
        fx.note("reported")
        self.reported = True
        if self.clus_id in self.request.a_calc:
            self.h_prime = crypto.mac(self.k_t, self.memory_image)
            fx.op(OP_HPRIME)

    # ------------------------------------------------------- secret updates

    def _on_secret_update(self, raw):
        try:
            epoch, variant, cluster = wire.secret_update_header(raw)
        except MalformedPacket:
            return _NOTHING
        fx = Effects()
        fx.send(None, raw, relay=True)
        if cluster != self.clus_id:
            return fx
        if variant == wire.VARIANT_A:
            self._try_variant_a(raw, fx)
        elif variant == wire.VARIANT_B:
            try:
                slot = wire.find_slot(raw, self.id)
            except MalformedPacket:
                return fx
            if slot is None:
                return fx
            fx.op(OP_MAC)
            if not crypto.mac_ok(self.k_a, wire.slot_mac_input(epoch, cluster, self.id, slot.ciphertext), slot.tag):
                self.stats.bad_mac += 1
                return fx
            self.k_c = crypto.decrypt(crypto.derive_key16(self.k_a), crypto.iv_for(epoch, SECRET_SUB_INTERVAL),
                                      slot.ciphertext)
            fx.note("cluster_key")
            pending, self.pending_a = self.pending_a, []
            for p in pending:
                self._try_variant_a(p, fx)
        return fx

    def _try_variant_a(self, raw, fx):
        try:
            msg = wire.parse(raw)
        except MalformedPacket:
            return
        fx.op(OP_MAC)
        if not wire.verify(msg, self.k_c):
            # may be addressed to a cluster key we have not received yet
            self.pending_a.append(raw)
            return
        plain = crypto.decrypt(crypto.derive_key16(self.k_c), crypto.iv_for(msg.epoch, SECRET_SUB_INTERVAL),
                               msg.ciphertext)
        self.nonce, self.k_0 = plain[:32], plain[32:]
        self.refreshed = True
        fx.note("group_secrets")

    def _on_rotate(self, msg: wire.CommitRotateMsg, raw):
        fx = Effects()
        fx.send(None, raw, relay=True)
        fx.op(OP_MAC)
        new_k0 = open_rotation(self.k_0, msg.epoch, msg.ciphertext, msg.tag)
        if new_k0 is not None:
            self.k_0 = new_k0
            self.refreshed = True
            fx.note("commitment")
        return fx
