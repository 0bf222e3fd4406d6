"""Root of the attestation tree: provisioning, epoch orchestration, labeling.

The verifier owns the one-way keychain, the group nonce and every device's
long-term keys.  ``begin_epoch`` produces the four timed broadcasts of an
epoch; acks and reports from the verifier's direct children arrive through
``on_packet`` exactly as they would at a prover; ``finish_epoch`` checks the
aggregate and labels every device.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto, wire
from .errors import MalformedPacket
from .keychain import KEYS_PER_EPOCH, KeyChain, generate_chain, rotate_commitment
from .prover import (OP_MAC, SECRET_SUB_INTERVAL, Effects, Prover, attest_value, derive_kenc,
                     group_key, apply_nonce_update)
from .schedule import EpochSchedule, LocalClock

VERIFIER_ID = 0

HEALTHY = "Healthy"
REMOTE = "RemotelyCompromised"
PHYSICAL = "PhysicallyCompromised"
NOT_ASKED = "NotAsked"
UNVERIFIED = "Unverified"
LABELS = (HEALTHY, REMOTE, PHYSICAL, NOT_ASKED, UNVERIFIED)
COMPROMISED_LABELS = (REMOTE, PHYSICAL)


@dataclass
class DeviceRecord:
    id: int
    clus_id: int
    k_a: bytes
    k_t: bytes
    h_s: bytes  # reference MAC of the device's safe image


@dataclass
class ClusterRecord:
    id: int
    k_c: bytes
    members: list[int]


@dataclass
class DeviceRegistry:
    devices: dict[int, DeviceRecord]
    clusters: dict[int, ClusterRecord]

    def __post_init__(self):
        ids = sorted(self.devices)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("device ids must be dense in 1..DevNum")
        seen = set()
        for c in self.clusters.values():
            for m in c.members:
                if m in seen or m not in self.devices or self.devices[m].clus_id != c.id:
                    raise ValueError(f"cluster membership inconsistent at device {m}")
                seen.add(m)
        if seen != set(ids):
            raise ValueError("clusters must partition the device set")

    @property
    def dev_num(self) -> int:
        return len(self.devices)

    def cluster_sizes(self) -> dict[int, int]:
        return {c: len(rec.members) for c, rec in sorted(self.clusters.items())}


@dataclass
class EpochOutcome:
    epoch: int
    labels: dict[int, str]
    attested_clusters: tuple[int, ...]
    duration: float = 0.0
    verified: bool = True          # False: the aggregate did not check out (Unverifiable)
    degenerate: bool = False       # no report reached the verifier at all
    presence: wire.PresenceVector | None = None
    aggregate: wire.AggregateReport | None = None

    def count(self, label: str) -> int:
        return sum(1 for v in self.labels.values() if v == label)

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "duration_ms": round(self.duration, 6),
            "verified": self.verified,
            "degenerate": self.degenerate,
            "attested_clusters": list(self.attested_clusters),
            "label_counts": {lab: self.count(lab) for lab in LABELS},
            "labels": {str(k): v for k, v in sorted(self.labels.items())},
        }


def contiguous_clusters(n_devices: int, n_clusters: int) -> dict[int, int]:
    """Equal-size contiguous id ranges: device id -> cluster id (1-based)."""
    if not 1 <= n_clusters <= min(255, n_devices):
        raise ValueError(f"cluster count must be in 1..{min(255, n_devices)}")
    return {i: (i - 1) * n_clusters // n_devices + 1 for i in range(1, n_devices + 1)}


def verify_reports(registry: DeviceRegistry, nonce: bytes, presence: wire.PresenceVector | None,
                   agg: wire.AggregateReport | None, a_send) -> tuple[dict[int, str], bool]:
    """Label every device from the root presence vector and aggregate.

    Returns ``(labels, verified)``.  When the aggregate does not match the
    recomputed XOR the software-state labels of asked devices become
    ``Unverified``; nobody is ever labeled Healthy on a rejected aggregate.
    """
    n = registry.dev_num
    if presence is None:
        presence = wire.PresenceVector(n)
    if agg is None:
        agg = wire.AggregateReport()
    a_send = set(a_send)
    devices = registry.devices

    verified = True
    if presence.n_bits != n:
        verified = False
    else:
        acc = 0
        for i in agg.ids:
            rec = devices.get(i)
            if rec is None or rec.clus_id not in a_send or not presence.is_set(i):
                verified = False
                break
            acc ^= int.from_bytes(attest_value(rec.h_s, nonce), "big")
        if verified and acc.to_bytes(crypto.DIGEST_SIZE, "big") != agg.attest_xor:
            verified = False

    in_agg = set(agg.ids) if verified else set()
    labels = {}
    for i in range(1, n + 1):
        if not presence.is_set(i):
            labels[i] = PHYSICAL
        elif devices[i].clus_id not in a_send:
            labels[i] = NOT_ASKED
        elif not verified:
            labels[i] = UNVERIFIED
        elif i in in_agg:
            labels[i] = HEALTHY
        else:
            labels[i] = REMOTE
    return labels, verified


class Verifier:
    def __init__(self, registry: DeviceRegistry, schedule: EpochSchedule, drbg: crypto.HashDRBG,
                 nonce: bytes, ack_wait: float = 500.0, keys_per_epoch: int = KEYS_PER_EPOCH):
        self.registry = registry
        self.schedule = schedule
        self.drbg = drbg
        self.nonce = nonce
        self.ack_wait = ack_wait
        self.keys_per_epoch = keys_per_epoch
        self._chain_no = 0
        self.chain = self._make_chain()
        self.next_chain = self._make_chain()
        self.k_0 = self.chain.commitment
        self.epoch = -1
        self.id = VERIFIER_ID
        self._reset()

    def _make_chain(self) -> KeyChain:
        seed = self.drbg.fork(f"chain/{self._chain_no}").read(32)
        self._chain_no += 1
        return generate_chain(seed, self.keys_per_epoch)

    def _reset(self):
        self.children: set[int] = set()
        self.child_reports: dict[int, wire.ReportUpMsg] = {}
        self.present_bits = 0  # running OR of every accepted presence vector
        self.seen: set[bytes] = set()
        self.ack_closed = False
        self.complete = False
        self.complete_at: float | None = None
        self.a_send: tuple[int, ...] = ()
        self.a_calc: tuple[int, ...] = ()
        self.nonce_after_first = None

    @property
    def group_key(self) -> bytes:
        return group_key(self.k_0, self.nonce)

    # ----------------------------------------------------------- epoch flow

    def begin_epoch(self, epoch: int, a_send=(), a_calc=()):
        """Prepare the epoch.  Returns ``(broadcasts, timers)`` with absolute times.

        ``broadcasts`` is a list of ``(time, raw)``; ``timers`` a list of
        ``(time, tag)`` to be delivered back through :meth:`on_timer`.
        """
        sched = self.schedule
        self.epoch = epoch
        self._reset()
        self.a_send = tuple(sorted(set(a_send)))
        self.a_calc = tuple(sorted(set(a_calc)))
        k1, k2 = self.chain[1], self.chain[2]

        n1 = self.drbg.read(32)
        upd = wire.seal(wire.NonceUpdateMsg(epoch, n1), k1)
        self.nonce = apply_nonce_update(self.nonce, n1)
        self.nonce_after_first = self.nonce

        n2 = self.drbg.read(32)
        body = wire.AttestRequestBody(n2, self.registry.dev_num, self.a_send, self.a_calc)
        ct = crypto.encrypt(derive_kenc(k2, self.nonce), crypto.iv_for(epoch, 1), body.encode())
        req = wire.seal(wire.AttestRequestMsg(epoch, ct), k2)
        self.nonce = apply_nonce_update(self.nonce, n2)

        t_k2 = sched.disclosure_time(epoch, 2)
        broadcasts = [
            (sched.sub_start(epoch, 0), wire.serialize(upd)),
            (sched.sub_start(epoch, 1), wire.serialize(req)),
            (sched.disclosure_time(epoch, 1), wire.serialize(wire.KeyDiscloseMsg(epoch, 1, k1))),
            (t_k2, wire.serialize(wire.KeyDiscloseMsg(epoch, 2, k2))),
        ]
        timers = [(t_k2 + self.ack_wait, "ack_window"), (self.collection_deadline(epoch), "deadline")]
        return broadcasts, timers

    def collection_deadline(self, epoch: int) -> float:
        """End of the last sub-interval plus ``d``; whatever follows is left for secret updates."""
        sched = self.schedule
        end = sched.sub_end(epoch, len(sched.sub_intervals) - 1) + sched.d
        return min(max(end, sched.disclosure_time(epoch, 2) + self.ack_wait), sched.start_of(epoch) + sched.t_att)

    def on_packet(self, raw: bytes, arrival: float, sender: int, digest: bytes | None = None) -> Effects:
        fx = Effects()
        if self.complete or len(raw) < 5 or wire.peek_epoch(raw) != self.epoch:
            return fx
        kind = raw[0]
        if kind not in (wire.ACK, wire.REPORT_UP):
            return fx  # our own broadcasts echoed back by neighbours
        if digest is None:
            digest = crypto.hash(raw)
        if digest in self.seen:
            return fx
        self.seen.add(digest)
        try:
            msg = wire.parse(raw)
        except MalformedPacket:
            return fx
        if not wire.verify(msg, self.group_key):
            return fx
        if kind == wire.ACK:
            if msg.parent == self.id and not self.ack_closed:
                self.children.add(msg.child)
        elif msg.sender not in self.child_reports and msg.presence.n_bits == self.registry.dev_num:
            # late or forwarded reports count as well; each origin is folded once
            self.child_reports[msg.sender] = msg
            self.present_bits |= msg.presence.bits
            if self.ack_closed and self._all_in():
                self._complete(arrival, fx)
        return fx

    def on_timer(self, tag: str, now: float) -> Effects:
        fx = Effects()
        if tag == "ack_window":
            self.ack_closed = True
            if self._all_in():
                self._complete(now, fx)
        elif tag == "deadline" and not self.complete:
            self._complete(now, fx)
        return fx

    def _all_in(self) -> bool:
        """Every child answered and every device is accounted for.

        A device missing from the vector may still be on its way through a
        detour, so collection then runs until the deadline.
        """
        n = self.registry.dev_num
        pad = (-n) % 8  # vectors are MSB-first and padded to whole bytes
        full = ((1 << n) - 1) << pad
        return self.children <= self.child_reports.keys() and self.present_bits == full

    def _complete(self, now, fx):
        if not self.complete:
            self.complete = True
            self.complete_at = now
            fx.note("collection_complete")

    def finish_epoch(self) -> EpochOutcome:
        reports = list(self.child_reports.values())
        n = self.registry.dev_num
        presence = wire.PresenceVector(n)
        for r in reports:
            presence = presence | r.presence
        try:
            agg = wire.fold_aggregates(r.aggregate for r in reports)
        except ValueError:
            agg = None
        if agg is None:
            labels, _ = verify_reports(self.registry, self.nonce, presence, None, self.a_send)
            labels = {i: (PHYSICAL if v == PHYSICAL else UNVERIFIED if v != NOT_ASKED else v)
                      for i, v in labels.items()}
            verified = False
        else:
            labels, verified = verify_reports(self.registry, self.nonce, presence, agg, self.a_send)
        start = self.schedule.start_of(self.epoch)
        end = self.complete_at if self.complete_at is not None else self.collection_deadline(self.epoch)
        return EpochOutcome(self.epoch, labels, self.a_send, end - start, verified,
                            degenerate=not reports, presence=presence, aggregate=agg)

    # ------------------------------------------------------- secret rotation

    def rotate_commitment_msg(self) -> bytes:
        """Move to the next keychain; broadcast its commitment under the current one."""
        if self.epoch < 0:
            raise ValueError("the commitment can only be rotated after an epoch has started")
        new_chain = self.next_chain
        ct, tag = rotate_commitment(self.k_0, new_chain.commitment, self.epoch)
        self._advance_chain()
        return wire.serialize(wire.CommitRotateMsg(self.epoch, ct, tag))

    def _advance_chain(self):
        self.chain = self.next_chain
        self.next_chain = self._make_chain()
        self.k_0 = self.chain.commitment

    def rotate_group_secrets(self, compromised) -> list[tuple[bytes, int | None]]:
        """Fresh nonce and commitment for every healthy device.

        Returns ``[(raw, depends_on)]``: ``depends_on`` is the index of an
        earlier packet that must have left the radio first (the follow-up
        variant-A message after its cluster's key-slot message).
        """
        compromised = set(compromised)
        if not compromised:
            raise ValueError("secret rotation needs at least one compromised device")
        if self.epoch < 0:
            raise ValueError("secrets can only be rotated after an epoch has started")
        epoch = self.epoch
        iv = crypto.iv_for(epoch, SECRET_SUB_INTERVAL)
        new_nonce = self.drbg.read(32)
        new_chain = self.next_chain
        secrets = new_nonce + new_chain.commitment

        def variant_a(cluster, k_c):
            ct = crypto.encrypt(crypto.derive_key16(k_c), iv, secrets)
            return wire.serialize(wire.seal(wire.SecretUpdateA(epoch, cluster, ct), k_c))

        healthy_msgs, tainted_msgs = [], []
        for cid, rec in sorted(self.registry.clusters.items()):
            healthy = [m for m in rec.members if m not in compromised]
            if not healthy:
                continue
            if len(healthy) == len(rec.members):
                healthy_msgs.append((variant_a(cid, rec.k_c), None))
                continue
            new_kc = self.drbg.read(16)
            slots = []
            for m in sorted(healthy):
                k_a = self.registry.devices[m].k_a
                ct = crypto.encrypt(crypto.derive_key16(k_a), iv, new_kc)
                slots.append(wire.KeySlot(m, ct, crypto.mac(k_a, wire.slot_mac_input(epoch, cid, m, ct))))
            tainted_msgs.append((cid, wire.serialize(wire.SecretUpdateB(epoch, cid, tuple(slots))),
                                 variant_a(cid, new_kc)))
            rec.k_c = new_kc
        out = list(healthy_msgs)
        for cid, b_raw, a_raw in tainted_msgs:
            out.append((b_raw, None))
            out.append((a_raw, len(out) - 1))
        self.nonce = new_nonce
        self._advance_chain()
        return out


def provision_swarm(n_devices: int, n_clusters: int, schedule: EpochSchedule, seed,
                    image_size: int = 64, cluster_of: dict[int, int] | None = None,
                    clock_of=None, **prover_kwargs) -> tuple[Verifier, dict[int, Prover]]:
    """Initialise a verifier and ``n_devices`` provers sharing its secrets."""
    drbg = crypto.HashDRBG(seed)
    dev_rng = drbg.fork("devices")
    cluster_of = cluster_of or contiguous_clusters(n_devices, n_clusters)
    clusters = {}
    for cid in sorted(set(cluster_of.values())):
        clusters[cid] = ClusterRecord(cid, drbg.fork(f"cluster/{cid}").read(16), [])
    nonce0 = drbg.fork("nonce0").read(32)
    devices, images = {}, {}
    for i in range(1, n_devices + 1):
        k_a, k_t = dev_rng.read(16), dev_rng.read(16)
        image = dev_rng.read(image_size)
        cid = cluster_of[i]
        devices[i] = DeviceRecord(i, cid, k_a, k_t, crypto.mac(k_t, image))
        clusters[cid].members.append(i)
        images[i] = image
    registry = DeviceRegistry(devices, clusters)
    verifier = Verifier(registry, schedule, drbg.fork("verifier"), nonce0,
                        ack_wait=prover_kwargs.get("ack_wait", 500.0))
    provers = {}
    for i, rec in devices.items():
        clock = clock_of(i) if clock_of else LocalClock()
        provers[i] = Prover(i, rec.clus_id, rec.k_a, rec.k_t, clusters[rec.clus_id].k_c, verifier.k_0,
                            nonce0, images[i], schedule, clock, **prover_kwargs)
    return verifier, provers
