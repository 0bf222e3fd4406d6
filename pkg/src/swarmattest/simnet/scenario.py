"""Multi-epoch scenario runner and the metrics it reports.

One scenario provisions a swarm on a topology, then repeats: pick the
clusters to attest, let the verifier run an epoch, label devices, and
either rotate the keychain commitment or, after a detected compromise,
refresh every group secret.  Labels are compared against the adversary's
ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import crypto, wire
from ..cluster_select import (DEFAULT_T_MAX_MIN, ClusterHistory, SelectionProblem, select_clusters,
                              selected_ids, update_history)
from ..errors import InvariantViolation
from ..prover import OP_KEY_AUTH, OP_MAC
from ..schedule import EpochSchedule, LocalClock
from ..verifier import (HEALTHY, LABELS, NOT_ASKED, PHYSICAL, REMOTE, UNVERIFIED, EpochOutcome,
                        provision_swarm)
from .adversary import AdversaryConfig, Eavesdropper, tamper_image
from .delays import DelayModel, auto_schedule, report_size, worst_costs
from .engine import Engine
from .mobility import DEFAULT_SPEED, DEFAULT_TICK_MS, RandomWaypoint
from .topology import MOBILE, Topology

MODE_PHYSICAL = "physical-only"
MODE_PARTIAL = "partial"
MODE_FULL = "full"


@dataclass(frozen=True)
class SelectionPolicy:
    """Either fixed cluster lists or the history-driven optimiser."""
    a_send: tuple[int, ...] | None = None
    a_calc: tuple[int, ...] | None = None  # defaults to a_send
    tr_cov: float = 1.0
    t_max: float = DEFAULT_T_MAX_MIN

    def choose(self, histories, t_next_min: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.a_send is not None:
            a_send = tuple(sorted(self.a_send))
        else:
            problem = SelectionProblem.from_histories(histories, self.tr_cov, self.t_max, t_next_min)
            a_send = selected_ids(select_clusters(problem))
        a_calc = tuple(sorted(self.a_calc)) if self.a_calc is not None else a_send
        return a_send, a_calc


@dataclass
class RekeyMetrics:
    variant_a_ms: float | None   # last healthy-cluster device updated, from the first send
    variant_b_ms: float | None   # last device of a tainted cluster updated
    a_targets: int
    a_reached: int
    b_targets: int
    b_reached: int
    excluded: int

    def to_json(self) -> dict:
        return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


@dataclass
class EpochMetrics:
    epoch: int
    start_ms: float
    runtime_ms: float
    mode: str
    a_send: tuple[int, ...]
    label_counts: dict
    false_pos_raw: int
    false_pos_recovered: int
    detected_remote: int
    detected_physical: int
    unverifiable: bool
    degenerate: bool
    false_negatives: int
    latent_tampers: int
    messages: int
    bytes: int
    rekey: RekeyMetrics | None
    outcome: EpochOutcome = field(repr=False)

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "start_ms": round(self.start_ms, 6),
            "simulated_runtime_ms": round(self.runtime_ms, 6),
            "mode": self.mode,
            "a_send": list(self.a_send),
            "label_counts": self.label_counts,
            "false_pos_raw": self.false_pos_raw,
            "false_pos_recovered": self.false_pos_recovered,
            "detected_remote": self.detected_remote,
            "detected_physical": self.detected_physical,
            "unverifiable": self.unverifiable,
            "degenerate": self.degenerate,
            "false_negatives": self.false_negatives,
            "latent_tampers": self.latent_tampers,
            "messages": self.messages,
            "bytes": self.bytes,
            "rekey": self.rekey.to_json() if self.rekey else None,
        }


@dataclass
class ScenarioMetrics:
    n: int
    topology: str
    schedule: EpochSchedule
    epochs: list[EpochMetrics]
    false_negatives: int            # per-epoch misses plus captures never detected
    undetected_captures: list[int]
    unresolved_captures: list[int]  # captured too late for any simulated epoch to see them
    post_rotation_authenticated: int
    tracker_authenticated: int

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "topology": self.topology,
            "t_att_ms": round(self.schedule.t_att, 6),
            "sub_intervals_ms": [[round(o, 6), round(d, 6)] for o, d in self.schedule.sub_intervals],
            "false_negatives": self.false_negatives,
            "undetected_captures": self.undetected_captures,
            "unresolved_captures": self.unresolved_captures,
            "post_rotation_authenticated": self.post_rotation_authenticated,
            "tracker_authenticated": self.tracker_authenticated,
            "epochs": [e.to_json() for e in self.epochs],
        }


def attestation_mode(a_send, n_clusters: int) -> str:
    if not a_send:
        return MODE_PHYSICAL
    if len(set(a_send)) == n_clusters:
        return MODE_FULL
    return MODE_PARTIAL


def default_ack_wait(delay: DelayModel, platforms=None) -> float:
    """Enough for a child to hear the key relay, answer, and be verified."""
    worst = worst_costs(delay, platforms)
    mac = worst.get(OP_MAC, 0.0)
    key_hop = delay.hop_time(38, relay=True) + worst.get(OP_KEY_AUTH, 0.0)
    ack_hop = delay.hop_time(wire.ACK_SIZE) + 2 * mac
    return max(100.0, 2.0 * (key_hop + ack_hop))


def default_child_wait(depth: int, delay: DelayModel, dev_num: int, platforms=None) -> float:
    """Twice the per-hop report latency times the depth below a node."""
    worst = worst_costs(delay, platforms)
    hop = delay.hop_time(report_size(dev_num, dev_num)) + 2 * worst.get(OP_MAC, 0.0)
    return 2.0 * hop * max(1, depth)


class _Truth:
    """What the adversary actually did, as seen from a given instant."""

    def __init__(self, adversary: AdversaryConfig | None):
        self.adv = adversary or AdversaryConfig(t_adv=math.inf)

    def touched_before(self, t: float) -> set[int]:
        out = {r.device for r in self.adv.remote if r.time < t}
        out |= {c.device for c in self.adv.physical if c.start < t}
        return out


@dataclass(frozen=True)
class TimingPlan:
    schedule: EpochSchedule
    ack_wait: float
    child_wait: float


def plan_timing(topo: Topology, delay: DelayModel | None = None, *, depth_hint: int | None = None,
                ack_wait: float | None = None, child_wait: float | None = None,
                n_clusters: int = 8) -> TimingPlan:
    """Epoch layout and prover waits sized for ``topo``.

    Mobile swarms get twice their initial depth (at least 4) since routes
    stretch as nodes move.
    """
    delay = delay or DelayModel()
    depth = depth_hint
    if depth is None:
        depth = topo.depth()
        if topo.kind == MOBILE:
            depth = max(2 * depth, 4)
    plats = topo.platforms[1:]
    if ack_wait is None:
        ack_wait = default_ack_wait(delay, plats)
    if child_wait is None:
        child_wait = default_child_wait(depth, delay, topo.n_devices, plats)
    schedule = auto_schedule(depth, topo.n_devices, delay, ack_wait=ack_wait, child_wait=child_wait,
                             platforms=plats, n_clusters=min(n_clusters, topo.n_devices))
    return TimingPlan(schedule, ack_wait, child_wait)


def _seed_bytes(seed: int, label: str) -> bytes:
    return crypto.hash(f"{label}/{seed}".encode())


def run_scenario(topo: Topology, schedule: EpochSchedule | None = None, delay: DelayModel | None = None,
                 adversary: AdversaryConfig | None = None, selection: SelectionPolicy | None = None,
                 epochs: int = 1, seed: int = 0, *, n_clusters: int = 8, image_size: int = 64,
                 ack_wait: float | None = None, child_wait: float | None = None,
                 clock_skew: float | None = None, speed: float = DEFAULT_SPEED,
                 tick: float = DEFAULT_TICK_MS, depth_hint: int | None = None) -> ScenarioMetrics:
    """Simulate ``epochs`` attestation rounds and compare labels with ground truth."""
    delay = delay or DelayModel()
    selection = selection or SelectionPolicy()
    dev_num = topo.n_devices
    n_clusters = min(n_clusters, dev_num)
    rng = np.random.default_rng([seed, 7])

    plan = plan_timing(topo, delay, depth_hint=depth_hint, ack_wait=ack_wait, child_wait=child_wait,
                       n_clusters=n_clusters)
    ack_wait, child_wait = plan.ack_wait, plan.child_wait
    if schedule is None:
        schedule = plan.schedule
    if adversary is not None and schedule.t_att > adversary.t_adv:
        raise InvariantViolation(f"epoch length {schedule.t_att} exceeds T_adv {adversary.t_adv}")

    if clock_skew is None:
        clock_skew = schedule.sync_error / 2
    skews = rng.uniform(-clock_skew, clock_skew, size=topo.n) if clock_skew > 0 else np.zeros(topo.n)
    verifier, provers = provision_swarm(
        dev_num, n_clusters, schedule, _seed_bytes(seed, "swarm"), image_size=image_size,
        clock_of=lambda i: LocalClock(float(skews[i])), ack_wait=ack_wait, child_wait=child_wait)
    nodes = {0: verifier, **provers}
    mobility = RandomWaypoint(topo, int(rng.integers(2**32)), speed, tick) if topo.kind == MOBILE else None
    eng = Engine(topo, delay, nodes, dev_num, mobility)

    truth = _Truth(adversary)
    trackers: dict[int, Eavesdropper] = {}
    if adversary is not None:
        _install_adversary(eng, adversary, provers, trackers, seed)

    histories = [ClusterHistory(frozenset(rec.members)) for _, rec in sorted(verifier.registry.clusters.items())]
    cluster_of = {i: p.clus_id for i, p in provers.items()}
    notes: dict[str, dict[int, float]] = {}

    def on_note(at, node, label):
        if label in ("group_secrets", "cluster_key"):
            notes.setdefault(label, {})[node] = at
    eng.note_hooks.append(on_note)

    results: list[EpochMetrics] = []
    detected_at: dict[int, int] = {}     # captured device -> first epoch that flagged it
    excluded: set[int] = set()           # devices cut off by an earlier secret update
    fn_total = 0
    epoch_windows = []
    e = 0
    for _ in range(epochs):
        t0 = schedule.start_of(e)
        eng.run(until=t0)
        msgs0, bytes0 = eng.traffic.messages, eng.traffic.bytes
        remote_truth = {i for i, p in provers.items() if p.h_prime != p.h_s}
        latent = sum(1 for i, p in provers.items()
                     if p.h_prime == p.h_s and crypto.mac(p.k_t, p.memory_image) != p.h_s)

        a_send, a_calc = selection.choose(histories, t0 / 60000.0)
        bcasts, timers = verifier.begin_epoch(e, a_send, a_calc)
        for t, raw in bcasts:
            eng.transmit(t, 0, raw)
        for t, tag in timers:
            eng.timer_at(t, 0, tag)
        eng.run(stop=lambda: verifier.complete)
        outcome = verifier.finish_epoch()
        labels = outcome.labels
        t_done = (verifier.complete_at if verifier.complete_at is not None else eng.now) + delay.verify_ms

        # ---- compare with ground truth
        touched = truth.touched_before(t0 + schedule.t_att)
        flagged = {i for i, lab in labels.items() if lab in (PHYSICAL, REMOTE)}
        fp = flagged - touched
        recovered = {i for i, p in provers.items()
                     if p.stats.recovery_used and labels[i] in (HEALTHY, NOT_ASKED) and i not in touched}
        fn = 0
        for i in remote_truth:
            if cluster_of[i] in outcome.attested_clusters and labels[i] == HEALTHY:
                fn += 1
        for dev, first in detected_at.items():
            if labels[dev] in (HEALTHY, NOT_ASKED):
                fn += 1
        if adversary is not None:
            for cap in adversary.physical:
                if cap.device in detected_at or cap.start >= t0 + schedule.t_att or cap.end <= t0:
                    continue
                if labels[cap.device] in (PHYSICAL, REMOTE) or not outcome.verified:
                    detected_at[cap.device] = e
        fn_total += fn
        epoch_windows.append((t0, t0 + schedule.t_att))

        # ---- rotate secrets
        rekey = None
        notes.clear()
        if any(labels[i] == PHYSICAL for i in flagged - excluded):
            excluded |= flagged
            msgs = verifier.rotate_group_secrets(excluded)
            for dev, tr in trackers.items():
                if dev in excluded:
                    tr.mark_rotation(e)
            send_at = []
            for raw, dep in msgs:
                t = t_done if dep is None else send_at[dep] + delay.tx_time(len(msgs[dep][0]))
                send_at.append(t)
                eng.transmit(t, 0, raw)
            eng.run_until_quiet()
            rekey = _rekey_metrics(verifier.registry, excluded, notes.get("group_secrets", {}), t_done)
        else:
            eng.transmit(t_done, 0, verifier.rotate_commitment_msg())
            eng.run_until_quiet()

        results.append(EpochMetrics(
            epoch=e, start_ms=t0, runtime_ms=outcome.duration + delay.verify_ms,
            mode=attestation_mode(outcome.attested_clusters, n_clusters), a_send=outcome.attested_clusters,
            label_counts={lab: outcome.count(lab) for lab in LABELS},
            false_pos_raw=len(fp) + len(recovered), false_pos_recovered=len(fp),
            detected_remote=outcome.count(REMOTE), detected_physical=outcome.count(PHYSICAL),
            unverifiable=not outcome.verified, degenerate=outcome.degenerate, false_negatives=fn,
            latent_tampers=latent, messages=eng.traffic.messages - msgs0, bytes=eng.traffic.bytes - bytes0,
            rekey=rekey, outcome=outcome))
        histories = update_history(histories, outcome.attested_clusters, flagged, t0 / 60000.0)
        e = max(e + 1, math.ceil(eng.now / schedule.t_att - 1e-9))

    undetected, unresolved = [], []
    if adversary is not None:
        for cap in adversary.physical:
            if cap.device in detected_at:
                continue
            seen = any(lo < cap.end and cap.start < hi for lo, hi in epoch_windows)
            (undetected if seen else unresolved).append(cap.device)
    # a capture no epoch could see cannot be judged; one that overlapped an epoch and was never flagged is a miss
    fn_total += len(undetected)

    return ScenarioMetrics(
        n=topo.n, topology=topo.kind, schedule=schedule, epochs=results, false_negatives=fn_total,
        undetected_captures=sorted(undetected), unresolved_captures=sorted(unresolved),
        post_rotation_authenticated=sum(t.post_rotation_authenticated for t in trackers.values()),
        tracker_authenticated=sum(t.authenticated for t in trackers.values()))


def _install_adversary(eng: Engine, adv: AdversaryConfig, provers, trackers, seed):
    for r in adv.remote:
        p = provers[r.device]
        bad = tamper_image(p.memory_image, seed)
        if r.time < 0:
            # tampered before deployment's first H' computation
            p.memory_image = bad
            p.h_prime = crypto.mac(p.k_t, bad)
        else:
            eng.call_at(r.time, lambda t, p=p, bad=bad: setattr(p, "memory_image", bad))
    for cap in adv.physical:
        eng.offline.setdefault(cap.device, []).append((cap.start, cap.end))
        p = provers[cap.device]
        if adv.sophisticated:
            tr = Eavesdropper(cap.device)
            trackers[cap.device] = tr
            eng.listeners.append(lambda raw, digest, sender, t, tr=tr: tr.observe(raw, digest))
            eng.call_at(cap.start, lambda t, tr=tr, p=p: tr.capture(p))
            eng.call_at(cap.end, lambda t, tr=tr, p=p: tr.resync(p) if tr.tracking else None)


def _rekey_metrics(registry, excluded, applied: dict[int, float], t_send: float) -> RekeyMetrics:
    a_targets, b_targets = [], []
    for cid, rec in registry.clusters.items():
        healthy = [m for m in rec.members if m not in excluded]
        if len(healthy) == len(rec.members):
            a_targets.extend(healthy)
        else:
            b_targets.extend(healthy)
    a_times = [applied[i] for i in a_targets if i in applied]
    b_times = [applied[i] for i in b_targets if i in applied]
    return RekeyMetrics(
        variant_a_ms=(max(a_times) - t_send) if a_times else None,
        variant_b_ms=(max(b_times) - t_send) if b_times else None,
        a_targets=len(a_targets), a_reached=len(a_times), b_targets=len(b_targets), b_reached=len(b_times),
        excluded=len(excluded))
