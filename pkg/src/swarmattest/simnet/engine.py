"""Deterministic discrete-event loop driving provers and the verifier.

Events are ordered by ``(time, sender, seq)``: among packets arriving at
the same instant the one from the smaller node id is handled first, and
timers and scheduled calls precede packets.  A transmission is one event
that resolves its receivers from the link set at send time and then
schedules a single delivery event for all of them.  Processing cost is charged per
packet from its arrival; with ``DelayModel.serial_cpu`` a node instead
queues new work behind whatever it is still computing.
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from dataclasses import dataclass, field

from .. import crypto
from .delays import DelayModel
from .topology import Topology

TX, RX, TIMER, CALL = 0, 1, 2, 3


@dataclass
class Traffic:
    messages: int = 0
    bytes: int = 0
    by_type: dict = field(default_factory=lambda: defaultdict(int))


class Engine:
    def __init__(self, topo: Topology, delay: DelayModel, nodes: dict, dev_num: int, mobility=None):
        self.topo = topo
        self.delay = delay
        self.nodes = nodes  # id -> object with on_packet / on_timer (verifier at 0)
        self.mobility = mobility
        self._adj = None if mobility is not None else topo.static_adjacency()
        vec_bytes = (dev_num + 7) // 8
        tables = {}
        self.op_cost = []
        for plat in topo.platforms:
            if plat not in tables:
                tables[plat] = delay.op_table(plat, vec_bytes)
            self.op_cost.append(tables[plat])
        self.busy = [0.0] * topo.n
        self.heap: list = []
        self._seq = itertools.count()
        self.now = 0.0
        self.traffic = Traffic()
        self.offline: dict[int, list[tuple[float, float]]] = {}
        self.notes: list[tuple[float, int, str]] = []
        self.listeners: list = []  # callables(raw, digest, sender, t) seeing every transmission
        self.note_hooks: list = []
        self.in_flight = 0  # queued protocol events (everything except scheduled calls)

    # ------------------------------------------------------------ scheduling

    def push(self, t: float, kind: int, payload, tie: int = -1):
        if kind != CALL:
            self.in_flight += 1
        heapq.heappush(self.heap, (t, tie, next(self._seq), kind, payload))

    def transmit(self, t: float, sender: int, raw: bytes, dest=None, relay=False, digest=None):
        self.push(t, TX, (sender, raw, dest, relay, digest, self.delay.unicast_retries), sender)

    def call_at(self, t: float, fn):
        self.push(t, CALL, fn)

    def timer_at(self, t: float, node: int, tag: str):
        self.push(t, TIMER, (node, tag))

    def is_offline(self, node: int, t: float) -> bool:
        for start, end in self.offline.get(node, ()):
            if start <= t < end:
                return True
        return False

    def neighbours(self, node: int, t: float):
        if self.mobility is not None:
            return self.mobility.neighbours(node, t)
        return self._adj[node]

    # ------------------------------------------------------------------ loop

    def run(self, until: float | None = None, stop=None):
        """Process events up to ``until`` (inclusive) or until ``stop()`` turns true."""
        heap = self.heap
        while heap:
            if until is not None and heap[0][0] > until:
                break
            t, _, _, kind, payload = heapq.heappop(heap)
            if kind != CALL:
                self.in_flight -= 1
            self.now = t
            if kind == RX:
                self._deliver(t, payload)
            elif kind == TX:
                self._transmit(t, payload)
            elif kind == TIMER:
                node, tag = payload
                if not self.is_offline(node, t):
                    self._apply(node, t, self.nodes[node].on_timer(tag, t))
            else:
                payload(t)
            if stop is not None and stop():
                return
        if until is not None:
            self.now = max(self.now, until)

    def run_until_quiet(self):
        """Run until no packet, delivery or timer is pending."""
        if self.in_flight:
            self.run(stop=lambda: self.in_flight == 0)

    def _transmit(self, t, payload):
        sender, raw, dest, relay, digest, retries = payload
        if self.is_offline(sender, t):
            return
        if digest is None:
            digest = crypto.hash(raw)
        tr = self.traffic
        tr.messages += 1
        tr.bytes += len(raw)
        tr.by_type[raw[0]] += 1
        for fn in self.listeners:
            fn(raw, digest, sender, t)
        nbrs = self.neighbours(sender, t)
        if dest is not None:
            if isinstance(dest, int):
                dest = (dest,)
            hop = next((d for d in dest if d in nbrs), None)
            if hop is None:
                if retries > 0:  # no link-layer ack: try again later
                    self.push(t + self.delay.retry_interval, TX,
                              (sender, raw, dest, relay, digest, retries - 1), sender)
                return
            receivers = (hop,)
        else:
            receivers = nbrs
        if receivers:
            arrive = t + self.delay.hop_time(len(raw), relay)
            self.push(arrive, RX, (sender, receivers, raw, digest), sender)

    def _deliver(self, t, payload):
        sender, receivers, raw, digest = payload
        nodes = self.nodes
        for r in receivers:
            if self.offline and self.is_offline(r, t):
                continue
            self._apply(r, t, nodes[r].on_packet(raw, t, sender, digest), digest)

    def _apply(self, node: int, t: float, fx, digest=None):
        if not (fx.ops or fx.sends or fx.timers or fx.notes):
            return
        start = t if not self.delay.serial_cpu or t > self.busy[node] else self.busy[node]
        table = self.op_cost[node]
        cum = [0.0]
        acc = 0.0
        for op in fx.ops:
            acc += table.get(op, 0.0)  # background work is absent from the table
            cum.append(acc)
        self.busy[node] = start + acc
        for k, dest, raw, relay in fx.sends:
            self.push(start + cum[k], TX, (node, raw, dest, relay, digest if relay else None,
                                           self.delay.unicast_retries), node)
        for k, tag, delay in fx.timers:
            self.push(start + cum[k] + delay, TIMER, (node, tag))
        for k, label in fx.notes:
            at = start + cum[k]
            self.notes.append((at, node, label))
            for hook in self.note_hooks:
                hook(at, node, label)
