"""Per-hop latency model and automatic epoch sizing.

A packet sent at ``t`` is fully received by every neighbour at
``t + propagation + size_bits / throughput``.  The receiver then spends the
platform cost of each cryptographic operation its handler performed before
the next outgoing packet leaves.  Operation costs are the measured figures
for two 8-bit microcontrollers (A: ATmega328P, B: ATmega1284P).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from ..prover import (OP_HPRIME, OP_KEY_AUTH, OP_MAC, OP_NONCE_UPDATE, OP_REPORT_PREP, OP_REQUEST,
                      OP_VECTOR_OR)
from ..schedule import DEFAULT_BROADCAST_WINDOW_MS, DEFAULT_D_MS, DEFAULT_SYNC_ERROR_MS, EpochSchedule
from ..wire import SLOT_SIZE

# milliseconds; vector OR is per 255-byte block, H' per full image
TABLE_I = {
    "A": {OP_KEY_AUTH: 3.213, OP_NONCE_UPDATE: 6.34, OP_REQUEST: 47.38, OP_REPORT_PREP: 3.61,
          OP_VECTOR_OR: 0.449, OP_MAC: 12.7, OP_HPRIME: 1470.0},
    "B": {OP_KEY_AUTH: 5.145, OP_NONCE_UPDATE: 10.10, OP_REQUEST: 75.9, OP_REPORT_PREP: 5.184,
          OP_VECTOR_OR: 0.648, OP_MAC: 20.36, OP_HPRIME: 9680.0},
}
VECTOR_OR_BLOCK = 255

PROPAGATION_MS = 17.0
THROUGHPUT_KBPS = 56.0
FRAME_BYTES = 127
VERIFIER_VERIFY_MS = 6300.0


@dataclass(frozen=True)
class DelayModel:
    costs: dict = field(default_factory=lambda: {p: dict(c) for p, c in TABLE_I.items()})
    propagation: float = PROPAGATION_MS
    throughput_kbps: float = THROUGHPUT_KBPS
    frame_bytes: int = FRAME_BYTES
    cut_through: bool = True
    serial_cpu: bool = False  # queue a node's handler work behind its previous work
    verify_ms: float = 0.0  # verifier-side aggregate check, added to the epoch runtime
    unicast_retries: int = 40  # link-layer resends while the addressee is out of range
    retry_interval: float = 100.0

    def __post_init__(self):
        for plat, table in self.costs.items():
            for op, v in table.items():
                if v < 0:
                    raise ValueError(f"negative cost for {plat}/{op}")
        if self.propagation < 0 or self.throughput_kbps <= 0 or self.frame_bytes <= 0:
            raise ValueError("propagation must be >= 0, throughput and frame size positive")
        if self.unicast_retries < 0 or self.retry_interval <= 0:
            raise ValueError("unicast_retries must be >= 0 and retry_interval positive")

    def with_overrides(self, overrides: dict) -> "DelayModel":
        """Copy with selected fields or per-platform costs replaced."""
        costs = {p: dict(c) for p, c in self.costs.items()}
        fields = {}
        for key, val in overrides.items():
            if key == "costs":
                for plat, table in val.items():
                    costs.setdefault(plat, {}).update(table)
            else:
                fields[key] = val
        return replace(self, costs=costs, **fields)

    def tx_time(self, size: int) -> float:
        return size * 8.0 / self.throughput_kbps  # kbit/s == bit/ms

    def hop_time(self, size: int, relay: bool = False) -> float:
        if relay and self.cut_through:
            size = min(size, self.frame_bytes)
        return self.propagation + self.tx_time(size)

    def op_table(self, platform: str, vector_bytes: int) -> dict:
        """Cost per operation on ``platform`` with vector OR scaled to the vector size."""
        if platform not in self.costs:
            return {}  # the verifier's own work is not modelled
        table = dict(self.costs[platform])
        # H' is recomputed in idle time and never delays protocol traffic
        table.pop(OP_HPRIME, None)
        table[OP_VECTOR_OR] = table[OP_VECTOR_OR] * vector_bytes / VECTOR_OR_BLOCK
        return table


def report_size(dev_num: int, ids_in_subtree: int) -> int:
    """Upper bound on a report carrying ``ids_in_subtree`` attested ids."""
    vec = (dev_num + 7) // 8
    ids = min(3 * ids_in_subtree, vec) + 3
    return 5 + 3 + 4 + vec + 32 + 1 + ids + 32


def worst_costs(delay: DelayModel, platforms=None) -> dict:
    """Per-operation maximum over the platforms actually deployed."""
    plats = [p for p in (set(platforms) if platforms is not None else delay.costs) if p in delay.costs]
    out: dict = {}
    for p in plats:
        for op, v in delay.costs[p].items():
            out[op] = max(out.get(op, 0.0), v)
    return out


def flood_time(depth: int, delay: DelayModel, worst: dict, size: int = 600) -> float:
    """Time for a relayed broadcast (or key disclosure) to reach ``depth`` hops."""
    key_hop = delay.hop_time(38, relay=True) + worst.get(OP_KEY_AUTH, 0.0)
    return depth * max(key_hop, delay.hop_time(size, relay=True))


def auto_schedule(depth: int, dev_num: int, delay: DelayModel, *, ack_wait: float,
                  d: float = DEFAULT_D_MS, sync_error: float = DEFAULT_SYNC_ERROR_MS,
                  window: float = DEFAULT_BROADCAST_WINDOW_MS, slack: float = 1.5,
                  child_wait: float = 0.0, platforms=None, n_clusters: int = 8) -> EpochSchedule:
    """Size the four sub-intervals for a network ``depth`` hops deep.

    Sub-interval 0 is a short window after which the request follows.  The
    nonce update must still reach the farthest node before K_1 is disclosed
    (end of sub-interval 1 plus ``d``), and the request before K_2 is
    disclosed, which fixes the lengths of sub-intervals 1 and 2.  The last
    sub-interval holds the key flood, ack collection and upward reports.
    After it the epoch keeps room for a full secret update, so a rekey never
    pushes the next attestation back.
    """
    worst = worst_costs(delay, platforms)
    reach = slack * flood_time(depth, delay, worst) + 2 * sync_error
    s0 = window
    s1 = max(window, reach - s0 - d)
    s2 = max(window, reach - s1 - d)
    full = report_size(dev_num, dev_num)
    vec_blocks = math.ceil(((dev_num + 7) // 8) / VECTOR_OR_BLOCK)
    report_hop = (delay.hop_time(full) + 2 * worst.get(OP_MAC, 0.0) + worst.get(OP_REPORT_PREP, 0.0)
                  + vec_blocks * worst.get(OP_VECTOR_OR, 0.0))
    collect = slack * (flood_time(depth, delay, worst) + depth * report_hop) + ack_wait + child_wait
    s3 = max(window, collect + 2 * sync_error)
    reserve = secret_update_time(depth, dev_num, delay, worst, n_clusters, slack)
    return EpochSchedule.from_durations([s0, s1, s2, s3], d=d, sync_error=sync_error,
                                        t_att=s0 + s1 + s2 + s3 + d + reserve)


def secret_update_time(depth: int, dev_num: int, delay: DelayModel, worst: dict, n_clusters: int = 8,
                       slack: float = 1.5) -> float:
    """Generous bound on a group-secret refresh: the largest per-device variant flood."""
    per_cluster = math.ceil(dev_num / max(1, n_clusters))
    size = 16 + SLOT_SIZE * per_cluster
    hop = delay.hop_time(size, relay=True) + 2 * worst.get(OP_MAC, 0.0)
    return slack * (delay.tx_time(size) + depth * hop + worst.get(OP_MAC, 0.0))
