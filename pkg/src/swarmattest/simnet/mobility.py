"""Random-waypoint movement with a fixed link-refresh tick."""

from __future__ import annotations

import numpy as np

from .topology import Topology, geometric_adjacency

DEFAULT_SPEED = 10.0 / 1000.0  # metres per millisecond (10 m/s)
DEFAULT_TICK_MS = 100.0


class RandomWaypoint:
    """Mobile nodes walk straight to a uniformly drawn waypoint, then pick another.

    Positions advance in whole ticks; the link set is recomputed whenever a
    query lands in a new tick.  Stationary nodes never move.
    """

    def __init__(self, topo: Topology, seed: int, speed: float = DEFAULT_SPEED,
                 tick: float = DEFAULT_TICK_MS):
        self.topo = topo
        self.rng = np.random.default_rng(seed)
        self.speed = speed
        self.tick = tick
        self.area = topo.area
        self.pos = topo.positions.copy()
        self.mobile = ~topo.stationary
        self.targets = self.pos.copy()
        self._redraw(np.flatnonzero(self.mobile))
        self.tick_no = 0
        self._adj = geometric_adjacency(self.pos, topo.comm_range)

    def _redraw(self, idx):
        if len(idx):
            self.targets[idx] = self.rng.random((len(idx), 2)) * self.area

    def _step(self):
        step = self.speed * self.tick
        delta = self.targets - self.pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        arrive = self.mobile & (dist <= step)
        move = self.mobile & ~arrive
        self.pos[arrive] = self.targets[arrive]
        self.pos[move] += delta[move] * (step / dist[move])[:, None]
        self._redraw(np.flatnonzero(arrive))

    def advance_to(self, t: float):
        target = int(t // self.tick)
        if target <= self.tick_no:
            return
        for _ in range(target - self.tick_no):
            self._step()
        self.tick_no = target
        self._adj = geometric_adjacency(self.pos, self.topo.comm_range)

    def neighbours(self, node: int, t: float) -> tuple[int, ...]:
        self.advance_to(t)
        return self._adj[node]

    def linked(self, a: int, b: int, t: float) -> bool:
        return b in self.neighbours(a, t)
