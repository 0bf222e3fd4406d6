"""Network layouts: k-ary trees, random geometric meshes and mobile swarms.

Node 0 is always the verifier; nodes ``1..n-1`` are devices.  Trees are
numbered breadth-first, so the parent of node ``i`` is ``(i - 1) // k``.
Geometric layouts are grown one node at a time, each new node placed
uniformly within radio range of a randomly chosen existing node, which keeps
the deployment connected at creation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationFailed

KARY_TREE = "kary_tree"
GEOMETRIC_MESH = "geometric_mesh"
MOBILE = "mobile"
KINDS = (KARY_TREE, GEOMETRIC_MESH, MOBILE)


@dataclass
class Topology:
    kind: str
    positions: np.ndarray          # (n, 2) metres; zeros for trees
    platforms: tuple[str, ...]     # "A" or "B" per node, index 0 is the verifier
    stationary: np.ndarray         # bool (n,)
    comm_range: float = 0.0
    area: float = 0.0
    edges: list[tuple[int, int]] | None = None  # explicit links (trees only)
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.platforms)

    @property
    def n_devices(self) -> int:
        return self.n - 1

    def static_adjacency(self) -> list[tuple[int, ...]]:
        if self.edges is not None:
            adj = [[] for _ in range(self.n)]
            for a, b in self.edges:
                adj[a].append(b)
                adj[b].append(a)
            return [tuple(sorted(x)) for x in adj]
        return geometric_adjacency(self.positions, self.comm_range)

    def depth(self) -> int:
        """Hop distance from the verifier to the farthest reachable node."""
        return max(hop_distances(self.static_adjacency()).values())


def geometric_adjacency(positions: np.ndarray, comm_range: float) -> list[tuple[int, ...]]:
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    close = d2 <= comm_range * comm_range
    np.fill_diagonal(close, False)
    return [tuple(np.flatnonzero(row).tolist()) for row in close]


def hop_distances(adj, root: int = 0) -> dict[int, int]:
    dist = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


def is_connected(adj) -> bool:
    return len(hop_distances(adj)) == len(adj)


def kary_tree_depth(n: int, k: int) -> int:
    if k == 1:
        return n - 1
    depth, level, total = 0, 1, 1
    while total < n:
        level *= k
        total += level
        depth += 1
    return depth


def _platforms(rng, n, mix_a):
    draws = rng.random(n)
    return ("V",) + tuple("A" if u < mix_a else "B" for u in draws[1:])


def _grow_positions(rng, n, area, comm_range):
    """Each node lands uniformly in the disc around a random earlier node."""
    pos = np.empty((n, 2))
    pos[0] = area / 2.0
    for i in range(1, n):
        for _ in range(1000):
            anchor = pos[rng.integers(i)]
            r = comm_range * np.sqrt(rng.random())
            theta = rng.random() * 2 * np.pi
            cand = anchor + r * np.array([np.cos(theta), np.sin(theta)])
            if 0.0 <= cand[0] <= area and 0.0 <= cand[1] <= area:
                pos[i] = cand
                break
        else:
            raise GenerationFailed(f"could not place node {i} inside the area")
    return pos


def gen_topology(kind: str, n: int, seed: int, *, k: int = 2, area: float = 999.0,
                 comm_range: float = 50.0, stationary_fraction: float = 0.2,
                 platform_mix: float = 0.5, retries: int = 20) -> Topology:
    """Build a deterministic topology of ``n`` nodes (verifier included).

    ``platform_mix`` is the share of devices on platform A; the rest are B.
    """
    if n < 2:
        raise ValueError("a topology needs the verifier and at least one device")
    if kind not in KINDS:
        raise ValueError(f"unknown topology kind {kind!r}")
    rng = np.random.default_rng(seed)
    platforms = _platforms(rng, n, platform_mix)
    if kind == KARY_TREE:
        if k < 1:
            raise ValueError("tree arity must be >= 1")
        edges = [((i - 1) // k, i) for i in range(1, n)]
        return Topology(kind, np.zeros((n, 2)), platforms, np.ones(n, dtype=bool),
                        edges=edges, params={"k": k})

    for _ in range(retries):
        pos = _grow_positions(rng, n, area, comm_range)
        if is_connected(geometric_adjacency(pos, comm_range)):
            break
    else:
        raise GenerationFailed(f"no connected layout after {retries} attempts")
    stationary = np.ones(n, dtype=bool)
    if kind == MOBILE:
        n_still = int(round(stationary_fraction * n))
        stationary[:] = False
        stationary[0] = True  # the verifier never moves
        chosen = rng.choice(np.arange(1, n), size=max(0, n_still - 1), replace=False)
        stationary[chosen] = True
    return Topology(kind, pos, platforms, stationary, comm_range=comm_range, area=area,
                    params={"stationary_fraction": stationary_fraction} if kind == MOBILE else {})
