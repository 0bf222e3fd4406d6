"""Choosing which clusters must report software integrity each epoch.

Each cluster keeps a record of past attestation outcomes.  The selector
minimises the summed success probability of the chosen clusters (so the
ones most likely to be compromised are attested first) subject to two
constraints: the chosen clusters must cover at least ``tr_cov`` of all
devices, and no unchosen cluster may go unattested for longer than
``t_max`` minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible

EXHAUSTIVE_LIMIT = 20
DEFAULT_T_MAX_MIN = 60.0
_EPS = 1e-12


@dataclass
class ClusterHistory:
    members: frozenset[int]
    outcomes: list[int] = field(default_factory=list)  # S per attested iteration
    t_las: float = 0.0  # minutes

    def __post_init__(self):
        if any(s not in (0, 1) for s in self.outcomes):
            raise ValueError("outcomes must be 0 or 1")

    def to_json(self) -> dict:
        return {"members": sorted(self.members), "outcomes": list(self.outcomes), "t_las": self.t_las}

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterHistory":
        return cls(frozenset(obj["members"]), list(obj["outcomes"]), float(obj["t_las"]))


@dataclass(frozen=True)
class SelectionProblem:
    sizes: tuple[int, ...]
    probabilities: tuple[float, ...]
    t_las: tuple[float, ...]
    tr_cov: float
    t_max: float = DEFAULT_T_MAX_MIN
    t_next: float = 0.0

    def __post_init__(self):
        m = len(self.sizes)
        if m == 0 or len(self.probabilities) != m or len(self.t_las) != m:
            raise ValueError("sizes, probabilities and t_las must have the same non-zero length")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("cluster sizes must be positive")
        if not 0.0 <= self.tr_cov <= 1.0:
            raise ValueError("tr_cov must lie in [0, 1]")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self.probabilities):
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @classmethod
    def from_histories(cls, histories, tr_cov, t_max=DEFAULT_T_MAX_MIN, t_next=0.0) -> "SelectionProblem":
        return cls(tuple(len(h.members) for h in histories),
                   tuple(estimate_success(h) for h in histories),
                   tuple(h.t_las for h in histories), tr_cov, t_max, t_next)

    def forced(self) -> np.ndarray:
        """Clusters whose exclusion would exceed the maximum unattested time."""
        return np.array([self.t_next - t > self.t_max for t in self.t_las], dtype=bool)

    def coverage(self, alpha) -> float:
        return float(np.dot(alpha, self.sizes)) / self.n

    def objective(self, alpha) -> float:
        return float(np.dot(alpha, self.probabilities))

    def feasible(self, alpha) -> bool:
        alpha = np.asarray(alpha, dtype=bool)
        cover = int(np.dot(alpha, self.sizes))
        return cover >= self.tr_cov * self.n - _EPS * self.n and not np.any(self.forced() & ~alpha)


def estimate_success(history: ClusterHistory) -> float:
    """Share of attested iterations in which the whole cluster was healthy; 0 if never attested."""
    if not history.outcomes:
        return 0.0
    return sum(history.outcomes) / len(history.outcomes)


def _check(problem, alpha):
    if problem.coverage(alpha) < problem.tr_cov - _EPS:
        raise Infeasible("coverage", f"selected coverage {problem.coverage(alpha):.6f} < {problem.tr_cov}")
    if np.any(problem.forced() & ~np.asarray(alpha, dtype=bool)):
        raise Infeasible("t_max", "an excluded cluster exceeds the maximum unattested time")
    return tuple(int(a) for a in alpha)


def _exhaustive(problem: SelectionProblem) -> np.ndarray:
    m = problem.m
    codes = np.arange(1 << m, dtype=np.int64)
    # column j is cluster j; row order equals lexicographic order of alpha
    alphas = ((codes[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(bool)
    sizes = np.asarray(problem.sizes, dtype=np.int64)
    cover = alphas.astype(np.int64) @ sizes
    ok = cover >= problem.tr_cov * problem.n - _EPS * problem.n
    ok &= ~np.any(problem.forced()[None, :] & ~alphas, axis=1)
    if not ok.any():
        raise Infeasible("coverage", "no assignment satisfies both constraints")
    obj = alphas.astype(float) @ np.asarray(problem.probabilities)
    best = obj[ok].min()
    tied = ok & (obj <= best + 1e-12 * max(1.0, abs(best)))  # float noise only
    # larger coverage first, then the lexicographically smallest assignment
    idx = np.flatnonzero(tied)
    top = cover[idx].max()
    return alphas[idx[cover[idx] == top][0]]


def _greedy(problem: SelectionProblem) -> np.ndarray:
    alpha = problem.forced().copy()
    order = sorted(range(problem.m), key=lambda j: (problem.probabilities[j], -problem.sizes[j], j))
    for j in order:
        if problem.coverage(alpha) >= problem.tr_cov - _EPS:
            break
        alpha[j] = True
    return alpha


def select_clusters(problem: SelectionProblem) -> tuple[int, ...]:
    """Optimal 0/1 assignment per cluster (exact up to 20 clusters, greedy above)."""
    if problem.tr_cov >= 1.0:
        return _check(problem, np.ones(problem.m, dtype=bool))
    alpha = _exhaustive(problem) if problem.m <= EXHAUSTIVE_LIMIT else _greedy(problem)
    return _check(problem, alpha)


def selected_ids(alpha) -> tuple[int, ...]:
    """1-based cluster ids of an assignment."""
    return tuple(j + 1 for j, a in enumerate(alpha) if a)


def update_history(histories: list[ClusterHistory], attested, compromised, t_minutes: float) -> list[ClusterHistory]:
    """New history list after one epoch.

    ``attested`` holds 1-based cluster ids; ``compromised`` the device ids
    labeled compromised in that epoch.
    """
    compromised = set(compromised)
    attested = set(attested)
    out = []
    for j, h in enumerate(histories, start=1):
        if j in attested:
            s = 0 if h.members & compromised else 1
            out.append(ClusterHistory(h.members, h.outcomes + [s], max(h.t_las, t_minutes)))
        else:
            out.append(h)
    return out
