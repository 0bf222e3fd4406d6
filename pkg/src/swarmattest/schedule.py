"""Epoch timing and the delayed-disclosure admissibility rule.

All times are milliseconds.  An epoch of length ``t_att`` holds four ordered
sub-intervals.  The verifier sends the nonce update at the start of
sub-interval 0 (MAC key K_1) and the attestation request at the start of
sub-interval 1 (MAC key K_2).  Session key K_k is disclosed ``d`` after the
end of sub-interval k, so K_1 goes out in sub-interval 2 and K_2 in
sub-interval 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import BeforeSchedule

DEFAULT_D_MS = 30.0
DEFAULT_SYNC_ERROR_MS = 10.0
DEFAULT_BROADCAST_WINDOW_MS = 200.0


class Interval(NamedTuple):
    epoch: int
    index: int | None  # None while idle between the last sub-interval and the next epoch


@dataclass(frozen=True)
class EpochSchedule:
    t_att: float
    sub_intervals: tuple[tuple[float, float], ...]  # (start offset, duration)
    d: float = DEFAULT_D_MS
    sync_error: float = DEFAULT_SYNC_ERROR_MS
    epoch_start: float = 0.0

    def __post_init__(self):
        if len(self.sub_intervals) != 4:
            raise ValueError("an epoch has exactly 4 sub-intervals")
        prev_end = 0.0
        for off, dur in self.sub_intervals:
            if dur <= 0 or off < prev_end:
                raise ValueError("sub-intervals must be positive, ordered and non-overlapping")
            prev_end = off + dur
        if prev_end > self.t_att:
            raise ValueError("sub-intervals exceed the epoch length")
        if self.d < 0 or self.sync_error < 0:
            raise ValueError("d and sync_error must be non-negative")

    @classmethod
    def from_durations(cls, durations, d=DEFAULT_D_MS, sync_error=DEFAULT_SYNC_ERROR_MS,
                       t_att=None, epoch_start=0.0) -> "EpochSchedule":
        """Back-to-back sub-intervals; ``t_att`` defaults to their sum plus ``d``."""
        subs, off = [], 0.0
        for dur in durations:
            subs.append((off, float(dur)))
            off += float(dur)
        if t_att is None:
            t_att = off + d
        return cls(float(t_att), tuple(subs), float(d), float(sync_error), float(epoch_start))

    def start_of(self, epoch: int) -> float:
        return self.epoch_start + epoch * self.t_att

    def sub_start(self, epoch: int, i: int) -> float:
        return self.start_of(epoch) + self.sub_intervals[i][0]

    def sub_end(self, epoch: int, i: int) -> float:
        off, dur = self.sub_intervals[i]
        return self.start_of(epoch) + off + dur

    def disclosure_time(self, epoch: int, key_index: int) -> float:
        """Instant at which K_{key_index} of ``epoch`` becomes public."""
        if key_index == len(self.sub_intervals):
            end = self.start_of(epoch) + self.t_att
        elif 1 <= key_index < len(self.sub_intervals):
            end = self.sub_end(epoch, key_index)
        else:
            raise ValueError(f"no disclosure slot for key index {key_index}")
        return end + self.d


@dataclass(frozen=True)
class LocalClock:
    skew: float = 0.0

    def now(self, true_time: float) -> float:
        return true_time + self.skew


def current_interval(sched: EpochSchedule, t: float) -> Interval:
    if t < sched.epoch_start:
        raise BeforeSchedule(f"t={t} precedes schedule start {sched.epoch_start}")
    rel = t - sched.epoch_start
    epoch = int(math.floor(rel / sched.t_att))
    # guard against float rounding at exact epoch boundaries
    if sched.start_of(epoch + 1) <= t:
        epoch += 1
    within = t - sched.start_of(epoch)
    for i, (off, dur) in enumerate(sched.sub_intervals):
        if off <= within < off + dur:
            return Interval(epoch, i)
    return Interval(epoch, None)


def packet_admissible(sched: EpochSchedule, clock: LocalClock, epoch: int, key_index: int,
                      arrival: float) -> bool:
    """True iff the MAC key cannot have been disclosed yet, allowing for clock error.

    ``arrival`` is true simulation time; the node only knows its own clock
    reading and the public error bound.
    """
    return clock.now(arrival) + sched.sync_error < sched.disclosure_time(epoch, key_index)
