import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmattest.errors import BeforeSchedule
from swarmattest.schedule import EpochSchedule, Interval, LocalClock, current_interval, packet_admissible

SCHED = EpochSchedule.from_durations([200, 300, 400, 1000], d=30, sync_error=10, t_att=2500, epoch_start=100)


def test_interval_boundaries():
    assert current_interval(SCHED, 100) == Interval(0, 0)
    assert current_interval(SCHED, 100 + 2500) == Interval(1, 0)
    assert current_interval(SCHED, 100 + 500 + 200) == Interval(0, 2)  # middle of the third
    assert current_interval(SCHED, 100 + 2400) == Interval(0, None)  # idle tail


def test_before_start():
    with pytest.raises(BeforeSchedule):
        current_interval(SCHED, 99.9)


def test_disclosure_times():
    assert SCHED.disclosure_time(0, 1) == 100 + 500 + 30
    assert SCHED.disclosure_time(1, 2) == 100 + 2500 + 900 + 30
    assert SCHED.disclosure_time(0, 4) == 100 + 2500 + 30
    with pytest.raises(ValueError):
        SCHED.disclosure_time(0, 0)


def test_admissibility_examples():
    clock = LocalClock()
    k2 = SCHED.disclosure_time(0, 2)
    assert packet_admissible(SCHED, clock, 0, 2, SCHED.sub_start(0, 1) + 50)
    assert not packet_admissible(SCHED, clock, 0, 2, k2 + 1)
    assert not packet_admissible(SCHED, clock, 0, 2, k2 - SCHED.sync_error)  # strict
    assert packet_admissible(SCHED, clock, 0, 2, k2 - SCHED.sync_error - 1e-6)


def test_invalid_layouts():
    with pytest.raises(ValueError):
        EpochSchedule.from_durations([1, 2, 3])
    with pytest.raises(ValueError):
        EpochSchedule.from_durations([1, 2, 3, 0])
    with pytest.raises(ValueError):
        EpochSchedule.from_durations([1, 2, 3, 4], t_att=5)


durations = st.lists(st.floats(1, 5000), min_size=4, max_size=4)


@given(durations, st.floats(0, 100), st.floats(0, 50), st.floats(-1, 1), st.integers(0, 5),
       st.integers(1, 3), st.floats(0, 1e4))
def test_never_admitted_once_key_may_be_public(durs, d, err, skew_frac, epoch, k, after):
    """With clock error inside the bound, nothing arriving at or after disclosure is admitted."""
    sched = EpochSchedule.from_durations(durs, d=d, sync_error=err)
    clock = LocalClock(skew_frac * err)
    assert not packet_admissible(sched, clock, epoch, k, sched.disclosure_time(epoch, k) + after)


@given(durations, st.floats(0, 1e6), st.floats(0, 1e6))
def test_interval_monotone(durs, t1, t2):
    sched = EpochSchedule.from_durations(durs)
    a, b = sorted((t1, t2))
    ia, ib = current_interval(sched, a), current_interval(sched, b)
    key = lambda iv: (iv.epoch, 4 if iv.index is None else iv.index)  # noqa: E731
    assert key(ia) <= key(ib)
