import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import Bounds, LinearConstraint, milp

from swarmattest.cluster_select import (ClusterHistory, SelectionProblem, estimate_success, select_clusters,
                                        selected_ids, update_history)
from swarmattest.errors import Infeasible


def brute_force(problem):
    """Best objective over every feasible assignment, or None."""
    best = None
    for alpha in itertools.product((0, 1), repeat=problem.m):
        if problem.feasible(alpha):
            obj = problem.objective(alpha)
            best = obj if best is None else min(best, obj)
    return best


@st.composite
def problems(draw, max_m=12):
    m = draw(st.integers(1, max_m))
    sizes = tuple(draw(st.lists(st.integers(1, 50), min_size=m, max_size=m)))
    probs = tuple(draw(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1),
                                min_size=m, max_size=m)))
    t_las = tuple(draw(st.lists(st.floats(0, 120), min_size=m, max_size=m)))
    tr = draw(st.floats(0, 1))
    return SelectionProblem(sizes, probs, t_las, tr, t_max=60.0, t_next=draw(st.floats(0, 150)))


def test_estimate_success():
    assert estimate_success(ClusterHistory(frozenset({1}), [1, 1, 1, 0])) == 0.75
    assert estimate_success(ClusterHistory(frozenset({1}), [1])) == 1.0
    assert estimate_success(ClusterHistory(frozenset({1}))) == 0.0


@given(st.lists(st.integers(0, 1), max_size=30))
def test_estimate_bounded_and_monotone(outcomes):
    h = ClusterHistory(frozenset({1}), outcomes)
    p = estimate_success(h)
    assert 0.0 <= p <= 1.0
    if outcomes:
        assert estimate_success(ClusterHistory(h.members, outcomes + [1])) >= p


def test_full_coverage_selects_everything():
    prob = SelectionProblem((3, 3, 3), (0.9, 0.5, 0.1), (0, 0, 0), 1.0)
    assert select_clusters(prob) == (1, 1, 1)


def test_equal_thirds():
    # one of three equal clusters covers 1/3 of the swarm, just short of 0.34
    assert select_clusters(SelectionProblem((3, 3, 3), (0.9, 0.5, 0.1), (0, 0, 0), 0.34)) == (0, 1, 1)
    assert select_clusters(SelectionProblem((3, 3, 3), (0.9, 0.5, 0.1), (0, 0, 0), 0.33)) == (0, 0, 1)


def test_overdue_cluster_forced():
    prob = SelectionProblem((3, 3, 3), (0.9, 0.5, 0.1), (0.0, 100.0, 100.0), 0.2, t_max=60.0, t_next=100.0)
    alpha = select_clusters(prob)
    assert alpha[0] == 1


def test_greedy_above_exhaustive_limit_feasible():
    rng = np.random.default_rng(0)
    m = 30
    prob = SelectionProblem(tuple(rng.integers(1, 20, m).tolist()), tuple(rng.random(m).tolist()),
                            tuple([0.0] * m), 0.5)
    assert prob.feasible(select_clusters(prob))


@given(problems())
def test_matches_exhaustive(problem):
    best = brute_force(problem)
    if best is None:
        with pytest.raises(Infeasible):
            select_clusters(problem)
        return
    alpha = select_clusters(problem)
    assert problem.feasible(alpha)
    assert problem.objective(alpha) == pytest.approx(best, abs=1e-9)


@given(problems(max_m=16))
def test_matches_milp(problem):
    """Independent check with an off-the-shelf integer solver."""
    forced = problem.forced()
    lower = forced.astype(float)
    res = milp(c=np.array(problem.probabilities),
               constraints=LinearConstraint(np.array([problem.sizes], dtype=float),
                                            lb=problem.tr_cov * problem.n - 1e-9 * problem.n, ub=np.inf),
               integrality=np.ones(problem.m), bounds=Bounds(lower, np.ones(problem.m)))
    if not res.success:
        with pytest.raises(Infeasible):
            select_clusters(problem)
        return
    assert problem.objective(select_clusters(problem)) == pytest.approx(res.fun, abs=1e-6)


def test_update_history():
    hs = [ClusterHistory(frozenset({1, 2})), ClusterHistory(frozenset({3, 4})), ClusterHistory(frozenset({5}))]
    out = update_history(hs, attested=(1, 2), compromised=set(), t_minutes=5.0)
    assert [h.outcomes for h in out] == [[1], [1], []]
    assert out[2] is hs[2]
    out = update_history(out, attested=(1, 2), compromised={3}, t_minutes=9.0)
    assert [h.outcomes for h in out] == [[1, 1], [1, 0], []]
    assert out[0].t_las == 9.0


def test_history_json_round_trip():
    h = ClusterHistory(frozenset({3, 1}), [1, 0], 4.5)
    assert ClusterHistory.from_json(h.to_json()) == h


def test_selected_ids():
    assert selected_ids((0, 1, 1, 0, 1)) == (2, 3, 5)


def test_problem_validation():
    with pytest.raises(ValueError):
        SelectionProblem((), (), (), 0.5)
    with pytest.raises(ValueError):
        SelectionProblem((1,), (1.5,), (0,), 0.5)
    with pytest.raises(ValueError):
        SelectionProblem((1,), (0.5,), (0,), 1.5)
