import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volunc.claims import make_claim
from volunc.errors import ArgumentError, DomainError
from volunc.paths import TimeGrid, simulate
from volunc.scenarios import (GridStoppingTime, PasteSpec, ScenarioSet, constant, contains, deterministic_time,
                              g_set, hitting_time, make_control, make_event, make_stopping_time,
                              max_chosen_check, paste, running_max_bound, state_switch_bound,
                              threshold_switch, time_switch, two_valued_sign, upward_select)


def test_contains_interval(gset, grid):
    assert contains(gset, constant(grid, 2.0))
    assert contains(gset, threshold_switch(grid, 0.3, 1.0, 4.0))
    assert not contains(gset, constant(grid, 4.5))
    assert not contains(gset, time_switch(grid, 0.5, 2.0, 0.5))


def test_contains_pool(grid):
    s = ScenarioSet("finite_pool", pool=[constant(grid, 1.0), constant(grid, 4.0)])
    assert contains(s, constant(grid, 4.0))
    assert not contains(s, constant(grid, 2.0))


def test_scenario_set_validation(grid):
    with pytest.raises(DomainError):
        g_set(0.0, 1.0)
    with pytest.raises(DomainError):
        g_set(2.0, 1.0)
    with pytest.raises(DomainError):
        g_set(1.0, 4.0, pool=[constant(grid, 5.0)])
    with pytest.raises(ArgumentError):
        ScenarioSet("finite_pool")
    with pytest.raises(ArgumentError):
        ScenarioSet("other", 1.0, 2.0)


def test_scenario_set_round_trip(grid):
    s = ScenarioSet("interval_bounds", state_switch_bound(0.0, 1.0, 2.0), 4.0,
                    [constant(grid, 2.0), threshold_switch(grid, 0.5, 2.0, 4.0, absolute=True)])
    doc = s.to_dict()
    s2 = ScenarioSet.from_dict(doc, grid)
    assert s2.to_dict() == doc
    assert s2.markov


def test_path_dependent_bound(grid):
    b = running_max_bound(0.5, 1.0, 4.0)
    s = ScenarioSet("interval_bounds", 1.0, b)
    assert not s.markov
    assert contains(s, constant(grid, 1.0))
    assert not contains(s, constant(grid, 3.0))


def test_paste_deterministic_branch(grid):
    spec = PasteSpec(constant(grid, 2.0), 10, make_event({"kind": "sign"}), constant(grid, 4.0),
                     constant(grid, 1.0))
    c = paste(spec)
    b = simulate(c, grid, 200, 0)
    a = b.alpha1
    assert np.all(a[:, :10] == 2.0)
    up = b.x[:, 10] > 0
    assert np.all(a[up, 10:] == 4.0) and np.all(a[~up, 10:] == 1.0)
    # serialisable through the control registry
    c2 = make_control(c.to_dict(), grid)
    assert np.array_equal(simulate(c2, grid, 200, 0).B, b.B)


def test_paste_event_must_be_adapted(grid):
    late = make_event({"kind": "sign", "node": 20})
    with pytest.raises(DomainError):
        paste(PasteSpec(constant(grid, 2.0), 10, late, constant(grid, 4.0), constant(grid, 1.0)))


def test_paste_at_stopping_time(grid):
    st_ = hitting_time(grid, 0.5)
    c = paste(PasteSpec(constant(grid, 1.0), st_, make_event({"kind": "always"}), constant(grid, 4.0),
                        constant(grid, 4.0)))
    b = simulate(c, grid, 300, 2)
    sig = st_.evaluate(b.x)
    k = np.arange(grid.N)
    expect = np.where(k[None, :] >= sig[:, None], 4.0, 1.0)
    assert np.array_equal(b.alpha1, expect)


@settings(max_examples=40, deadline=None)
@given(vals=st.lists(st.floats(1.0, 4.0), min_size=3, max_size=3), branch=st.integers(0, 50),
       level=st.floats(-1, 1), kind=st.sampled_from(["always", "never", "sign", "level"]))
def test_paste_closure(vals, branch, level, kind):
    grid = TimeGrid(1.0, 50)
    ev = {"kind": kind}
    if kind == "level":
        ev["level"] = level
    c = paste(PasteSpec(constant(grid, vals[0]), branch, make_event(ev),
                        threshold_switch(grid, level, vals[1], vals[2]), constant(grid, vals[2])))
    assert contains(g_set(1.0, 4.0), c, n_samples=32)


def test_stopping_times(grid):
    x = np.array([np.linspace(0, 2, grid.N + 1), -np.linspace(0, 2, grid.N + 1)])
    assert list(deterministic_time(grid, 7).evaluate(x)) == [7, 7]
    assert list(hitting_time(grid, 1.0).evaluate(x)) == [25, 25]
    assert list(two_valued_sign(grid, 3, 6, 9).evaluate(x)) == [6, 9]
    assert list(make_stopping_time({"kind": "first_positive_after", "start": 4}, grid).evaluate(x)) == [4, 50]
    peek = GridStoppingTime(grid, lambda k, p: p[:, k + 1] > 0, (0,), "peek")
    with pytest.raises(DomainError):
        peek.evaluate(x)


def test_upward_select():
    sel = upward_select([np.array([1.0, 5.0, 2.0]), np.array([3.0, 1.0, 2.0])])
    assert list(sel.index) == [1, 0, 0]
    assert list(sel.merged) == [3.0, 5.0, 2.0]
    with pytest.raises(ArgumentError):
        upward_select([])


def test_max_chosen_check(grid):
    s = ScenarioSet("finite_pool", pool=[constant(grid, 1.0), constant(grid, 4.0)])
    claims = [make_claim({"name": "square"}), make_claim({"name": "abs_minus_square", "weight": 0.25})]
    convex = [claims[0], make_claim({"name": "call"})]
    assert max_chosen_check(s, constant(grid, 2.0), convex, n_paths=5000).accepted
    # an intermediate constant already beats both endpoints on the concave-convex claim
    assert not max_chosen_check(s, constant(grid, 2.0), claims, n_paths=5000).accepted
    bad = max_chosen_check(s, threshold_switch(grid, 0.5, 4.0, 1.0, absolute=True), claims, n_paths=5000)
    assert not bad.accepted and bad.witness.name == "abs_minus_square"
