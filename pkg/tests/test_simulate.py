"""Monitors, Wilson intervals, seeded estimates and exact forward DP."""
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from countable_mdp.errors import UnsupportedOperation, ValidationError
from countable_mdp.families import Fig1a, Fig1b, TreeChain, build_strategy, tree_slice
from countable_mdp.model import LOSING_SINK, truncate
from countable_mdp.simulate import (HIT, OPTIMISTIC, PESSIMISTIC, REACH, SAFE, Counter, Monitor, estimate_event,
                                    estimate_mean, exact_event_probability, exact_expected_count, run_verdict,
                                    sample_run, wilson)


def _t1(kernel_name="greedy-mr"):
    model = TreeChain()
    return model, build_strategy(kernel_name, model), tree_slice(model, 1), model.exit(1)


def test_tree_one_survival_and_success():
    model, greedy, sl, exit_state = _t1()
    stop = lambda s: s == exit_state
    survive = Monitor(SAFE, m=0, forbid_red=True, stop=stop)
    success = Monitor(SAFE, m=1, forbid_red=True, stop=stop)
    assert exact_event_probability(sl, greedy, survive) == Fraction(169, 400)
    assert exact_event_probability(sl, greedy, success) == Fraction(133, 400)


def test_tree_one_guard_visits_and_red_count():
    model, greedy, sl, exit_state = _t1()
    onebit = build_strategy("sigma1-onebit", model)
    guards = Counter(count_red=False, count_state=lambda s: "red-guard" in s.labels)
    reds = Counter()
    # greedy enters both subtrees whenever offered; the one-bit strategy stops after the first green
    assert exact_expected_count(sl, greedy, guards) == Fraction(7, 5)
    assert exact_expected_count(sl, greedy, reds) == Fraction(7, 10)
    assert exact_expected_count(sl, onebit, guards, initial_mode=0) == Fraction(91, 100)
    assert exact_expected_count(sl, onebit, reds, initial_mode=0) == Fraction(91, 200)


def test_always_up_never_red():
    model, up, sl, exit_state = _t1("always-up-mr")
    assert exact_expected_count(sl, up, Counter()) == 0


def test_boundary_polarity():
    model, greedy, sl, exit_state = _t1()
    pess = Monitor(SAFE, m=0, forbid_red=True)
    opt = Monitor(SAFE, m=0, forbid_red=True, polarity=OPTIMISTIC)
    # without a stop condition the exit is an undecided boundary state
    assert exact_event_probability(sl, greedy, pess) == 0
    assert exact_event_probability(sl, greedy, opt) == Fraction(169, 400)


def test_exact_needs_acyclic_slice_and_finite_memory():
    m = Fig1a()
    sl = truncate(m, list(m.initial), k=5)
    with pytest.raises(UnsupportedOperation):
        exact_event_probability(sl, build_strategy("fig1-markov", m, k=2), Monitor(REACH, m=1))
    model, _, tsl, _ = _t1()
    with pytest.raises(UnsupportedOperation):
        exact_event_probability(tsl, build_strategy("fig1-markov", Fig1a(), k=2), Monitor(REACH, m=1))


def test_monitor_kinds():
    model, greedy, sl, exit_state = _t1()
    hit = Monitor(HIT, stop=lambda s: s == exit_state)
    survive = Monitor(SAFE, m=0, forbid_red=True, stop=lambda s: s == exit_state)
    assert exact_event_probability(sl, greedy, hit) == 1 - exact_event_probability(sl, greedy, survive)
    with pytest.raises(ValidationError):
        Monitor("bogus")
    with pytest.raises(ValidationError):
        Monitor(REACH, polarity="maybe")


def test_reach_counts_goal_visits_in_order():
    m = Fig1a()
    kernel = build_strategy("fig1-markov", m, k=1)
    mon = Monitor(REACH, m=3, horizon=10**4, forbid=lambda s: LOSING_SINK in s.labels)
    trace = sample_run(m, kernel, m.initial[0], 10**4, seed=4)
    goals = [r.step for r in trace.records if r.goal]
    verdict = run_verdict(m, kernel, m.initial[0], mon, None, random.Random(4))
    hit_sink = any(LOSING_SINK in r.state.labels for r in trace.records[:goals[2] + 1]) if len(goals) >= 3 else True
    assert verdict == (not hit_sink)


@given(st.integers(min_value=1, max_value=5000), st.data())
def test_wilson_contains_point(n, data):
    k = data.draw(st.integers(min_value=0, max_value=n))
    lo, hi = wilson(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_reference_value():
    lo, hi = wilson(50, 100)
    assert lo == pytest.approx(0.40383, abs=1e-5)
    assert hi == pytest.approx(0.59617, abs=1e-5)
    with pytest.raises(ValidationError):
        wilson(0, 0)


def test_estimate_independent_of_workers():
    m = Fig1b()
    kernel = build_strategy("fig1-markov", m, k=3)
    mon = Monitor(SAFE, horizon=40, forbid=lambda s: LOSING_SINK in s.labels)
    one = estimate_event(m, kernel, m.initial[0], mon, samples=12_000, seed=9, workers=1)
    two = estimate_event(m, kernel, m.initial[0], mon, samples=12_000, seed=9, workers=2)
    again = estimate_event(m, kernel, m.initial[0], mon, samples=12_000, seed=9, workers=1)
    other = estimate_event(m, kernel, m.initial[0], mon, samples=12_000, seed=10, workers=1)
    assert one == two == again
    assert other.successes != one.successes


def test_estimate_agrees_with_exact_on_tree_one():
    model, greedy, sl, exit_state = _t1()
    mon = Monitor(SAFE, m=1, forbid_red=True, stop=lambda s: s == exit_state, polarity=PESSIMISTIC)
    est = estimate_event(model, greedy, model.root(1), mon, samples=20_000, seed=1)
    assert est.lo <= 133 / 400 <= est.hi


def test_estimate_mean_tree_one():
    model, greedy, sl, exit_state = _t1()
    counter = Counter(stop=lambda s: s == exit_state)
    est = estimate_mean(model, greedy, model.root(1), counter, samples=20_000, seed=2, horizon=100)
    assert est.within(Fraction(7, 10))


def test_estimate_needs_horizon():
    m = Fig1a()
    with pytest.raises(ValidationError):
        estimate_event(m, build_strategy("fig1-markov", m, k=1), m.initial[0], Monitor(REACH, m=1), samples=10)
    with pytest.raises(ValidationError):
        estimate_event(m, build_strategy("fig1-markov", m, k=1), m.initial[0], Monitor(REACH, m=1, horizon=5),
                       samples=0)


def test_sample_run_is_reproducible():
    m = TreeChain()
    kernel = build_strategy("sigma1-onebit", m)
    a = sample_run(m, kernel, m.initial[0], 500, seed=17)
    b = sample_run(m, kernel, m.initial[0], 500, seed=17)
    assert a.records == b.records
    assert len(a) == 501
