import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twostage import mechanism as mech
from twostage.game_core import GameSpec, Supertype, TypeSpace
from twostage.mechanism import (DiscrepancyStats, InvalidBidError, MechanismParams,
                                PaymentBreakdown, correlation_h, discrepancy_f,
                                expected_valuation, first_stage_payment, penalty_event,
                                penalty_flags, penalty_Jp, second_stage_payment,
                                total_payment, update_stats, window_r)

from conftest import prob_vectors, small_games

# high-precision evaluations of sqrt(ln(2 l^2) / (2 l)) (40 digits, mpmath)
WINDOW_ORACLE = {
    1: 0.58870501125773734551,
    100: 0.22252513961950600297,
    10_000: 0.030914258784994595744,
    50_000: 0.014944130536562008876,
    1_000_000: 0.0037632544623296797147,
}


def _stats(types, n, profiles):
    s = DiscrepancyStats(types, n)
    for p in profiles:
        update_stats(s, p)
    return s


# -- params ------------------------------------------------------------------------

def test_params_validation_and_json():
    p = MechanismParams(gamma=0.5, penalty_exponent=3.0, horizon=10)
    assert MechanismParams.from_dict(p.to_dict()) == p
    for bad in ({"gamma": 0.0}, {"penalty_exponent": 1.0}, {"horizon": 0},
                {"horizon": 2.5}):
        with pytest.raises(ValueError):
            MechanismParams(**bad)
    with pytest.raises(ValueError):
        MechanismParams.from_dict({"gama": 1.0})


# -- schedules -----------------------------------------------------------------------

@pytest.mark.parametrize("l", sorted(WINDOW_ORACLE))
def test_window_matches_high_precision_oracle(l):
    assert window_r(l, 1.0) == pytest.approx(WINDOW_ORACLE[l], rel=1e-14)


def test_window_is_small_far_out():
    assert window_r(10**6, 1.0) < 0.004
    assert window_r(100, 1.0) > window_r(10_000, 1.0)


def test_window_rejects_day_zero():
    with pytest.raises(ValueError):
        window_r(0, 1.0)


@given(st.integers(3, 10**9), st.floats(0.01, 5.0))
def test_window_decreasing_past_day_three(l, gamma):
    assert window_r(l + 1, gamma) < window_r(l, gamma)


@given(st.integers(1, 10**6), st.floats(0.01, 5.0))
def test_window_equals_closed_form(l, gamma):
    direct = math.sqrt(math.log(2 * l ** (1 + gamma)) / (2 * l))
    assert window_r(l, gamma) == pytest.approx(direct, rel=1e-12)


def test_window_schedule_matches_scalar():
    sched = mech.window_schedule(500, 0.7)
    assert all(sched[l - 1] == window_r(l, 0.7) for l in range(1, 501))


@pytest.mark.parametrize("l, beta, expected", [(10, 2.0, 100.0), (1, 3.7, 1.0),
                                               (1000, 2.0, 1e6)])
def test_penalty_schedule(l, beta, expected):
    assert penalty_Jp(l, MechanismParams(penalty_exponent=beta)) == expected


def test_penalty_outgrows_linear():
    p = MechanismParams(penalty_exponent=1.1)
    ls = np.array([1e2, 1e4, 1e6])
    ratio = penalty_Jp(ls, p) / ls
    assert np.all(np.diff(ratio) > 0)


# -- statistics -------------------------------------------------------------------------

def test_single_update_counts():
    ts = TypeSpace((0, 1))
    s = _stats(ts, 2, [(0, 1)])
    assert s.day == 1
    assert s.joint_counts[0][(0, (1,))] == 1
    assert s.joint_counts[1][(1, (0,))] == 1


def test_two_identical_days_double_counts():
    ts = TypeSpace((0, 1))
    s = _stats(ts, 2, [(0, 1), (0, 1)])
    assert s.type_counts[0][0] == 2 and s.others_counts[0][(1,)] == 2
    assert s.joint_counts[1][(1, (0,))] == 2


def test_update_rejects_out_of_space_bid():
    s = DiscrepancyStats(TypeSpace((0, 1)), 2)
    with pytest.raises(InvalidBidError) as e:
        s.update((0, 2))
    assert e.value.player == 1 and e.value.day == 1
    assert s.day == 0
    with pytest.raises(InvalidBidError):
        s.update((0,))


@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_counts_marginalize(n, k, data):
    ts = TypeSpace(tuple(range(k)))
    log = data.draw(st.lists(st.tuples(*[st.integers(0, k - 1)] * n), min_size=1,
                             max_size=200))
    s = _stats(ts, n, log)
    for i in range(n):
        assert sum(s.type_counts[i].values()) == s.day == len(log)
        marg_r, marg_t = Counter(), Counter()
        for (t, rest), c in s.joint_counts[i].items():
            marg_r[rest] += c
            marg_t[t] += c
        assert marg_r == s.others_counts[i]
        assert marg_t == s.type_counts[i]
        # recount from the raw log
        assert s.type_counts[i] == Counter(p[i] for p in log)


def test_marginalization_after_1000_random_updates():
    rng = np.random.default_rng(5)
    ts = TypeSpace(("x", "y", "z"))
    log = [tuple(rng.choice(ts.labels, 3)) for _ in range(1000)]
    s = _stats(ts, 3, log)
    for i in range(3):
        assert s.others_counts[i] == Counter(p[:i] + p[i + 1:] for p in log)
        assert s.joint_counts[i] == Counter((p[i], p[:i] + p[i + 1:]) for p in log)


def test_discrepancy_f_examples():
    ts = TypeSpace(("a", "b"))
    s = _stats(ts, 1, [("a",), ("a",), ("b",), ("a",)])
    assert discrepancy_f(s, 0, "a", Supertype(ts, (0.5, 0.5))) == 0.25
    s2 = _stats(ts, 1, [("a",)] * 3)
    assert discrepancy_f(s2, 0, "a", Supertype.point_mass(ts, "a")) == 0.0
    assert discrepancy_f(s2, 0, "b", Supertype.point_mass(ts, "a")) == 0.0


def test_correlation_h_examples():
    ts = TypeSpace(("a", "b"))
    half = Supertype(ts, (0.5, 0.5))
    s = _stats(ts, 2, [("a", "a"), ("b", "a")])
    assert correlation_h(s, 0, ("a", "a"), half) == 0.0
    assert correlation_h(s, 0, ("a", "b"), half) == 0.0  # unobserved opponent bid
    s2 = _stats(ts, 2, [("a", "a"), ("a", "a")])
    assert correlation_h(s2, 0, ("a", "a"), half) == 0.5


@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_frequency_gaps_sum_to_zero(n, k, data):
    ts = TypeSpace(tuple(range(k)))
    log = data.draw(st.lists(st.tuples(*[st.integers(0, k - 1)] * n), min_size=1,
                             max_size=60))
    s = _stats(ts, n, log)
    for i in range(n):
        rep = Supertype(ts, data.draw(prob_vectors(k)))
        assert abs(math.fsum(discrepancy_f(s, i, t, rep) for t in ts)) <= 1e-12


# -- penalty events -------------------------------------------------------------------------

def test_first_truthful_day_is_not_penalized():
    ts = TypeSpace((0, 1))
    s = _stats(ts, 2, [(1, 0)])
    u = Supertype.uniform(ts)
    assert not penalty_event(s, 0, u, 1, MechanismParams())


def test_large_frequency_gap_is_penalized():
    ts = TypeSpace(("a", "b"))
    s = _stats(ts, 1, [("a",)] * 100)
    rep = Supertype(ts, (0.1, 0.9))
    assert discrepancy_f(s, 0, "a", rep) == pytest.approx(0.9)
    assert penalty_event(s, 0, rep, 100, MechanismParams())


def test_zero_discrepancy_is_never_penalized():
    ts = TypeSpace(("a", "b"))
    s = _stats(ts, 2, [("a", "b")] * 50)
    pm = Supertype.point_mass(ts, "a")
    assert not penalty_event(s, 0, pm, 50, MechanismParams())


def test_penalty_event_requires_current_day():
    ts = TypeSpace((0, 1))
    s = _stats(ts, 1, [(0,)])
    with pytest.raises(ValueError):
        penalty_event(s, 0, Supertype.uniform(ts), 2, MechanismParams())


def _dense_event(stats, i, reported, l, params):
    r = window_r(l, params.gamma)
    if any(abs(discrepancy_f(stats, i, t, reported)) >= r for t in stats.types):
        return True
    return any(abs(correlation_h(stats, i, d, reported)) >= r
               for d in itertools.product(stats.types.labels, repeat=stats.n))


@given(st.integers(1, 3), st.integers(1, 4), st.data())
def test_sparse_correlation_check_is_lossless(n, k, data):
    ts = TypeSpace(tuple(range(k)))
    log = data.draw(st.lists(st.tuples(*[st.integers(0, k - 1)] * n), min_size=1,
                             max_size=40))
    gamma = data.draw(st.floats(0.05, 2.0))
    params = MechanismParams(gamma=gamma)
    reps = [Supertype(ts, data.draw(prob_vectors(k))) for _ in range(n)]
    s = DiscrepancyStats(ts, n)
    for l, prof in enumerate(log, start=1):
        s.update(prof)
        for i in range(n):
            assert penalty_event(s, i, reps[i], l, params) == \
                _dense_event(s, i, reps[i], l, params)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 64), st.data())
def test_vectorized_flags_match_incremental(n, k, block, data):
    ts = TypeSpace(tuple(range(k)))
    log = data.draw(st.lists(st.tuples(*[st.integers(0, k - 1)] * n), min_size=1,
                             max_size=150))
    params = MechanismParams(gamma=data.draw(st.floats(0.05, 2.0)))
    reps = [Supertype(ts, data.draw(prob_vectors(k))) for _ in range(n)]
    flags = penalty_flags(np.array(log), reps, k, params, block=block)
    s = DiscrepancyStats(ts, n)
    for l, prof in enumerate(log, start=1):
        s.update(prof)
        for i in range(n):
            assert flags[l - 1, i] == penalty_event(s, i, reps[i], l, params)


# -- payments ---------------------------------------------------------------------------------

def test_expected_valuations_g1(g1):
    spec, theta = g1
    assert expected_valuation(spec, theta, 0) == 0.5
    assert expected_valuation(spec, theta, 1) == 0.25


def test_expected_valuation_of_indifferent_player(g1):
    spec, theta = g1
    v = spec.valuation.copy()
    v[1] = 0.0
    game = GameSpec(2, spec.types, spec.o1, spec.o2, v, spec.cost)
    assert expected_valuation(game, theta, 1) == 0.0


def test_first_stage_payments_g1(g1):
    spec, theta = g1
    assert first_stage_payment(spec, theta, 0) == 0.25
    assert first_stage_payment(spec, theta, 1) == 0.0


def test_single_player_pays_nothing_up_front():
    ts = TypeSpace((0, 1))
    v = np.array([[[[0.0, 0.0]], [[0.0, 1.0]]]])
    spec = GameSpec(1, ts, ("A",), ("keep", "give"), v, np.zeros((1, 2)))
    assert first_stage_payment(spec, [Supertype.uniform(ts)], 0) == 0.0


@pytest.mark.parametrize("bids, i, expected", [((1, 0), 0, 0.5), ((0, 1), 0, -0.5),
                                               ((1, 1), 1, -0.25)])
def test_second_stage_base(g1, bids, i, expected):
    spec, theta = g1
    assert second_stage_payment(spec, theta, bids, i, 1, False, MechanismParams()) == expected


def test_second_stage_penalty_adds_jp(g1):
    spec, theta = g1
    p = MechanismParams(penalty_exponent=2.0)
    assert second_stage_payment(spec, theta, (1, 0), 0, 10, True, p) == 0.5 + 100


@pytest.mark.parametrize("first, second, total", [(0.25, 0.5, 0.75), (0.25, -0.5, -0.25),
                                                  (0.0, 0.0, 0.0)])
def test_total_payment(first, second, total):
    assert total_payment(first, second) == total


def test_breakdown_total_is_sum_of_parts():
    b = PaymentBreakdown(0.25, -0.5, 100.0)
    assert b.total == 0.25 + -0.5 + 100.0


@given(small_games(max_n=3, max_k=3))
def test_truthful_base_transfer_has_zero_mean(game):
    spec, theta = game
    terms = spec.expected_terms(theta)
    k = len(spec.types)
    for i in range(spec.n):
        parts = []
        for idx in itertools.product(range(k), repeat=spec.n):
            w = math.prod(theta[j].probs[t] for j, t in enumerate(idx))
            if w == 0:
                continue
            labels = [spec.types.labels[t] for t in idx]
            base = second_stage_payment(spec, theta, labels, i, 1, False, MechanismParams())
            parts.append(w * base)
        scale = 1 + float(np.abs(spec.valuation).max())
        assert abs(math.fsum(parts)) <= 1e-12 * scale
    assert terms.method == "exact"
