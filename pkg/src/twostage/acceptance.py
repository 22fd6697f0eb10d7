"""Acceptance suite: each check returns a pass/fail verdict with its measured numbers.

Every ledger produced along the way is kept in compact form so the final check
can replay its penalty flags offline.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import mechanism as mech
from .dr_market import dr_allocate
from .engine import (Ledger, SimulationConfig, estimate_utility, estimate_welfare,
                     replay_penalty_flags, run_simulation, running_utility,
                     verify_product_form)
from .experiments import (degenerate_gap, payment_sensitivity, posted_price_comparison,
                          social_cost_vs_n)
from .game_core import Supertype, optimal_welfare, reference_game
from .mechanism import MechanismParams
from .strategies import (CorrelatedMimic, StationaryMisreport, SupertypeMisreport,
                         TruthfulStrategy, shift_kernel, strategy_library)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float
    limit: float | None

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.number:>2} {self.name}: {self.detail} " \
               f"({self.runtime:.1f}s)"


@dataclass
class _Recorded:
    game: object
    reported: tuple
    bids: np.ndarray
    flags: np.ndarray
    params: MechanismParams


class LedgerLog:
    """Compact copies of every ledger a run of the suite produced, keyed by config hash."""

    def __init__(self):
        self.entries: dict[str, _Recorded] = {}

    def add(self, ledger: Ledger, params: MechanismParams) -> Ledger:
        self.entries.setdefault(ledger.config_hash, _Recorded(
            ledger.game, ledger.reported, ledger.bids.astype(np.int8),
            np.packbits(ledger.penalty_flags), params))
        return ledger

    def __len__(self):
        return len(self.entries)


LOG = LedgerLog()


def _timed(number, name, limit, fn) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    rt = time.perf_counter() - t0
    if limit is not None and rt >= limit:
        ok, detail = False, f"{detail}; over the {limit:g}s budget"
    return CriterionResult(number, name, bool(ok), detail, rt, limit)


def _g1_config(strategies, horizon, seed=0, gamma=1.0, beta=2.0) -> SimulationConfig:
    game, theta = reference_game()
    return SimulationConfig(game, strategies, theta,
                            MechanismParams(gamma, beta, horizon), seed=seed)


def _run(cfg: SimulationConfig) -> Ledger:
    return LOG.add(run_simulation(cfg), cfg.params)


# -- 1: exact oracle ------------------------------------------------------------------

def _brute_force_g1():
    """Enumerate G1 directly from its definition with exact rationals."""
    half = Fraction(1, 2)
    outcomes = ("none", "p1", "p2")

    def value(i, t, o):
        return t if o == ("p1", "p2")[i] else 0

    def best(types, players):
        return max(outcomes, key=lambda o: (sum(value(i, types[i], o) for i in players),
                                            -outcomes.index(o)))

    w_all = w_minus0 = Fraction(0)
    ev = [Fraction(0), Fraction(0)]
    for t in itertools.product((0, 1), repeat=2):
        p = half * half
        o = best(t, (0, 1))
        w_all += p * sum(value(i, t[i], o) for i in (0, 1))
        o_minus = best(t, (1,))
        w_minus0 += p * value(1, t[1], o_minus)
        for i in (0, 1):
            ev[i] += p * value(i, t[i], o)
    p_first0 = w_minus0 - ev[1]
    return w_all, w_minus0, p_first0, ev


def criterion_1():
    def check():
        game, theta = reference_game()
        w, wm, pf, ev = _brute_force_g1()
        terms = game.expected_terms(theta)
        got = (optimal_welfare(game, theta), optimal_welfare(game, theta, [1]),
               mech.first_stage_payment(game, theta, 0), float(terms.valuations[0]),
               float(terms.valuations[1]))
        want = (0.75, 0.5, 0.25, 0.5, 0.25)
        oracle = tuple(float(x) for x in (w, wm, pf, ev[0], ev[1]))
        ok = got == want == oracle
        return ok, f"library {got}, brute force {oracle}"
    return _timed(1, "exact G1 oracle", 1.0, check)


# -- 2: truthful players are eventually never penalized ------------------------------------

def criterion_2(seeds=range(50), horizon=20_000, after=500):
    def check():
        clean, bad_tail = 0, 0
        for s in seeds:
            led = _run(_g1_config([TruthfulStrategy()] * 2, horizon, seed=s))
            passed = not led.penalty_flags[after - 1:].any()
            clean += passed
            if passed and led.penalty[horizon // 2:].sum() != 0.0:
                bad_tail += 1
        frac = clean / len(seeds)
        return frac >= 0.9 and bad_tail == 0, \
            f"{clean}/{len(seeds)} runs penalty-free from day {after}"
    return _timed(2, "truthful penalties vanish", 60.0, check)


# -- 3: efficiency ----------------------------------------------------------------------

def criterion_3(horizon=50_000, seed=0):
    def check():
        led = _run(_g1_config([TruthfulStrategy()] * 2, horizon, seed=seed))
        w = estimate_welfare(led)
        return abs(w - 0.75) <= 0.02, f"welfare {w:.5f} vs 0.75"
    return _timed(3, "efficiency", 30.0, check)


# -- 4: individual rationality -------------------------------------------------------------

def criterion_4(seeds=range(20), horizon=50_000):
    def check():
        _, theta = reference_game()
        worst = {}
        for name, strat in strategy_library(theta[1], 1, 2).items():
            us = [estimate_utility(_run(_g1_config([TruthfulStrategy(), strat], horizon,
                                                   seed=s)), 0) for s in seeds]
            worst[name] = min(us)
        ok = all(u >= -0.02 for u in worst.values())
        return ok, "worst truthful utility " + ", ".join(
            f"{k}={v:.4f}" for k, v in worst.items())
    return _timed(4, "individual rationality", 120.0, check)


# -- 5: no profitable deviation ---------------------------------------------------------------

def _paired_gain(alt, seeds, horizon):
    gains = []
    for s in seeds:
        truth = _run(_g1_config([TruthfulStrategy(), TruthfulStrategy()], horizon, seed=s))
        dev = _run(_g1_config([alt, TruthfulStrategy()], horizon, seed=s))
        gains.append(estimate_utility(truth, 0) - estimate_utility(dev, 0))
    return float(np.mean(gains))


def criterion_5(seeds=range(20), horizon=50_000, explode_at=5_000):
    def check():
        _, theta = reference_game()
        types = theta[0].types
        deviations = {
            "supertype_misreport": SupertypeMisreport(Supertype(types, (0.2, 0.8))),
            "flip_kernel": StationaryMisreport(
                shift_kernel(2), Supertype(types, tuple(theta[0].as_array() @ shift_kernel(2))),
                marginal_matching=True),
            "correlated_mimic": CorrelatedMimic(target=1, bias=0.3),
        }
        gains = {k: _paired_gain(v, seeds, horizon) for k, v in deviations.items()}
        always0 = strategy_library(theta[0], 0, 2)["always_first"]
        led = _run(_g1_config([always0, TruthfulStrategy()], horizon, seed=0))
        run_u = float(running_utility(led, 0)[explode_at - 1])
        ok = all(g >= -0.02 for g in gains.values()) and run_u < -10
        return ok, ", ".join(f"truth beats {k} by {v:.4f}" for k, v in gains.items()) + \
            f", always-0 running utility at day {explode_at} = {run_u:.3g}"
    return _timed(5, "no profitable deviation", 300.0, check)


# -- 6: product form under marginal-matching kernels ------------------------------------------

def criterion_6(horizon=50_000, seed=0, bound=0.0175):
    def check():
        _, theta = reference_game()
        k = shift_kernel(2)
        flip = StationaryMisreport(k, Supertype(theta[0].types, tuple(theta[0].as_array() @ k)),
                                   marginal_matching=True)
        led = _run(_g1_config([flip, flip], horizon, seed=seed))
        gap = verify_product_form(led, led.reported)
        two_r = 2 * mech.window_r(horizon, 1.0)
        return gap <= bound and gap <= two_r, \
            f"product-form gap {gap:.5f} (bound {bound}, 2r = {two_r:.5f})"
    return _timed(6, "product form", 60.0, check)


# -- 7: DR closed form ---------------------------------------------------------------------

def projected_gradient_dispatch(params: np.ndarray, delta_s: np.ndarray, d: np.ndarray,
                                iters: int = 20_000, tol: float = 1e-14) -> np.ndarray:
    """Minimize the quadratic dispatch cost on ``sum(x) + g = d`` by projected gradient.

    Returns the stacked ``(x_1..x_n, g)`` for each row; padding columns hold ``inf``
    parameters and stay at zero.
    """
    coef = np.column_stack([params, delta_s])
    active = np.isfinite(coef)
    m = active.sum(axis=1, keepdims=True)
    z = np.where(active, d[:, None] / m, 0.0)
    coef = np.where(active, coef, 0.0)
    step = 1.0 / coef.max(axis=1, keepdims=True)
    for _ in range(iters):
        grad = coef * z
        grad -= np.where(active, grad.sum(axis=1, keepdims=True) / m, 0.0)
        z_new = z - step * grad
        if np.max(np.abs(z_new - z)) < tol:
            return z_new
        z = z_new
    return z


def criterion_7(instances=1_000, seed=0):
    def check():
        a = dr_allocate([4.0, 2.0], 1.0, 7.0)
        exact = (a.curtailments.tolist() == [1.0, 2.0] and a.reserve == 4.0
                 and a.social_cost([4.0, 2.0], 1.0) == 14.0)
        rng = np.random.default_rng(seed)
        n_max = 8
        sizes = rng.integers(1, n_max + 1, instances)
        params = np.full((instances, n_max), np.inf)
        for r, n in enumerate(sizes):
            params[r, :n] = rng.uniform(0.1, 10.0, n)
        ds = rng.uniform(0.1, 10.0, instances)
        dem = rng.uniform(0.0, 20.0, instances)
        oracle = projected_gradient_dispatch(params, ds, dem)
        kkt, dev = 0.0, 0.0
        for r, n in enumerate(sizes):
            al = dr_allocate(params[r, :n], ds[r], dem[r])
            marg = np.append(params[r, :n] * al.curtailments, ds[r] * al.reserve)
            kkt = max(kkt, float(np.max(np.abs(marg - al.multiplier))),
                      abs(al.curtailments.sum() + al.reserve - dem[r]))
            ref = np.append(oracle[r, :n], oracle[r, -1])
            dev = max(dev, float(np.max(np.abs(np.append(al.curtailments, al.reserve) - ref))))
        return exact and kkt <= 1e-9 and dev <= 1e-9, \
            f"worked example exact={exact}, max KKT residual {kkt:.2e}, " \
            f"max gap to QP oracle {dev:.2e}"
    return _timed(7, "DR closed form", 10.0, check)


# -- 8-10: figure properties -----------------------------------------------------------------

def criterion_8(seeds=range(100), days=5_000):
    def check():
        rows = social_cost_vs_n(8, seeds, days)
        means = [r[1] for r in rows]
        ok = all(b < a for a, b in zip(means, means[1:]))
        return ok, "mean cost by n: " + ", ".join(f"{m:.4f}" for m in means)
    return _timed(8, "social cost falls with n", 120.0, check)


def criterion_9(seeds=range(100), days=2_000):
    def check():
        rows = payment_sensitivity((0.5, 1.0, 2.0, 4.0), seeds, days)
        pay = [r[1] for r in rows]
        ok = all(b >= a for a, b in zip(pay, pay[1:]))
        return ok, "payment received by mean: " + ", ".join(
            f"{r[0]:g}->{r[1]:.4f}" for r in rows)
    return _timed(9, "payment rises with others' costs", 120.0, check)


def criterion_10(seeds=range(20), days=5_000):
    def check():
        res = posted_price_comparison(None, seeds, days)
        best = float(res.mean_cost[res.best_index])
        ok_main = best >= res.mechanism_cost - res.mechanism_stderr
        anchor = degenerate_gap()
        ok = ok_main and abs(anchor) <= 1e-9 and len(res.prices) == 50
        return ok, f"best posted price {res.prices[res.best_index]:.4f} costs {best:.4f}, " \
                   f"mechanism {res.mechanism_cost:.4f} +- {res.mechanism_stderr:.4f}, " \
                   f"gap {res.gap:.4f}; degenerate gap {anchor:.1e}"
    return _timed(10, "posted price is no better", 120.0, check)


# -- 11: replay audit ------------------------------------------------------------------------

def criterion_11(log: LedgerLog | None = None):
    log = LOG if log is None else log

    def check():
        if not log.entries:
            _run(_g1_config([TruthfulStrategy()] * 2, 2_000))
        mismatched = 0
        for rec in log.entries.values():
            bids = rec.bids.astype(np.int64)
            flags = np.unpackbits(rec.flags, count=bids.size).reshape(bids.shape).astype(bool)
            shell = Ledger("", rec.game, rec.reported, 0, bids, bids, None, None, None, None,
                           None, None, None, None, flags, None)
            if not np.array_equal(replay_penalty_flags(shell, rec.params), flags):
                mismatched += 1
        return mismatched == 0, f"{len(log) - mismatched}/{len(log)} ledgers replay bit-exactly"
    return _timed(11, "penalty replay audit", None, check)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9,
            10: criterion_10, 11: criterion_11}


def run_acceptance(numbers=None, echo=print) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else sorted(int(x) for x in numbers)
    out = []
    for k in numbers:
        res = CRITERIA[k]()
        if echo:
            echo(res.line())
        out.append(res)
    return out
