"""Day-by-day simulation of the repeated game and finite-horizon estimators."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import mechanism as mech
from .game_core import InvalidInputError, Supertype, TwoStageGame, sampling_cdf
from .mechanism import DiscrepancyStats, InvalidBidError, MechanismParams, PaymentBreakdown
from .strategies import HistoryView, Strategy, TruthfulStrategy

LEDGER_COLUMNS = ("day", "player", "true_type", "bid", "o1", "o2", "valuation",
                  "p_first", "p_second_base", "penalty", "p_total", "penalty_flag")

# spawn-key roots of the per-run random substreams
_TYPES, _POLICY, _PUBLIC = 0, 1, 2


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(key))))


@dataclass(frozen=True)
class SimulationConfig:
    game: TwoStageGame
    strategies: tuple
    true_supertypes: tuple
    params: MechanismParams
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "true_supertypes",
                           tuple(self.game.check_supertypes(self.true_supertypes)))
        if len(self.strategies) != self.game.n:
            raise InvalidInputError(
                f"{len(self.strategies)} strategies for {self.game.n} players")

    def with_strategy(self, i: int, strategy: Strategy) -> "SimulationConfig":
        s = list(self.strategies)
        s[i] = strategy
        return replace(self, strategies=tuple(s))

    def to_dict(self) -> dict:
        return {
            "game": self.game.to_dict(),
            "strategies": [_strategy_dict(s) for s in self.strategies],
            "true_supertypes": [list(s.probs) for s in self.true_supertypes],
            "params": self.params.to_dict(),
            "seed": int(self.seed),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _strategy_dict(s) -> dict:
    try:
        return s.to_dict()
    except NotImplementedError:
        return {"kind": type(s).__name__}


@dataclass(frozen=True)
class DayRecord:
    l: int
    true_types: tuple
    bids: tuple
    o1: object
    o2: object
    payments: tuple
    penalty_flags: tuple
    valuations: tuple


@dataclass(eq=False)
class Ledger:
    """Columnar record of one run.

    Row ``l - 1`` of every per-day array belongs to day ``l``.  ``types`` and
    ``bids`` hold type indices.
    """

    config_hash: str
    game: TwoStageGame
    reported: tuple
    o1: int
    types: np.ndarray
    bids: np.ndarray
    o2: np.ndarray
    public: object
    valuations: np.ndarray
    bid_valuations: np.ndarray
    costs: np.ndarray
    p_first: np.ndarray
    p_second_base: np.ndarray
    penalty: np.ndarray
    penalty_flags: np.ndarray
    stats: DiscrepancyStats

    @property
    def horizon(self) -> int:
        return self.bids.shape[0]

    def __len__(self):
        return self.horizon

    @property
    def p_total(self) -> np.ndarray:
        return self.p_first[None, :] + self.p_second_base + self.penalty

    def day(self, l: int) -> DayRecord:
        k = l - 1
        labels = self.game.types.labels
        return DayRecord(
            l=l,
            true_types=tuple(labels[t] for t in self.types[k]),
            bids=tuple(labels[t] for t in self.bids[k]),
            o1=self.game.o1_label(self.o1),
            o2=self.game.o2_label(self.o2[k]),
            payments=tuple(
                PaymentBreakdown(float(self.p_first[i]), float(self.p_second_base[k, i]),
                                 float(self.penalty[k, i]))
                for i in range(self.game.n)),
            penalty_flags=tuple(bool(x) for x in self.penalty_flags[k]),
            valuations=tuple(float(x) for x in self.valuations[k]),
        )

    @property
    def days(self):
        return [self.day(l) for l in range(1, self.horizon + 1)]

    def to_csv(self, fh=None) -> str | None:
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        labels = self.game.types.labels
        o1 = self.game.o1_label(self.o1)
        total = self.p_total
        for k in range(self.horizon):
            o2 = self.game.o2_label(self.o2[k])
            for i in range(self.game.n):
                w.writerow([k + 1, i, labels[self.types[k, i]], labels[self.bids[k, i]],
                            o1, o2, repr(float(self.valuations[k, i])),
                            repr(float(self.p_first[i])),
                            repr(float(self.p_second_base[k, i])),
                            repr(float(self.penalty[k, i])), repr(float(total[k, i])),
                            int(self.penalty_flags[k, i])])
        return out.getvalue() if fh is None else None

    def summary(self) -> dict:
        return {
            "utilities": [estimate_utility(self, i) for i in range(self.game.n)],
            "welfare": estimate_welfare(self),
            "penalty_days": [int(x) for x in self.penalty_flags.sum(axis=0)],
            "product_form_gap": verify_product_form(self, self.reported),
        }


def _draw_types(cfg: SimulationConfig, L: int) -> np.ndarray:
    out = np.empty((L, cfg.game.n), dtype=np.int64)
    for i, theta in enumerate(cfg.true_supertypes):
        cdf = sampling_cdf(theta.probs)
        u = substream(cfg.seed, _TYPES, i).random(L)
        out[:, i] = np.searchsorted(cdf, u, side="right")
    return out


def _check_bids(col: np.ndarray, k: int, player: int, first_day: int = 1) -> np.ndarray:
    col = np.asarray(col)
    if col.dtype.kind not in "iu":
        raise InvalidBidError(f"player {player} produced non-integer bids", player, first_day)
    bad = np.flatnonzero((col < 0) | (col >= k))
    if bad.size:
        day = first_day + int(bad[0])
        raise InvalidBidError(
            f"player {player} bid type index {int(col[bad[0]])} outside the type space "
            f"on day {day}", player=player, day=day)
    return col.astype(np.int64)


def run_simulation(cfg: SimulationConfig) -> Ledger:
    game = cfg.game
    n, k, L = game.n, len(game.types), cfg.params.horizon
    reported = tuple(s.first_stage(theta)
                     for s, theta in zip(cfg.strategies, cfg.true_supertypes))
    reported = tuple(game.check_supertypes(reported))
    terms = game.expected_terms(reported)
    o1 = terms.o1
    types = _draw_types(cfg, L)
    public = game.sample_public(substream(cfg.seed, _PUBLIC), L)

    policies = [s.make_policy(game, i, reported[i], substream(cfg.seed, _POLICY, i),
                              cfg.params.gamma)
                for i, s in enumerate(cfg.strategies)]
    bids = np.zeros((L, n), dtype=np.int64)
    looped = []
    for i, pol in enumerate(policies):
        if pol.history_free:
            bids[:, i] = _check_bids(pol.batch(types[:, i]), k, i)
        else:
            looped.append(i)

    if looped:
        step = game.outcome_fn(o1)
        o2_list = []
        for day in range(1, L + 1):
            row = day - 1
            for i in looped:
                view = HistoryView(day, types[:day, i], bids[:row, i], o2_list, o1)
                b = policies[i].bid(view)
                if not isinstance(b, (int, np.integer)) or not 0 <= b < k:
                    raise InvalidBidError(
                        f"player {i} bid type index {b!r} outside the type space on day {day}",
                        player=i, day=day)
                bids[row, i] = b
            pub_row = None if public is None else public[row]
            o2_list.append(step(tuple(int(b) for b in bids[row]), pub_row))
        o2 = np.asarray(o2_list)
    else:
        o2 = game.outcomes(o1, bids, public)

    vals = game.valuations(o1, o2, types)
    bid_vals = game.valuations(o1, o2, bids)
    costs = game.costs(o1, o2, public)
    p_first = mech.first_stage_payments(game, reported, terms)
    base = bid_vals - terms.valuations[None, :]
    flags = mech.penalty_flags(bids, reported, k, cfg.params)
    jp = mech.penalty_Jp(np.arange(1, L + 1, dtype=float), cfg.params)
    penalty = np.where(flags, jp[:, None], 0.0)

    return Ledger(
        config_hash=cfg.hash(), game=game, reported=reported, o1=o1, types=types,
        bids=bids, o2=o2, public=public, valuations=vals, bid_valuations=bid_vals,
        costs=costs, p_first=p_first, p_second_base=base, penalty=penalty,
        penalty_flags=flags, stats=stats_from_bids(game, bids))


def stats_from_bids(game: TwoStageGame, bids: np.ndarray) -> DiscrepancyStats:
    """Final discrepancy counts of a bid log, built in bulk."""
    labels = game.types.labels
    stats = DiscrepancyStats(game.types, game.n)
    stats.day = bids.shape[0]
    rows, counts = np.unique(bids, axis=0, return_counts=True)
    for row, c in zip(rows, counts):
        lab = tuple(labels[t] for t in row)
        for i in range(game.n):
            rest = lab[:i] + lab[i + 1:]
            stats.type_counts[i][lab[i]] += int(c)
            stats.others_counts[i][rest] += int(c)
            stats.joint_counts[i][(lab[i], rest)] += int(c)
    return stats


def replay_penalty_flags(ledger: Ledger, params: MechanismParams) -> np.ndarray:
    """Recompute penalty events day by day from the raw bid log."""
    labels = ledger.game.types.labels
    stats = DiscrepancyStats(ledger.game.types, ledger.game.n)
    out = np.zeros_like(ledger.penalty_flags)
    for k, row in enumerate(ledger.bids):
        stats.update(tuple(labels[t] for t in row))
        for i in range(ledger.game.n):
            out[k, i] = mech.penalty_event(stats, i, ledger.reported[i], k + 1, params)
    return out


def estimate_utility(ledger: Ledger, i: int) -> float:
    """Average over the horizon of true-type valuation minus total payment."""
    return float(np.mean(ledger.valuations[:, i] - ledger.p_total[:, i]))


def running_utility(ledger: Ledger, i: int) -> np.ndarray:
    """Utility averaged over days ``1..l`` for every ``l``."""
    per_day = ledger.valuations[:, i] - ledger.p_total[:, i]
    return np.cumsum(per_day) / np.arange(1, ledger.horizon + 1)


def estimate_welfare(ledger: Ledger) -> float:
    return float(np.mean(ledger.valuations.sum(axis=1) - ledger.costs))


def verify_product_form(ledger: Ledger, reported_supertypes: Sequence[Supertype]) -> float:
    """Largest gap between the empirical joint law of the bids and the product of reports."""
    rows, counts = np.unique(ledger.bids, axis=0, return_counts=True)
    probs = np.array([s.as_array() for s in reported_supertypes])
    gap = 0.0
    for row, c in zip(rows, counts):
        target = math.prod(probs[j, t] for j, t in enumerate(row))
        gap = max(gap, abs(c / ledger.horizon - target))
    return gap


def paired_utilities(base: SimulationConfig, i: int, alt: Strategy, seeds) -> np.ndarray:
    """Per-seed ``(truthful utility, deviating utility)`` of player ``i``."""
    out = []
    for seed in seeds:
        truth = run_simulation(replace(base.with_strategy(i, TruthfulStrategy()), seed=seed))
        dev = run_simulation(replace(base.with_strategy(i, alt), seed=seed))
        out.append((estimate_utility(truth, i), estimate_utility(dev, i)))
    return np.array(out)


def deviation_gain(base: SimulationConfig, i: int, alt: Strategy, seeds) -> float:
    """Mean utility advantage of truth-telling over ``alt`` under common random numbers."""
    seeds = list(seeds)
    if not seeds:
        raise InvalidInputError("deviation_gain needs at least one seed")
    u = paired_utilities(base, i, alt, seeds)
    return float(np.mean(u[:, 0] - u[:, 1]))
