"""Two-part payment rule with concentration-window penalties.

Each player pays a constant first-stage VCG charge plus, every day, the gap
between the valuation its type bid implies and the valuation expected under
its supertype bid.  A superlinear penalty is added on any day where the
empirical frequencies of its type bids, or their joint frequencies with the
other players' bids, leave a window that shrinks slightly slower than
``1/sqrt(l)``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .game_core import InvalidInputError, Supertype, TwoStageGame, TypeSpace


class InvalidBidError(InvalidInputError):
    """A type bid outside the type space."""

    def __init__(self, message, player=None, day=None):
        super().__init__(message)
        self.player = player
        self.day = day


@dataclass(frozen=True)
class MechanismParams:
    gamma: float = 1.0
    penalty_exponent: float = 2.0
    horizon: int = 1000

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if not self.penalty_exponent > 1:
            raise InvalidInputError("penalty_exponent must exceed 1")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidInputError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "penalty_exponent": self.penalty_exponent,
                "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d: dict) -> "MechanismParams":
        unknown = set(d) - {"gamma", "penalty_exponent", "horizon"}
        if unknown:
            raise InvalidInputError(f"unknown mechanism fields {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PaymentBreakdown:
    first_stage: float
    second_stage_base: float
    penalty: float

    @property
    def total(self) -> float:
        return self.first_stage + self.second_stage_base + self.penalty


def window_r(l: int, gamma: float) -> float:
    """Smallest admissible window: ``sqrt(ln(2 l^(1+gamma)) / (2 l))``."""
    if l < 1:
        raise InvalidInputError("day index starts at 1")
    return math.sqrt((math.log(2.0) + (1.0 + gamma) * math.log(l)) / (2.0 * l))


@lru_cache(maxsize=32)
def _window_array(horizon: int, gamma: float) -> np.ndarray:
    r = np.array([window_r(l, gamma) for l in range(1, horizon + 1)])
    r.flags.writeable = False
    return r


def window_schedule(horizon: int, gamma: float) -> np.ndarray:
    """``window_r`` for days ``1..horizon`` (same floats as the scalar function)."""
    return _window_array(int(horizon), float(gamma))


def penalty_Jp(l, params: MechanismParams):
    return np.power(l, params.penalty_exponent) if isinstance(l, np.ndarray) \
        else float(l) ** params.penalty_exponent


# -- discrepancy statistics ---------------------------------------------------

@dataclass
class DiscrepancyStats:
    """Running bid counts behind the frequency and correlation discrepancies.

    Keys are type labels; ``others`` keys are tuples of the other players'
    labels in player order.
    """

    types: TypeSpace
    n: int
    day: int = 0
    type_counts: list = field(default_factory=list)
    others_counts: list = field(default_factory=list)
    joint_counts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.type_counts:
            self.type_counts = [Counter() for _ in range(self.n)]
            self.others_counts = [Counter() for _ in range(self.n)]
            self.joint_counts = [Counter() for _ in range(self.n)]

    def update(self, bid_profile) -> "DiscrepancyStats":
        bids = tuple(bid_profile)
        if len(bids) != self.n:
            raise InvalidBidError(f"bid profile must have {self.n} entries")
        for i, b in enumerate(bids):
            if b not in self.types:
                raise InvalidBidError(f"player {i} bid {b!r} outside the type space",
                                      player=i, day=self.day + 1)
        self.day += 1
        for i, b in enumerate(bids):
            rest = bids[:i] + bids[i + 1:]
            self.type_counts[i][b] += 1
            self.others_counts[i][rest] += 1
            self.joint_counts[i][(b, rest)] += 1
        return self


def update_stats(stats: DiscrepancyStats, bid_profile) -> DiscrepancyStats:
    return stats.update(bid_profile)


def discrepancy_f(stats: DiscrepancyStats, i: int, t, reported: Supertype) -> float:
    l = stats.day
    return stats.type_counts[i][t] / l - reported[t]


def correlation_h(stats: DiscrepancyStats, i: int, d, reported: Supertype) -> float:
    d = tuple(d)
    rest = d[:i] + d[i + 1:]
    l = stats.day
    return stats.joint_counts[i][(d[i], rest)] / l \
        - reported[d[i]] * (stats.others_counts[i][rest] / l)


def penalty_event(stats: DiscrepancyStats, i: int, reported: Supertype, l: int,
                  params: MechanismParams) -> bool:
    if l != stats.day:
        raise InvalidInputError(f"stats are at day {stats.day}, not {l}")
    r = window_r(l, params.gamma)
    # same arithmetic as discrepancy_f / correlation_h, inlined for replay speed
    mass = reported.mass
    counts = stats.type_counts[i]
    for t, m in mass.items():
        if abs(counts[t] / l - m) >= r:
            return True
    # unobserved d_{-i} give h == 0 exactly
    joint = stats.joint_counts[i]
    for rest, c in stats.others_counts[i].items():
        share = c / l
        for t, m in mass.items():
            if abs(joint[(t, rest)] / l - m * share) >= r:
                return True
    return False


def penalty_flags(bids: np.ndarray, reported, n_types: int,
                  params: MechanismParams, block: int = 4096) -> np.ndarray:
    """Penalty events for every day and player of a bid log (type indices).

    Vectorized twin of :func:`penalty_event`; uses the same arithmetic so the
    two agree bit for bit.
    """
    bids = np.asarray(bids, dtype=np.int64)
    L, n = bids.shape
    r = window_schedule(L, params.gamma)
    days = np.arange(1, L + 1, dtype=float)
    flags = np.zeros((L, n), dtype=bool)
    for i in range(n):
        theta = np.asarray(reported[i].probs if isinstance(reported[i], Supertype)
                           else reported[i], dtype=float)
        own = bids[:, i]
        others = np.delete(bids, i, axis=1)
        if others.shape[1]:
            _, rest_id = np.unique(others, axis=0, return_inverse=True)
            rest_id = rest_id.reshape(-1)
            m = int(rest_id.max()) + 1
        else:
            rest_id = np.zeros(L, dtype=np.int64)
            m = 1
        joint_id = own * m + rest_id
        cnt_t = np.zeros(n_types)
        cnt_r = np.zeros(m)
        cnt_j = np.zeros(n_types * m)
        theta_j = np.repeat(theta, m)
        step = max(1, min(block, 2_000_000 // (n_types * m + m + n_types)))
        for s in range(0, L, step):
            e = min(L, s + step)
            rows = np.arange(e - s)
            l = days[s:e, None]
            oh_t = np.zeros((e - s, n_types))
            oh_t[rows, own[s:e]] = 1.0
            ct = np.cumsum(oh_t, axis=0) + cnt_t
            oh_r = np.zeros((e - s, m))
            oh_r[rows, rest_id[s:e]] = 1.0
            cr = np.cumsum(oh_r, axis=0) + cnt_r
            oh_j = np.zeros((e - s, n_types * m))
            oh_j[rows, joint_id[s:e]] = 1.0
            cj = np.cumsum(oh_j, axis=0) + cnt_j
            f = np.abs(ct / l - theta).max(axis=1)
            cr_full = np.tile(cr, n_types)
            h = np.abs(cj / l - theta_j * (cr_full / l)).max(axis=1)
            flags[s:e, i] = (f >= r[s:e]) | (h >= r[s:e])
            cnt_t, cnt_r, cnt_j = ct[-1], cr[-1], cj[-1]
    return flags


# -- payments -----------------------------------------------------------------

def expected_valuation(game: TwoStageGame, supertype_bids, i: int) -> float:
    return float(game.expected_terms(supertype_bids).valuations[i])


def first_stage_payment(game: TwoStageGame, supertype_bids, i: int,
                        terms=None) -> float:
    """VCG charge: optimal welfare without ``i`` minus others' expected welfare with ``i``."""
    terms = game.expected_terms(supertype_bids) if terms is None else terms
    others = [j for j in range(game.n) if j != i]
    w_minus = game.optimal_welfare(supertype_bids, others)
    others_welfare = math.fsum(terms.valuations[others]) - terms.cost
    return w_minus - others_welfare


def first_stage_payments(game: TwoStageGame, supertype_bids, terms=None) -> np.ndarray:
    terms = game.expected_terms(supertype_bids) if terms is None else terms
    return np.array([first_stage_payment(game, supertype_bids, i, terms)
                     for i in range(game.n)])


def second_stage_payment(game: TwoStageGame, supertype_bids, day_bids, i: int,
                         l: int, penalty_flag: bool, params: MechanismParams,
                         public=None) -> float:
    """Realized-minus-expected valuation at the bids, plus the day's penalty.

    ``day_bids`` are type labels.
    """
    terms = game.expected_terms(supertype_bids)
    idx = np.array([[game.types.index(b) for b in day_bids]])
    pub = None if public is None else np.asarray(public)[None]
    o2 = game.outcomes(terms.o1, idx, pub)
    v_bid = float(game.valuations(terms.o1, o2, idx)[0, i])
    base = v_bid - float(terms.valuations[i])
    return base + (penalty_Jp(l, params) if penalty_flag else 0.0)


def total_payment(first: float, second: float) -> float:
    return first + second
