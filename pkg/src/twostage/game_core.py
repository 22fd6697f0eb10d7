"""Finite two-stage stochastic games and their welfare-optimal decision rules.

A game is described by a finite type space, first- and second-stage outcome
sets, per-player valuation tables ``v_i(type, o1, o2)`` and a planner cost
table ``c(o1, o2)``.  Decision rules are computed by exact enumeration over the
product type grid: the second-stage rule maximizes realized welfare for each
reported type profile, and the first-stage rule maximizes the expectation of
that second-stage value.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

MAX_GRID = 10**6
PROB_TOL = 1e-12


class InvalidInputError(ValueError):
    """Raised when arguments do not match the game's declared domains."""


class GridSizeError(InvalidInputError):
    """Raised when an exact enumeration would exceed ``MAX_GRID`` profiles."""


@dataclass(frozen=True)
class TypeSpace:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise InvalidInputError("type space must be nonempty")
        if len(set(labels)) != len(labels):
            raise InvalidInputError("type labels must be distinct")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {t: k for k, t in enumerate(labels)})

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self._index

    def index(self, label) -> int:
        try:
            return self._index[label]
        except (KeyError, TypeError):
            raise InvalidInputError(f"{label!r} is not in the type space") from None


@dataclass(frozen=True)
class Supertype:
    """Probability mass function over a :class:`TypeSpace`.

    ``probs[k]`` is the mass of ``types.labels[k]``.
    """

    types: TypeSpace
    probs: tuple

    def __post_init__(self):
        p = tuple(float(x) for x in self.probs)
        if len(p) != len(self.types):
            raise InvalidInputError(
                f"supertype has {len(p)} masses for {len(self.types)} types")
        if any(not math.isfinite(x) or x < 0 for x in p):
            raise InvalidInputError("masses must be finite and nonnegative")
        if abs(math.fsum(p) - 1.0) > PROB_TOL:
            raise InvalidInputError(f"masses sum to {math.fsum(p)!r}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_mapping(cls, types: TypeSpace, mass: dict) -> "Supertype":
        probs = [0.0] * len(types)
        for label, p in mass.items():
            probs[types.index(label)] = float(p)
        return cls(types, tuple(probs))

    @classmethod
    def point_mass(cls, types: TypeSpace, label) -> "Supertype":
        return cls.from_mapping(types, {label: 1.0})

    @classmethod
    def uniform(cls, types: TypeSpace) -> "Supertype":
        k = len(types)
        return cls(types, (1.0 / k,) * k)

    @cached_property
    def mass(self) -> Mapping:
        return MappingProxyType(dict(zip(self.types.labels, self.probs)))

    def __getitem__(self, label) -> float:
        return self.probs[self.types.index(label)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.as_array() > 0)


@dataclass(frozen=True)
class DecisionRuleSet:
    """Deterministic first- and second-stage decision rules (labels in, labels out)."""

    first_stage: Callable[[Sequence[Supertype]], Hashable]
    second_stage: Callable[[Sequence[Supertype], Sequence], Hashable]


@dataclass(frozen=True)
class ExpectedTerms:
    """Expectations under the optimal rules for a bid profile.

    ``valuations[i]`` is ``E[v_i]`` and ``cost`` is ``E[c]``; ``stderr`` is
    zero for exact enumeration and the Monte Carlo standard errors otherwise.
    """

    o1: int
    valuations: np.ndarray
    cost: float
    method: str = "exact"
    stderr: np.ndarray | None = None

    @property
    def welfare(self) -> float:
        return math.fsum(self.valuations) - self.cost


def sampling_cdf(probs) -> np.ndarray:
    """Cumulative masses along the last axis, pinned to exactly 1 from the last positive mass.

    With ``searchsorted(cdf, u, side="right")`` and ``u`` in [0, 1) this never
    returns a zero-mass index.
    """
    p = np.asarray(probs, dtype=float)
    cdf = np.cumsum(p, axis=-1)
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    cols = np.arange(p.shape[-1])
    return np.where(cols >= np.expand_dims(last, -1), 1.0, cdf)


def _check_grid(sizes) -> None:
    total = 1
    for s in sizes:
        total *= int(s)
    if total > MAX_GRID:
        raise GridSizeError(f"exact enumeration needs {total} profiles (> {MAX_GRID})")


class TwoStageGame:
    """Interface shared by :class:`GameSpec` and the demand-response game.

    Outcomes handed to the engine are array encodings: ``o1`` is an index and
    a batch of second-stage outcomes is an array with one entry (or row) per
    day.  ``public`` carries nature's per-day public draws (``None`` for games
    without any).
    """

    n: int
    types: TypeSpace

    def optimal_first_stage_index(self, supertypes) -> int:
        raise NotImplementedError

    def optimal_welfare(self, supertypes, included=None) -> float:
        raise NotImplementedError

    def expected_terms(self, supertypes) -> ExpectedTerms:
        raise NotImplementedError

    def sample_public(self, rng: np.random.Generator, days: int):
        return None

    def outcomes(self, o1: int, bids: np.ndarray, public) -> np.ndarray:
        raise NotImplementedError

    def outcome_fn(self, o1: int) -> Callable:
        """Return ``f(bid_tuple, public_row) -> o2`` for one day."""
        raise NotImplementedError

    def valuations(self, o1: int, o2: np.ndarray, type_idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def costs(self, o1: int, o2: np.ndarray, public) -> np.ndarray:
        raise NotImplementedError

    def infer_bid(self, o1: int, o2, target: int) -> int:
        """Best guess of ``target``'s type bid from a public second-stage outcome."""
        raise NotImplementedError

    def o1_label(self, o1: int):
        raise NotImplementedError

    def o2_label(self, o2) -> str:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def check_supertypes(self, supertypes) -> list:
        supertypes = list(supertypes)
        if len(supertypes) != self.n:
            raise InvalidInputError(
                f"expected {self.n} supertypes, got {len(supertypes)}")
        for s in supertypes:
            if not isinstance(s, Supertype) or s.types != self.types:
                raise InvalidInputError("supertype is not defined on the game's type space")
        return supertypes


@dataclass(frozen=True, eq=False)
class GameSpec(TwoStageGame):
    """Finite two-stage stochastic game.

    ``valuation`` has shape ``(n, |types|, |o1|, |o2|)`` and ``cost`` has shape
    ``(|o1|, |o2|)``; axes follow the declared label orderings, which also fix
    tie-breaking (lowest index wins).
    """

    n: int
    types: TypeSpace
    o1: tuple
    o2: tuple
    valuation: np.ndarray
    cost: np.ndarray
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError("a game needs at least one player")
        if not self.o1 or not self.o2:
            raise InvalidInputError("outcome sets must be nonempty")
        object.__setattr__(self, "o1", tuple(self.o1))
        object.__setattr__(self, "o2", tuple(self.o2))
        v = np.array(self.valuation, dtype=float)
        c = np.array(self.cost, dtype=float)
        want = (self.n, len(self.types), len(self.o1), len(self.o2))
        if v.shape != want:
            raise InvalidInputError(f"valuation shape {v.shape} != {want}")
        if c.shape != want[2:]:
            raise InvalidInputError(f"cost shape {c.shape} != {want[2:]}")
        if not (np.isfinite(v).all() and np.isfinite(c).all()):
            raise InvalidInputError("valuations and costs must be finite")
        v.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "valuation", v)
        object.__setattr__(self, "cost", c)

    # -- label helpers -------------------------------------------------------
    def o1_index(self, label) -> int:
        try:
            return self.o1.index(label)
        except ValueError:
            raise InvalidInputError(f"{label!r} is not a first-stage outcome") from None

    def o1_label(self, o1: int):
        return self.o1[o1]

    def o2_label(self, o2) -> str:
        return str(self.o2[int(o2)])

    # -- welfare tensors -----------------------------------------------------
    def _value_tensor(self, o1: int, players: Sequence[int]) -> np.ndarray:
        """Welfare per (type profile of ``players``, o2), shape ``(K,)*m + (|o2|,)``."""
        k = len(self.types)
        m = len(players)
        acc = np.zeros((k,) * m + (len(self.o2),))
        for axis, i in enumerate(players):
            shape = [1] * m + [len(self.o2)]
            shape[axis] = k
            acc = acc + self.valuation[i, :, o1, :].reshape(shape)
        return acc - self.cost[o1]

    @staticmethod
    def _weights(supertypes, players) -> np.ndarray:
        w = np.ones(())
        for i in players:
            w = np.multiply.outer(w, supertypes[i].as_array())
        return w

    def _stage_values(self, supertypes, players) -> np.ndarray:
        """Exact E[max_o2 welfare] for every o1, restricted to ``players``."""
        _check_grid([len(self.types)] * len(players))
        w = self._weights(supertypes, players).ravel()
        out = np.empty(len(self.o1))
        for a in range(len(self.o1)):
            best = self._value_tensor(a, players).max(axis=-1).ravel()
            out[a] = math.fsum(w * best)
        return out

    def optimal_first_stage_index(self, supertypes, players=None) -> int:
        supertypes = self.check_supertypes(supertypes)
        players = range(self.n) if players is None else players
        return int(np.argmax(self._stage_values(supertypes, list(players))))

    def optimal_welfare(self, supertypes, included=None) -> float:
        supertypes = self.check_supertypes(supertypes)
        players = sorted(range(self.n) if included is None else set(included))
        if any(i < 0 or i >= self.n for i in players):
            raise InvalidInputError("included players out of range")
        return float(self._stage_values(supertypes, players).max())

    def outcome_table(self, o1: int) -> np.ndarray:
        """Optimal o2 index for every full type profile, flattened row-major."""
        if o1 not in self._tables:
            _check_grid([len(self.types)] * self.n)
            vals = self._value_tensor(o1, list(range(self.n)))
            self._tables[o1] = vals.reshape(-1, len(self.o2)).argmax(axis=-1)
        return self._tables[o1]

    def expected_terms(self, supertypes) -> ExpectedTerms:
        supertypes = self.check_supertypes(supertypes)
        o1 = self.optimal_first_stage_index(supertypes)
        table = self.outcome_table(o1)
        w = self._weights(supertypes, range(self.n)).ravel()
        k = len(self.types)
        profiles = np.indices((k,) * self.n).reshape(self.n, -1)
        ev = np.empty(self.n)
        for i in range(self.n):
            ev[i] = math.fsum(w * self.valuation[i, profiles[i], o1, table])
        ec = math.fsum(w * self.cost[o1, table])
        return ExpectedTerms(o1=o1, valuations=ev, cost=ec)

    # -- engine hooks --------------------------------------------------------
    def _flat(self, bids: np.ndarray) -> np.ndarray:
        k = len(self.types)
        flat = np.zeros(bids.shape[0], dtype=np.int64)
        for i in range(self.n):
            flat = flat * k + bids[:, i]
        return flat

    def outcomes(self, o1, bids, public=None):
        return self.outcome_table(o1)[self._flat(np.asarray(bids))]

    def outcome_fn(self, o1):
        table = self.outcome_table(o1)
        k = len(self.types)

        def f(bid_tuple, public_row=None):
            flat = 0
            for b in bid_tuple:
                flat = flat * k + b
            return int(table[flat])

        return f

    def valuations(self, o1, o2, type_idx):
        type_idx = np.asarray(type_idx)
        cols = [self.valuation[i, type_idx[:, i], o1, o2] for i in range(self.n)]
        return np.stack(cols, axis=1)

    def costs(self, o1, o2, public=None):
        return self.cost[o1, np.asarray(o2)]

    def infer_bid(self, o1, o2, target):
        return self._signal_map(o1, target)[int(o2)]

    def _signal_map(self, o1, target) -> np.ndarray:
        key = ("signal", o1, target)
        if key not in self._tables:
            table = self.outcome_table(o1)
            k = len(self.types)
            target_type = np.indices((k,) * self.n).reshape(self.n, -1)[target]
            counts = np.zeros((len(self.o2), k), dtype=np.int64)
            np.add.at(counts, (table, target_type), 1)
            self._tables[key] = counts.argmax(axis=1)
        return self._tables[key]

    # -- serialization -------------------------------------------------------
    def to_dict(self, supertypes=None) -> dict:
        d = {
            "n": self.n,
            "types": list(self.types.labels),
            "o1": list(self.o1),
            "o2": list(self.o2),
            "valuation": [
                [i, t, a, b, float(self.valuation[i, ti, ai, bi])]
                for i in range(self.n)
                for ti, t in enumerate(self.types.labels)
                for ai, a in enumerate(self.o1)
                for bi, b in enumerate(self.o2)
            ],
            "cost": [
                [a, b, float(self.cost[ai, bi])]
                for ai, a in enumerate(self.o1)
                for bi, b in enumerate(self.o2)
            ],
        }
        if supertypes is not None:
            d["supertypes"] = [list(s.probs) for s in supertypes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> tuple["GameSpec", list | None]:
        """Parse the JSON document form; returns ``(spec, supertypes or None)``."""
        try:
            n = int(d["n"])
            types = TypeSpace(tuple(d["types"]))
            o1 = tuple(d["o1"])
            o2 = tuple(d["o2"])
            entries_v, entries_c = d["valuation"], d["cost"]
        except KeyError as e:
            raise InvalidInputError(f"game document is missing field {e}") from None
        o1_ix = {x: k for k, x in enumerate(o1)}
        o2_ix = {x: k for k, x in enumerate(o2)}
        v = np.full((n, len(types), len(o1), len(o2)), np.nan)
        c = np.full((len(o1), len(o2)), np.nan)
        try:
            for row_no, (i, t, a, b, val) in enumerate(entries_v):
                v[int(i), types.index(t), o1_ix[a], o2_ix[b]] = float(val)
            for row_no, (a, b, val) in enumerate(entries_c):
                c[o1_ix[a], o2_ix[b]] = float(val)
        except (KeyError, IndexError, ValueError, TypeError) as e:
            raise InvalidInputError(f"bad valuation/cost entry {row_no}: {e}") from None
        if np.isnan(v).any():
            raise InvalidInputError("valuation is not defined for every (player, type, o1, o2)")
        if np.isnan(c).any():
            raise InvalidInputError("cost is not defined for every (o1, o2)")
        spec = cls(n, types, o1, o2, v, c)
        sts = None
        if "supertypes" in d:
            sts = [Supertype(types, tuple(p)) for p in d["supertypes"]]
            spec.check_supertypes(sts)
        return spec, sts

    def to_json(self, supertypes=None) -> str:
        return json.dumps(self.to_dict(supertypes))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


# -- label-level operations ---------------------------------------------------

def _labels_to_idx(spec: GameSpec, profile) -> tuple:
    profile = list(profile)
    if len(profile) != spec.n:
        raise InvalidInputError(f"type profile must have {spec.n} entries")
    return tuple(spec.types.index(t) for t in profile)


def optimal_second_stage(spec: GameSpec, o1, type_profile):
    """Welfare-maximizing recourse action for a reported type profile."""
    a = spec.o1_index(o1)
    idx = _labels_to_idx(spec, type_profile)
    welfare = spec.cost[a] * 0.0
    for i, t in enumerate(idx):
        welfare = welfare + spec.valuation[i, t, a, :]
    welfare = welfare - spec.cost[a]
    return spec.o2[int(np.argmax(welfare))]


def optimal_first_stage(spec: GameSpec, supertypes):
    return spec.o1[spec.optimal_first_stage_index(supertypes)]


def optimal_welfare(spec: GameSpec, supertypes, included=None) -> float:
    """Optimal expected welfare of the game restricted to ``included`` players.

    Excluded players' valuations are dropped; the planner cost stays.
    ``included=None`` means every player.
    """
    return spec.optimal_welfare(supertypes, included)


def optimal_rules(spec: GameSpec) -> DecisionRuleSet:
    return DecisionRuleSet(
        first_stage=lambda sts: optimal_first_stage(spec, sts),
        second_stage=lambda sts, profile: optimal_second_stage(
            spec, optimal_first_stage(spec, sts), profile),
    )


def expected_welfare(spec: GameSpec, supertypes, rules: DecisionRuleSet) -> float:
    """Exact expected welfare of arbitrary decision rules by enumeration."""
    supertypes = spec.check_supertypes(supertypes)
    _check_grid([len(spec.types)] * spec.n)
    o1 = rules.first_stage(supertypes)
    a = spec.o1_index(o1)
    k = len(spec.types)
    terms = []
    for idx in itertools.product(range(k), repeat=spec.n):
        w = np.ones(())
        for i, t in enumerate(idx):
            w = w * supertypes[i].probs[t]
        profile = [spec.types.labels[t] for t in idx]
        o2 = rules.second_stage(supertypes, profile)
        try:
            b = spec.o2.index(o2)
        except ValueError:
            raise InvalidInputError(f"rule returned unknown outcome {o2!r}") from None
        value = np.zeros(())
        for i, t in enumerate(idx):
            value = value + spec.valuation[i, t, a, b]
        value = value - spec.cost[a, b]
        terms.append(float(w * value))
    return math.fsum(terms)


def reference_game() -> tuple[GameSpec, list[Supertype]]:
    """Two players with binary types competing for one item; uniform supertypes."""
    types = TypeSpace((0, 1))
    o2 = ("none", "p1", "p2")
    v = np.zeros((2, 2, 1, 3))
    for i in range(2):
        for t in (0, 1):
            v[i, t, 0, 1 + i] = t
    spec = GameSpec(2, types, ("A",), o2, v, np.zeros((1, 3)))
    return spec, [Supertype.uniform(types)] * 2
