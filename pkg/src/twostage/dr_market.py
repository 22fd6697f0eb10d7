"""Demand-response market: quadratic curtailment costs, closed-form dispatch,
discretized scaled-beta supertypes and the posted-price baseline.

Provider ``i`` with cost parameter ``delta`` pays ``delta/2 * x**2`` to curtail
``x`` units; the reserve generator pays ``delta_s/2 * g**2``.  Valuations follow
the game convention ``v_i = -cost``, so welfare is minus social cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .engine import substream
from .game_core import (MAX_GRID, ExpectedTerms, InvalidInputError, Supertype,
                        TwoStageGame, TypeSpace, sampling_cdf)

MC_DRAWS = 100_000
_MC_KEY = 3


@dataclass(frozen=True)
class DrAllocation:
    curtailments: np.ndarray
    reserve: float
    multiplier: float

    def social_cost(self, params, delta_s: float) -> float:
        params = np.asarray(params, dtype=float)
        return math.fsum(params / 2 * self.curtailments**2) + delta_s / 2 * self.reserve**2


def _positive(name, values):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidInputError(f"{name} must be positive")
    return arr


def dr_allocate(bid_params, delta_s: float, d: float) -> DrAllocation:
    """Cost-minimizing split of shortage ``d`` between providers and the reserve.

    Every unit goes where the marginal cost is ``lam = d / (sum 1/bid + 1/delta_s)``.
    """
    bids = _positive("bid parameters", bid_params)
    delta_s = float(_positive("delta_s", delta_s))
    if not d >= 0:
        raise InvalidInputError("demand must be nonnegative")
    lam = float(d / (np.sum(1.0 / bids) + 1.0 / delta_s))
    return DrAllocation(curtailments=lam / bids, reserve=lam / delta_s, multiplier=lam)


def allocate_batch(bids: np.ndarray, delta_s: np.ndarray, d: np.ndarray):
    """Row-wise :func:`dr_allocate`; returns ``(x, g_s, lam)``."""
    bids = np.asarray(bids, dtype=float)
    lam = d / (np.sum(1.0 / bids, axis=1) + 1.0 / delta_s)
    return lam[:, None] / bids, lam / delta_s, lam


def optimal_social_cost(params: np.ndarray, delta_s, d) -> np.ndarray:
    """Minimized social cost ``d**2 / (2 * (sum 1/delta + 1/delta_s))`` per row."""
    params = np.asarray(params, dtype=float)
    s = np.sum(1.0 / params, axis=-1) + 1.0 / np.asarray(delta_s, dtype=float)
    return np.asarray(d, dtype=float) ** 2 / (2.0 * s)


# -- supertypes -----------------------------------------------------------------

def moment_matched_beta(mean: float, var: float, scale: float) -> tuple[float, float]:
    """Beta shape parameters whose law, scaled to ``[0, scale]``, has this mean and variance."""
    m = mean / scale
    v = var / scale**2
    if not (0 < m < 1) or not (0 < v < m * (1 - m)):
        raise InvalidInputError(f"no beta law on [0, {scale}] with mean {mean}, variance {var}")
    s = m * (1 - m) / v - 1
    return m * s, (1 - m) * s


def discretize_beta_on_grid(alpha: float, beta: float, grid, beta_support) -> Supertype:
    """Masses proportional to the beta density at each grid point.

    ``beta_support = (a, b)`` is the interval the unit beta is stretched onto.
    """
    if alpha <= 0 or beta <= 0:
        raise InvalidInputError("beta shape parameters must be positive")
    pts = _positive("grid points", grid)
    a, b = beta_support
    dens = stats.beta.pdf((pts - a) / (b - a), alpha, beta)
    if not np.isfinite(dens).all():
        raise InvalidInputError("beta density is unbounded at a grid point")
    if dens.sum() <= 0:
        raise InvalidInputError("beta density vanishes on the whole grid")
    probs = dens / dens.sum()
    return Supertype(TypeSpace(tuple(float(x) for x in pts)), tuple(probs))


def discretize_scaled_beta(alpha: float, beta: float, support, K: int,
                           beta_support=None) -> Supertype:
    """``K`` equally spaced points on ``support`` weighted by a scaled beta density.

    By default the beta is stretched onto ``support`` itself; pass a wider
    ``beta_support`` (e.g. ``(0, hi)``) to truncate a beta law to ``support``.
    """
    lo, hi = support
    if not lo > 0:
        raise InvalidInputError("cost parameters must be positive: lo > 0")
    if not hi > lo or K < 2:
        raise InvalidInputError("need lo < hi and K >= 2")
    grid = np.linspace(lo, hi, int(K))
    return discretize_beta_on_grid(alpha, beta, grid, support if beta_support is None
                                   else beta_support)


def reweight(theta: Supertype, grid: TypeSpace) -> Supertype:
    """Embed ``theta`` on a finer grid that contains all of its points."""
    return Supertype.from_mapping(grid, theta.mass)


def posted_price_response(delta_i: float, p: float) -> float:
    """Curtailment that minimizes ``delta_i/2 x**2 - p x``."""
    if not delta_i > 0:
        raise InvalidInputError("delta_i must be positive")
    return max(p, 0.0) / delta_i


# -- spec -----------------------------------------------------------------------

@dataclass(frozen=True)
class Demand:
    value: float = 10.0
    kind: str = "constant"

    def __post_init__(self):
        if self.kind != "constant":
            raise InvalidInputError(f"unsupported demand kind {self.kind!r}")
        if not self.value >= 0:
            raise InvalidInputError("demand must be nonnegative")

    def __call__(self, day: int) -> float:
        return self.value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class DrSpec:
    n: int
    grid: TypeSpace
    supertypes: tuple
    reserve_dist: Supertype
    demand: Demand = field(default_factory=Demand)
    price_grid: tuple = ()
    redraw_reserve: bool = True
    mc_seed: int = 0

    def __post_init__(self):
        _positive("grid values", self.grid.labels)
        object.__setattr__(self, "supertypes", tuple(self.supertypes))
        object.__setattr__(self, "price_grid", tuple(float(p) for p in self.price_grid))
        if len(self.supertypes) != self.n or self.n < 1:
            raise InvalidInputError("need one supertype per provider")
        for s in (*self.supertypes, self.reserve_dist):
            if s.types != self.grid:
                raise InvalidInputError("supertypes must live on the spec grid")

    @property
    def grid_values(self) -> np.ndarray:
        return np.asarray(self.grid.labels, dtype=float)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "grid": list(self.grid.labels),
            "supertypes": [list(s.probs) for s in self.supertypes],
            "reserve_dist": list(self.reserve_dist.probs),
            "demand": self.demand.to_dict(),
            "price_grid": list(self.price_grid),
            "redraw_reserve": self.redraw_reserve,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DrSpec":
        try:
            grid = TypeSpace(tuple(float(x) for x in d["grid"]))
            sts = tuple(Supertype(grid, tuple(p)) for p in d["supertypes"])
            reserve = Supertype(grid, tuple(d["reserve_dist"]))
            n = int(d["n"])
        except KeyError as e:
            raise InvalidInputError(f"DR document is missing field {e}") from None
        dem = d.get("demand", {"kind": "constant", "value": 10.0})
        return cls(n=n, grid=grid, supertypes=sts, reserve_dist=reserve,
                   demand=Demand(value=float(dem.get("value", 10.0)),
                                 kind=dem.get("kind", "constant")),
                   price_grid=tuple(d.get("price_grid", ())),
                   redraw_reserve=bool(d.get("redraw_reserve", True)))

    def with_providers(self, supertypes) -> "DrSpec":
        sts = tuple(supertypes)
        return DrSpec(len(sts), self.grid, sts, self.reserve_dist, self.demand,
                      self.price_grid, self.redraw_reserve, self.mc_seed)


DEFAULT_MEAN, DEFAULT_VAR, DEFAULT_SCALE, DEFAULT_LO, DEFAULT_K = 1.0, 2.0, 10.0, 0.1, 16


def default_supertype(mean=DEFAULT_MEAN, var=DEFAULT_VAR, grid=None) -> Supertype:
    """Beta law with the given mean and variance on ``[0, 10]``, truncated to the grid."""
    a, b = moment_matched_beta(mean, var, DEFAULT_SCALE)
    if grid is None:
        grid = np.linspace(DEFAULT_LO, DEFAULT_SCALE, DEFAULT_K)
    return discretize_beta_on_grid(a, b, grid, (0.0, DEFAULT_SCALE))


def default_dr_spec(n: int, demand: float = 10.0, price_grid=None) -> DrSpec:
    theta = default_supertype()
    if price_grid is None:
        price_grid = np.linspace(0.0, 3.0, 50)
    return DrSpec(n=n, grid=theta.types, supertypes=(theta,) * n, reserve_dist=theta,
                  demand=Demand(demand), price_grid=tuple(price_grid))


# -- game mapping -----------------------------------------------------------------

def _support(theta: Supertype, values: np.ndarray):
    idx = theta.support()
    return values[idx], theta.as_array()[idx]


class DrGame(TwoStageGame):
    """The DR market as a two-stage game with a single, trivial first stage.

    A second-stage outcome is encoded as the row ``(x_1..x_n, g_s, lam)``.
    Nature's public draw per day is ``(delta_s, d)``.
    """

    O1 = ("commit",)

    def __init__(self, spec: DrSpec):
        self.spec = spec
        self.n = spec.n
        self.types = spec.grid
        self._values = spec.grid_values
        self._cache = {}

    # -- expectations ------------------------------------------------------------
    def _profile_size(self, supertypes, players) -> int:
        size = len(self.spec.reserve_dist.support())
        for j in players:
            size *= len(supertypes[j].support())
        return size

    def _draws(self, supertypes, players, exact: bool):
        """Joint sample of (provider params, delta_s) with weights."""
        if exact:
            axes = [_support(supertypes[j], self._values) for j in players]
            axes.append(_support(self.spec.reserve_dist, self._values))
            vals = np.meshgrid(*[a[0] for a in axes], indexing="ij")
            probs = np.meshgrid(*[a[1] for a in axes], indexing="ij")
            w = np.ones(vals[0].shape) if vals else np.ones(())
            for p in probs:
                w = w * p
            params = np.stack([v.ravel() for v in vals[:-1]], axis=1) if players \
                else np.zeros((w.size, 0))
            return params, vals[-1].ravel(), w.ravel()
        cols = []
        for j in players:
            u = substream(self.spec.mc_seed, _MC_KEY, j).random(MC_DRAWS)
            cols.append(self._values[np.searchsorted(sampling_cdf(supertypes[j].probs), u,
                                                     side="right")])
        u = substream(self.spec.mc_seed, _MC_KEY, 10**6).random(MC_DRAWS)
        ds = self._values[np.searchsorted(sampling_cdf(self.spec.reserve_dist.probs), u,
                                          side="right")]
        params = np.stack(cols, axis=1) if cols else np.zeros((MC_DRAWS, 0))
        return params, ds, None

    def _method(self, supertypes, players) -> bool:
        return self._profile_size(supertypes, players) <= MAX_GRID

    def optimal_first_stage_index(self, supertypes) -> int:
        self.check_supertypes(supertypes)
        return 0

    def optimal_welfare(self, supertypes, included=None) -> float:
        supertypes = self.check_supertypes(supertypes)
        players = sorted(range(self.n) if included is None else set(included))
        exact = self._method(supertypes, players)
        params, ds, w = self._draws(supertypes, players, exact)
        cost = optimal_social_cost(params, ds, self.spec.demand(1))
        if exact:
            return -math.fsum(w * cost)
        return -float(np.mean(cost))

    def expected_terms(self, supertypes) -> ExpectedTerms:
        supertypes = self.check_supertypes(supertypes)
        key = tuple(s.probs for s in supertypes)
        if key in self._cache:
            return self._cache[key]
        players = list(range(self.n))
        exact = self._method(supertypes, players)
        params, ds, w = self._draws(supertypes, players, exact)
        x, g, lam = allocate_batch(params, ds, self.spec.demand(1))
        v = -params / 2 * x**2
        c = ds / 2 * g**2
        if exact:
            ev = np.array([math.fsum(w * v[:, i]) for i in range(self.n)])
            terms = ExpectedTerms(0, ev, math.fsum(w * c), "exact", np.zeros(self.n + 1))
        else:
            m = len(ds)
            se = np.append(v.std(axis=0, ddof=1), c.std(ddof=1)) / math.sqrt(m)
            terms = ExpectedTerms(0, v.mean(axis=0), float(c.mean()), "monte_carlo", se)
        self._cache[key] = terms
        return terms

    # -- engine hooks --------------------------------------------------------------
    def sample_public(self, rng, days):
        cdf = sampling_cdf(self.spec.reserve_dist.probs)
        k = days if self.spec.redraw_reserve else 1
        ds = self._values[np.searchsorted(cdf, rng.random(k), side="right")]
        ds = np.broadcast_to(ds, (days,))
        dem = np.array([self.spec.demand(l) for l in range(1, days + 1)])
        return np.stack([ds, dem], axis=1)

    def outcomes(self, o1, bids, public):
        x, g, lam = allocate_batch(self._values[np.asarray(bids)], public[:, 0], public[:, 1])
        return np.column_stack([x, g, lam])

    def outcome_fn(self, o1):
        vals = self._values

        def f(bid_tuple, public_row):
            a = dr_allocate(vals[list(bid_tuple)], public_row[0], public_row[1])
            return np.append(a.curtailments, [a.reserve, a.multiplier])

        return f

    def valuations(self, o1, o2, type_idx):
        o2 = np.asarray(o2)
        return -self._values[np.asarray(type_idx)] / 2 * o2[:, :self.n] ** 2

    def costs(self, o1, o2, public):
        o2 = np.asarray(o2)
        return public[:, 0] / 2 * o2[:, self.n] ** 2

    def infer_bid(self, o1, o2, target):
        x, lam = o2[target], o2[-1]
        if x <= 0:
            return 0
        return int(np.argmin(np.abs(self._values - lam / x)))

    def o1_label(self, o1):
        return self.O1[o1]

    def o2_label(self, o2):
        return ";".join(repr(float(v)) for v in o2)

    def to_dict(self):
        return self.spec.to_dict()


def build_dr_game(spec: DrSpec) -> DrGame:
    return DrGame(spec)


# -- posted price ---------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    prices: np.ndarray
    mean_cost: np.ndarray
    stderr: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.mean_cost))

    @property
    def best_price(self) -> float:
        return float(self.prices[self.best_index])

    @property
    def best_cost(self) -> float:
        return float(self.mean_cost[self.best_index])


def draw_days(spec: DrSpec, days: int, seed: int):
    """True provider parameters ``(days, n)``, reserve parameters and demands."""
    cols = []
    for i, theta in enumerate(spec.supertypes):
        u = substream(seed, 0, i).random(days)
        cols.append(spec.grid_values[np.searchsorted(sampling_cdf(theta.probs), u,
                                                     side="right")])
    game = DrGame(spec)
    public = game.sample_public(substream(seed, 2), days)
    params = np.stack(cols, axis=1)
    return params, public[:, 0], public[:, 1]


def posted_price_costs(params, delta_s, d, price: float) -> np.ndarray:
    """Per-day social cost when every provider answers the posted ``price``.

    Any mismatch with the shortage, including over-curtailment, is settled by the
    reserve at ``delta_s/2 * g**2``.
    """
    x = max(price, 0.0) / params
    g = d - x.sum(axis=1)
    return np.sum(params / 2 * x**2, axis=1) + delta_s / 2 * g**2


def posted_price_sweep(spec: DrSpec, days: int, seed: int) -> SweepResult:
    if not spec.price_grid:
        raise InvalidInputError("price grid is empty")
    params, ds, d = draw_days(spec, days, seed)
    means, ses = [], []
    for p in spec.price_grid:
        c = posted_price_costs(params, ds, d, p)
        means.append(c.mean())
        ses.append(c.std(ddof=1) / math.sqrt(days) if days > 1 else 0.0)
    return SweepResult(np.array(spec.price_grid), np.array(means), np.array(ses))


def mechanism_social_cost(spec: DrSpec, days: int, seed: int) -> tuple[float, float]:
    """Mean and standard error of the optimal (truthful) social cost on the sweep's draws."""
    params, ds, d = draw_days(spec, days, seed)
    c = optimal_social_cost(params, ds, d)
    return float(c.mean()), (float(c.std(ddof=1) / math.sqrt(days)) if days > 1 else 0.0)
