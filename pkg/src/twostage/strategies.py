"""Strategy library: truthful play and a set of deviations.

A strategy has two parts.  ``first_stage`` maps the true supertype to the
supertype bid.  ``make_policy`` builds a fresh second-stage policy for one
run; a policy turns the player's own history (its true types, its own bids,
public second-stage outcomes) into a type bid, as a type index.

Policies that ignore history expose ``history_free = True`` and a vectorized
``batch`` method; the engine uses it to skip the per-day loop.  ``batch`` and
day-by-day ``bid`` calls consume the random stream identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .game_core import InvalidInputError, Supertype, TypeSpace, sampling_cdf
from .mechanism import window_r


@dataclass(frozen=True)
class HistoryView:
    """What a player may condition on when bidding on day ``day`` (1-based).

    ``own_types`` holds days ``1..day``; ``own_bids`` and ``o2_history`` hold
    days ``1..day-1``.  Other players' types and bids are never exposed.
    """

    day: int
    own_types: np.ndarray
    own_bids: np.ndarray
    o2_history: Any
    o1: int


def _draw(cdf: np.ndarray, u):
    return np.searchsorted(cdf, u, side="right")


class Strategy:
    kind = "abstract"
    marginal_matching: bool | None = None

    def first_stage(self, theta: Supertype) -> Supertype:
        raise NotImplementedError

    def make_policy(self, game, player: int, reported: Supertype, rng, gamma: float = 1.0):
        raise NotImplementedError

    def kernel(self, types: TypeSpace) -> np.ndarray | None:
        """Row-stochastic bid kernel for stationary strategies, else ``None``."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


class _KernelPolicy:
    history_free = True

    def __init__(self, kernel: np.ndarray, rng):
        self.cdf = sampling_cdf(kernel)
        self.deterministic = bool(np.all((kernel == 0) | (kernel == 1)))
        self.rng = rng

    def batch(self, own_types: np.ndarray) -> np.ndarray:
        own_types = np.asarray(own_types)
        if self.deterministic:
            return self.cdf[own_types].argmax(axis=1)
        u = self.rng.random(own_types.shape[0])
        out = np.empty(own_types.shape[0], dtype=np.int64)
        for t in np.unique(own_types):
            sel = own_types == t
            out[sel] = _draw(self.cdf[t], u[sel])
        return out

    def bid(self, view: HistoryView) -> int:
        return int(self.batch(view.own_types[-1:])[0])


class TruthfulStrategy(Strategy):
    kind = "truthful"
    marginal_matching = True

    def first_stage(self, theta):
        return theta

    def kernel(self, types):
        return np.eye(len(types))

    def make_policy(self, game, player, reported, rng, gamma=1.0):
        return _KernelPolicy(np.eye(len(game.types)), rng)

    def to_dict(self):
        return {"kind": self.kind}


class SupertypeMisreport(Strategy):
    """Bids a fixed supertype in the first stage, true types afterwards."""

    kind = "supertype_misreport"

    def __init__(self, reported: Supertype, marginal_matching: bool | None = None):
        self.reported = reported
        self.marginal_matching = marginal_matching

    def first_stage(self, theta):
        if theta.types != self.reported.types:
            raise InvalidInputError("reported supertype lives on a different type space")
        return self.reported

    def kernel(self, types):
        return np.eye(len(types))

    def make_policy(self, game, player, reported, rng, gamma=1.0):
        return _KernelPolicy(np.eye(len(game.types)), rng)

    def to_dict(self):
        return {"kind": self.kind, "reported": list(self.reported.probs)}


class StationaryMisreport(Strategy):
    """Fixed supertype bid; each day's bid drawn from ``kernel[true type]``."""

    kind = "stationary"

    def __init__(self, kernel, reported: Supertype, marginal_matching: bool | None = None):
        k = np.array(kernel, dtype=float)
        if k.shape != (len(reported.types),) * 2:
            raise InvalidInputError(f"kernel must be {len(reported.types)}x{len(reported.types)}")
        if (k < 0).any() or np.abs(k.sum(axis=1) - 1).max() > 1e-12:
            raise InvalidInputError("kernel rows must be probability vectors")
        k.flags.writeable = False
        self._kernel = k
        self.reported = reported
        self.marginal_matching = marginal_matching

    def first_stage(self, theta):
        return self.reported

    def kernel(self, types):
        return self._kernel

    def make_policy(self, game, player, reported, rng, gamma=1.0):
        return _KernelPolicy(self._kernel, rng)

    def to_dict(self):
        return {"kind": self.kind, "kernel": self._kernel.tolist(),
                "reported": list(self.reported.probs)}


class _MimicPolicy:
    history_free = False

    def __init__(self, game, player, target, bias, reported, rng, gamma):
        self.game = game
        self.player = player
        self.target = target
        self.bias = bias
        self.theta = np.asarray(reported.probs)
        self.counts = np.zeros(len(self.theta))
        self.rng = rng
        self.gamma = gamma

    def bid(self, view: HistoryView) -> int:
        l = view.day
        u = self.rng.random()
        truth = int(view.own_types[-1])
        if l == 1:
            b = truth
        else:
            f = self.counts / (l - 1) - self.theta
            if np.abs(f).max() > window_r(l - 1, self.gamma) / 2:
                b = int(np.argmin(f))
            elif u < self.bias:
                b = int(self.game.infer_bid(view.o1, view.o2_history[-1], self.target))
            else:
                b = truth
        self.counts[b] += 1
        return b


class CorrelatedMimic(Strategy):
    """Copies a proxy of ``target``'s previous bid, read off the public outcome.

    With probability ``bias`` the player bids the type the target most likely
    bid yesterday (inferred from the second-stage outcome); otherwise it bids
    truthfully.  Whenever the running frequency gap of its own bids exceeds
    half the penalty window, it bids the most under-represented type instead,
    which keeps its marginal on the reported supertype.
    """

    kind = "correlated_mimic"
    marginal_matching = True

    def __init__(self, target: int, bias: float = 0.3):
        if not 0 <= bias <= 1:
            raise InvalidInputError("bias must lie in [0, 1]")
        self.target = int(target)
        self.bias = float(bias)

    def first_stage(self, theta):
        return theta

    def make_policy(self, game, player, reported, rng, gamma=1.0):
        if player == self.target:
            raise InvalidInputError("a mimic cannot target itself")
        if not 0 <= self.target < game.n:
            raise InvalidInputError(f"target {self.target} is not a player")
        return _MimicPolicy(game, player, self.target, self.bias, reported, rng, gamma)

    def to_dict(self):
        return {"kind": self.kind, "target": self.target, "bias": self.bias}


def truthful_strategy() -> TruthfulStrategy:
    return TruthfulStrategy()


def supertype_misreport(reported: Supertype) -> SupertypeMisreport:
    return SupertypeMisreport(reported)


def stationary_type_misreport(kernel, reported: Supertype,
                              marginal_matching: bool | None = None) -> StationaryMisreport:
    return StationaryMisreport(kernel, reported, marginal_matching)


def correlated_mimic_strategy(target: int, bias: float = 0.3) -> CorrelatedMimic:
    return CorrelatedMimic(target, bias)


def marginal_match_check(kernel, true_supertype: Supertype, reported: Supertype,
                         tol: float) -> bool:
    """Does bidding through ``kernel`` reproduce the reported supertype on average?"""
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    k = np.asarray(kernel, dtype=float)
    induced = [math.fsum(true_supertype.probs[s] * k[s, t] for s in range(k.shape[0]))
               for t in range(k.shape[1])]
    return all(abs(x - y) <= tol for x, y in zip(induced, reported.probs))


def shift_kernel(k: int) -> np.ndarray:
    """Deterministic kernel bidding the next type (cyclically); a swap when ``k == 2``."""
    return np.roll(np.eye(k), 1, axis=1)


def constant_kernel(k: int, target: int = 0) -> np.ndarray:
    out = np.zeros((k, k))
    out[:, target] = 1.0
    return out


def strategy_library(theta: Supertype, player: int, n: int) -> dict:
    """Named deviations for a player whose true supertype is ``theta``.

    Each entry declares ``marginal_matching`` relative to ``theta``.
    """
    types = theta.types
    k = len(types)
    tilted = np.full(k, 0.2 / max(k - 1, 1)) if k > 1 else np.ones(1)
    tilted[-1] = 0.8 if k > 1 else 1.0
    lib = {
        "truthful": truthful_strategy(),
        "supertype_misreport": SupertypeMisreport(
            Supertype(types, tuple(tilted / tilted.sum())),
            marginal_matching=bool(np.allclose(tilted / tilted.sum(), theta.probs))),
    }
    shift = shift_kernel(k)
    shifted = Supertype(types, tuple(theta.as_array() @ shift))
    lib["flip_kernel"] = StationaryMisreport(shift, shifted, marginal_matching=True)
    lib["always_first"] = StationaryMisreport(
        constant_kernel(k, 0), theta,
        marginal_matching=bool(theta.probs[0] == 1.0))
    if n > 1:
        lib["correlated_mimic"] = CorrelatedMimic((player + 1) % n, 0.3)
    return lib


def strategy_from_dict(d: dict, types: TypeSpace) -> Strategy:
    kind = d.get("kind")
    if kind == "truthful":
        return TruthfulStrategy()
    if kind == "supertype_misreport":
        return SupertypeMisreport(Supertype(types, tuple(d["reported"])))
    if kind == "stationary":
        return StationaryMisreport(d["kernel"], Supertype(types, tuple(d["reported"])))
    if kind == "correlated_mimic":
        return CorrelatedMimic(d["target"], d.get("bias", 0.3))
    raise InvalidInputError(f"unknown strategy kind {kind!r}")
