"""Experiment orchestration: figure-ready CSVs plus a reproducibility manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import mechanism as mech
from .dr_market import (DrGame, DrSpec, Demand, default_dr_spec, default_supertype,
                        draw_days, mechanism_social_cost, optimal_social_cost,
                        posted_price_costs, posted_price_sweep)
from .engine import SimulationConfig, run_simulation
from .game_core import GameSpec, InvalidInputError, Supertype, TypeSpace
from .mechanism import MechanismParams
from .strategies import TruthfulStrategy, strategy_from_dict

KINDS = ("social_cost_vs_n", "payment_sensitivity", "posted_price_comparison",
         "acceptance_suite", "simulate")


class ConfigError(InvalidInputError):
    """Unreadable or malformed configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    parameters: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    output_dir: str = "."
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def hash(self) -> str:
        blob = json.dumps({"kind": self.kind, "parameters": self.parameters,
                           "seeds": list(self.seeds)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


# -- config ingestion -------------------------------------------------------------

def load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def game_from_document(doc: dict, where: str = "config"):
    """Build ``(game, supertypes)`` from a GameSpec or DrSpec document."""
    try:
        if "grid" in doc:
            spec = DrSpec.from_dict(doc)
            return DrGame(spec), list(spec.supertypes)
        spec, sts = GameSpec.from_dict(doc)
    except ConfigError:
        raise
    except (InvalidInputError, KeyError, TypeError, ValueError, IndexError) as e:
        raise ConfigError(f"{where}: invalid game document: {e}") from None
    if sts is None:
        sts = [Supertype.uniform(spec.types)] * spec.n
    return spec, list(sts)


def simulation_from_document(doc: dict, days: int | None = None, seed: int = 0,
                             gamma: float | None = None,
                             penalty_exponent: float | None = None,
                             where: str = "config") -> SimulationConfig:
    """A simulate config is either a bare game document or
    ``{"game": …, "strategies": […], "true_supertypes": […], "params": {…}}``."""
    game_doc = doc["game"] if "game" in doc else doc
    game, sts = game_from_document(game_doc, where)
    if "true_supertypes" in doc:
        try:
            sts = [Supertype(game.types, tuple(p)) for p in doc["true_supertypes"]]
        except InvalidInputError as e:
            raise ConfigError(f"{where}: field 'true_supertypes': {e}") from None
    try:
        strategies = [strategy_from_dict(s, game.types) for s in doc.get("strategies", [])] \
            or [TruthfulStrategy()] * game.n
    except (InvalidInputError, KeyError) as e:
        raise ConfigError(f"{where}: field 'strategies': {e}") from None
    p = dict(doc.get("params", {}))
    if days is not None:
        p["horizon"] = days
    if gamma is not None:
        p["gamma"] = gamma
    if penalty_exponent is not None:
        p["penalty_exponent"] = penalty_exponent
    try:
        params = MechanismParams.from_dict(p)
        return SimulationConfig(game, strategies, sts, params, seed=seed)
    except InvalidInputError as e:
        raise ConfigError(f"{where}: {e}") from None


# -- output helpers ---------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_manifest(out: Path, cfg: ExperimentConfig, outputs, flags=None, extra=None) -> Path:
    doc = {
        "kind": cfg.kind,
        "config_hash": cfg.hash(),
        "seeds": list(cfg.seeds),
        "parameters": cfg.parameters,
        "version": __version__,
        "flags": flags or {},
        "outputs": sorted(p.name for p in outputs),
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_fmt) + "\n")
    return path


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _fan_out(fn, items, workers: int):
    """Map in parameter order; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- social cost vs number of providers ---------------------------------------------

@dataclass(frozen=True)
class _CostVsNTask:
    spec: DrSpec
    days: int
    seed: int

    def __call__(self, _=None):
        params, ds, d = draw_days(self.spec, self.days, self.seed)
        # the same provider draws are reused for every n (paired comparison)
        return [float(optimal_social_cost(params[:, :n], ds, d).mean())
                for n in range(1, self.spec.n + 1)]


def _run_task(task):
    return task()


def social_cost_vs_n(n_max: int = 8, seeds=range(100), days: int = 5000,
                     demand: float = 10.0, workers: int = 1) -> list[tuple]:
    """Rows ``(n, mean social cost, stderr)``; seeds are the replication unit."""
    spec = default_dr_spec(n_max, demand=demand)
    per_seed = np.array(_fan_out(_run_task, [_CostVsNTask(spec, days, s) for s in seeds],
                                 workers))
    return [(n, *_mean_se(per_seed[:, n - 1])) for n in range(1, n_max + 1)]


# -- payment sensitivity ------------------------------------------------------------

FIXED_DELTA = 4.0


def sensitivity_spec(mean: float, n: int = 4, var: float = 2.0,
                     demand: float = 10.0) -> DrSpec:
    """Provider 0 is fixed at ``delta = 4``; the others share a beta supertype."""
    grid = np.unique(np.append(np.linspace(0.1, 10.0, 16), FIXED_DELTA))
    others = default_supertype(mean=mean, var=var, grid=grid)
    fixed = Supertype.point_mass(others.types, FIXED_DELTA)
    reserve = default_supertype(grid=grid)
    return DrSpec(n, others.types, (fixed,) + (others,) * (n - 1), reserve, Demand(demand))


@dataclass(frozen=True)
class _PaymentTask:
    spec: DrSpec
    p_first: float
    expected_v0: float
    days: int
    seed: int

    def __call__(self, _=None):
        game = DrGame(self.spec)
        params, ds, d = draw_days(self.spec, self.days, self.seed)
        idx = np.searchsorted(self.spec.grid_values, params)
        o2 = game.outcomes(0, idx, np.stack([ds, d], axis=1))
        v0 = game.valuations(0, o2, idx)[:, 0]
        # provider 0 bids a point mass and always bids it: its discrepancies are 0
        paid = self.p_first + (v0 - self.expected_v0)
        return float(np.mean(-paid))


def payment_sensitivity(means=(0.5, 1.0, 2.0, 4.0), seeds=range(100), days: int = 2000,
                        n: int = 4, var: float = 2.0, demand: float = 10.0,
                        workers: int = 1) -> list[tuple]:
    """Rows ``(others' mean, average payment received by the fixed provider, stderr)``.

    The payment received is the negated total transfer, so a positive value is
    money flowing to the provider.
    """
    rows = []
    for m in means:
        spec = sensitivity_spec(m, n, var, demand)
        game = DrGame(spec)
        terms = game.expected_terms(spec.supertypes)
        p_first = mech.first_stage_payment(game, spec.supertypes, 0, terms)
        tasks = [_PaymentTask(spec, p_first, float(terms.valuations[0]), days, s) for s in seeds]
        per_seed = _fan_out(_run_task, tasks, workers)
        rows.append((float(m), *_mean_se(per_seed)))
    return rows


# -- posted price ---------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonResult:
    prices: np.ndarray
    mean_cost: np.ndarray
    stderr: np.ndarray
    mechanism_cost: float
    mechanism_stderr: float

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.mean_cost))

    @property
    def gap(self) -> float:
        return float(self.mean_cost[self.best_index] - self.mechanism_cost)


@dataclass(frozen=True)
class _SweepTask:
    spec: DrSpec
    days: int
    seed: int

    def __call__(self, _=None):
        sweep = posted_price_sweep(self.spec, self.days, self.seed)
        mech_cost, _ = mechanism_social_cost(self.spec, self.days, self.seed)
        return np.append(sweep.mean_cost, mech_cost)


def posted_price_comparison(spec: DrSpec | None = None, seeds=range(20), days: int = 5000,
                            workers: int = 1) -> ComparisonResult:
    """Posted-price cost curve and the mechanism's cost on the same draws."""
    spec = default_dr_spec(4) if spec is None else spec
    per_seed = np.array(_fan_out(_run_task, [_SweepTask(spec, days, s) for s in seeds],
                                 workers))
    means = per_seed.mean(axis=0)
    ses = per_seed.std(axis=0, ddof=1) / math.sqrt(len(per_seed)) if len(per_seed) > 1 \
        else np.zeros(per_seed.shape[1])
    return ComparisonResult(np.array(spec.price_grid), means[:-1], ses[:-1],
                            float(means[-1]), float(ses[-1]))


def degenerate_spec() -> DrSpec:
    """Point-mass providers at 4 and 2, reserve at 1, shortage 7."""
    types = TypeSpace((1.0, 2.0, 4.0))
    pm = lambda v: Supertype.point_mass(types, v)  # noqa: E731
    prices = np.arange(50) * 0.2
    return DrSpec(2, types, (pm(4.0), pm(2.0)), pm(1.0), Demand(7.0), tuple(prices))


def degenerate_gap() -> float:
    spec = degenerate_spec()
    params, ds, d = draw_days(spec, 1, 0)
    pp = min(float(posted_price_costs(params, ds, d, p)[0]) for p in spec.price_grid)
    return pp - float(optimal_social_cost(params, ds, d)[0])


# -- dispatcher --------------------------------------------------------------------------

def _param(cfg: ExperimentConfig, name, default):
    return cfg.parameters.get(name, default)


def run_experiment(cfg: ExperimentConfig, flags: dict | None = None) -> int:
    """Run one experiment, write its CSVs and manifest; returns the exit status."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs, extra, status = [], {}, 0

    if cfg.kind == "social_cost_vs_n":
        rows = social_cost_vs_n(int(_param(cfg, "n_max", 8)), cfg.seeds,
                                int(_param(cfg, "days", 5000)),
                                float(_param(cfg, "demand", 10.0)), cfg.workers)
        outputs.append(write_csv(out / "social_cost_vs_n.csv",
                                 ("n", "mean_social_cost", "stderr"), rows))

    elif cfg.kind == "payment_sensitivity":
        rows = payment_sensitivity(tuple(_param(cfg, "means", (0.5, 1.0, 2.0, 4.0))),
                                   cfg.seeds, int(_param(cfg, "days", 2000)),
                                   int(_param(cfg, "n", 4)), float(_param(cfg, "var", 2.0)),
                                   float(_param(cfg, "demand", 10.0)), cfg.workers)
        outputs.append(write_csv(out / "payment_sensitivity.csv",
                                 ("mean", "avg_payment_received", "stderr"), rows))

    elif cfg.kind == "posted_price_comparison":
        if "instance" in cfg.parameters:
            spec = DrSpec.from_dict(cfg.parameters["instance"])
        else:
            spec = default_dr_spec(int(_param(cfg, "n", 4)),
                                   demand=float(_param(cfg, "demand", 10.0)))
        res = posted_price_comparison(spec, cfg.seeds, int(_param(cfg, "days", 5000)),
                                      cfg.workers)
        outputs.append(write_csv(out / "posted_price_sweep.csv",
                                 ("price", "mean_social_cost", "stderr"),
                                 zip(res.prices, res.mean_cost, res.stderr)))
        outputs.append(write_csv(out / "mechanism_cost.csv",
                                 ("mean_social_cost", "stderr", "best_price", "gap"),
                                 [(res.mechanism_cost, res.mechanism_stderr,
                                   res.prices[res.best_index], res.gap)]))

    elif cfg.kind == "acceptance_suite":
        from .acceptance import run_acceptance
        results = run_acceptance(_param(cfg, "criteria", None))
        outputs.append(write_csv(out / "acceptance.csv",
                                 ("criterion", "name", "passed", "runtime_s", "detail"),
                                 [(r.number, r.name, int(r.passed), round(r.runtime, 3),
                                   r.detail) for r in results]))
        status = 0 if all(r.passed for r in results) else 1
        extra["all_passed"] = status == 0

    elif cfg.kind == "simulate":
        if "config" not in cfg.parameters:
            raise ConfigError("simulate needs a 'config' document")
        sim = simulation_from_document(cfg.parameters["config"],
                                       days=_param(cfg, "days", None), seed=cfg.seeds[0],
                                       gamma=_param(cfg, "gamma", None),
                                       penalty_exponent=_param(cfg, "penalty_exponent", None))
        ledger = run_simulation(sim)
        path = out / "ledger.csv"
        with open(path, "w", newline="") as fh:
            ledger.to_csv(fh)
        outputs.append(path)
        extra["simulation_hash"] = ledger.config_hash
        extra["summary"] = ledger.summary()

    write_manifest(out, cfg, outputs, flags, extra)
    return status


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def rerun_manifest(manifest_path, output_dir) -> int:
    """Repeat the run recorded in a manifest, writing fresh outputs to ``output_dir``."""
    doc = load_json(manifest_path)
    try:
        cfg = ExperimentConfig(doc["kind"], doc["parameters"], tuple(doc["seeds"]),
                               str(output_dir), int(doc.get("flags", {}).get("workers") or 1))
    except KeyError as e:
        raise ConfigError(f"{manifest_path}: missing field {e}") from None
    return run_experiment(cfg, flags=doc.get("flags"))
