"""Monte Carlo accuracy, power and type-I studies on planted partition SBMs.

Scenarios are given by node count, block count, out-in ratio and expected
average degree. Every trial draws its graph and its estimator seed from a
seed sequence keyed by ``(master_seed, trial)``, so trials can run in any
order or in parallel and still aggregate to the same table.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .graph import AdjacencyMatrix, BlockModel, sample_sbm
from .smt import SmtConfig, estimate_k, evaluate_candidate, _decide

DEFAULT_TRIALS = 50
POWER_REGIMES = {
    # degree as a function of N for the two regimes of the power/type-I tables
    "n23": ("ceil(N^(2/3))", lambda n: math.ceil(n ** (2.0 / 3.0))),
    "n13": ("ceil(3 N^(1/3))", lambda n: math.ceil(3.0 * n ** (1.0 / 3.0))),
}


class InfeasibleScenario(ValueError):
    pass


def planted_params(n: int, k: int, r: float, d: float):
    """Within and between block edge probabilities for a planted partition.

    ``p_in`` solves ``d = p_in (n/k - 1) + p_in r n (k - 1) / k`` so that the
    expected average degree is ``d``; ``p_out = r p_in``.
    """
    if n <= 0 or k <= 0:
        raise InfeasibleScenario("n and k must be positive")
    if d < 0:
        raise InfeasibleScenario("degree must be non-negative")
    if not 0.0 <= r < 1.0:
        raise InfeasibleScenario(f"out-in ratio {r} outside [0, 1)")
    denom = (n / k - 1.0) + r * n * (k - 1) / k
    if denom <= 0:
        raise InfeasibleScenario("blocks too small for any edges")
    p_in = d / denom
    if p_in > 1.0:
        raise InfeasibleScenario(f"infeasible degree {d}: within-block probability {p_in:.4g} > 1")
    return p_in, r * p_in


@dataclass(frozen=True)
class Scenario:
    n: int
    k_true: int
    out_in_ratio: float
    degree: float
    trials: int = DEFAULT_TRIALS
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        planted_params(self.n, self.k_true, self.out_in_ratio, self.degree)

    @property
    def p_in(self) -> float:
        return planted_params(self.n, self.k_true, self.out_in_ratio, self.degree)[0]

    @property
    def p_out(self) -> float:
        return planted_params(self.n, self.k_true, self.out_in_ratio, self.degree)[1]

    def model(self) -> BlockModel:
        p_in, p_out = planted_params(self.n, self.k_true, self.out_in_ratio, self.degree)
        return BlockModel.planted(self.n, self.k_true, p_in, p_out)


def trial_seeds(master_seed: int, trial: int):
    """``(graph_seed, estimator_seed)`` for one trial."""
    graph = np.random.SeedSequence([int(master_seed), int(trial), 0])
    est = int(np.random.SeedSequence([int(master_seed), int(trial), 1]).generate_state(1)[0])
    return graph, est


class Estimator(Protocol):
    name: str

    def __call__(self, a: AdjacencyMatrix, seed: int) -> Optional[int]: ...


class SmtEstimator:
    """Adapter exposing :func:`smtnet.smt.estimate_k` as an estimator.

    ``max_k`` defaults to ``None``, meaning ``min(n // 3, k_hint + 5)`` when
    the harness passes a hint and ``min(n // 3, 20)`` otherwise.
    """

    name = "SMT"

    def __init__(self, alpha: float = 0.05, max_k: Optional[int] = None, **options):
        SmtConfig(alpha=alpha, **options)
        self.alpha = alpha
        self.max_k = max_k
        self.options = options

    def __call__(self, a, seed, k_hint=None):
        if self.max_k is not None:
            max_k = self.max_k
        elif k_hint is not None:
            max_k = k_hint + 5
        else:
            max_k = 20
        max_k = max(1, min(max_k, a.n // 3))
        cfg = SmtConfig(alpha=self.alpha, max_k=max_k, seed=seed, **self.options)
        return estimate_k(a, cfg).k_hat

    def describe(self) -> dict:
        return {"name": self.name, "alpha": self.alpha, "max_k": self.max_k, **self.options}


@dataclass
class ScenarioOutcome:
    scenario: Scenario
    estimator: str
    k_hats: list
    times_ms: list
    errors: dict = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return self.scenario.trials

    @property
    def accuracy(self) -> float:
        return sum(1 for k in self.k_hats if k == self.scenario.k_true) / self.n_trials

    @property
    def underest(self) -> int:
        return sum(1 for k in self.k_hats if k is not None and k < self.scenario.k_true)

    @property
    def overest(self) -> int:
        # no acceptance up to max_k counts as over-estimation
        return sum(
            1
            for t, k in enumerate(self.k_hats)
            if t not in self.errors and (k is None or k > self.scenario.k_true)
        )

    @property
    def n_failed(self) -> int:
        return len(self.errors)

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.times_ms)) if self.times_ms else float("nan")

    def row(self, timing: bool = True) -> dict:
        out = {
            "N": self.scenario.n,
            "K": self.scenario.k_true,
            "out_in_ratio": self.scenario.out_in_ratio,
            "degree": self.scenario.degree,
            "estimator": self.estimator,
            "accuracy": round(self.accuracy, 6),
            "n_trials": self.n_trials,
            "underest": self.underest,
            "overest": self.overest,
        }
        if timing:
            out["mean_ms"] = round(self.mean_ms, 3)
        return out

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "scenario": asdict(self.scenario),
            "p_in": self.scenario.p_in,
            "p_out": self.scenario.p_out,
            **self.row(timing),
            "n_failed": self.n_failed,
            "k_hats": self.k_hats,
            "errors": {str(k): v for k, v in self.errors.items()},
        }
        if timing:
            out["times_ms"] = self.times_ms
        return out


def _run_trial(args):
    scenario, estimator, t = args
    gseed, eseed = trial_seeds(scenario.seed, t)
    a = sample_sbm(scenario.model(), gseed)
    start = time.perf_counter()
    try:
        try:
            k = estimator(a, eseed, k_hint=scenario.k_true)
        except TypeError:
            k = estimator(a, eseed)
        err = None
    except Exception as exc:  # recorded per trial, never fatal
        k, err = None, f"{type(exc).__name__}: {exc}"
    ms = 1000.0 * (time.perf_counter() - start)
    return t, k, ms, err


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_scenario(s: Scenario, estimator: Optional[Callable] = None, workers: int = 1) -> ScenarioOutcome:
    """Run ``s.trials`` independent trials of ``estimator`` (SMT by default)."""
    estimator = estimator if estimator is not None else SmtEstimator()
    results = _map(_run_trial, [(s, estimator, t) for t in range(s.trials)], workers)
    results.sort(key=lambda r: r[0])
    k_hats = [r[1] for r in results]
    times = [r[2] for r in results]
    errors = {r[0]: r[3] for r in results if r[3] is not None}
    name = getattr(estimator, "name", type(estimator).__name__)
    return ScenarioOutcome(s, name, k_hats, times, errors)


def expand_grid(spec: dict) -> list[Scenario]:
    """Cartesian product over any list-valued Scenario fields."""
    keys = ["n", "k_true", "out_in_ratio", "degree", "trials", "seed"]
    unknown = set(spec) - set(keys)
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    axes = [spec[k] if isinstance(spec.get(k), list) else [spec[k]] for k in keys if k in spec]
    present = [k for k in keys if k in spec]
    out = []
    for combo in itertools.product(*axes):
        out.append(Scenario(**dict(zip(present, combo))))
    return out


# -- power and type-I ----------------------------------------------------------------

@dataclass(frozen=True)
class PowerScenario:
    n: int
    k_true: int
    regime: str = "n23"
    trials: int = DEFAULT_TRIALS
    seed: int = 0

    def __post_init__(self):
        if self.regime not in POWER_REGIMES:
            raise ValueError(f"regime must be one of {sorted(POWER_REGIMES)}, got {self.regime!r}")

    @property
    def degree(self) -> int:
        return POWER_REGIMES[self.regime][1](self.n)

    def scenario(self) -> Scenario:
        return Scenario(self.n, self.k_true, 0.0, self.degree, self.trials, self.seed)


def _power_trial(args):
    ps, cfg_kwargs, t, check_power = args
    s = ps.scenario()
    gseed, eseed = trial_seeds(s.seed, t)
    a = sample_sbm(s.model(), gseed)
    cfg = SmtConfig(max_k=s.k_true, seed=eseed, **cfg_kwargs)
    ks = range(1, s.k_true + 1) if check_power else [s.k_true]
    out = {}
    for k in ks:
        records, *_ = evaluate_candidate(a, k, cfg)
        _, _, accepted = _decide(records, k, cfg.alpha)
        out[k] = not accepted
    return t, out


def power_type1_study(grid, alpha: float = 0.05, workers: int = 1, check_power: bool = True, **smt_options) -> list[dict]:
    """Rejection rates of the candidate test below and at the true ``K``.

    ``power`` is the fraction of trials in which every under-fitted
    candidate ``k < K`` is rejected, which is what the sequential procedure
    needs to reach ``K``. ``power_at_k`` lists the rejection rate for each
    ``k < K`` separately. ``type1`` is the rejection rate at ``k = K``.
    """
    cfg_kwargs = {"alpha": alpha, **smt_options}
    rows = []
    for ps in grid:
        if not isinstance(ps, PowerScenario):
            ps = PowerScenario(**ps)
        res = _map(_power_trial, [(ps, cfg_kwargs, t, check_power) for t in range(ps.trials)], workers)
        res.sort(key=lambda r: r[0])
        k = ps.k_true
        type1 = float(np.mean([r[1][k] for r in res]))
        row = {
            "N": ps.n,
            "K": k,
            "regime": ps.regime,
            "degree_rule": POWER_REGIMES[ps.regime][0],
            "degree": ps.degree,
            "alpha": alpha,
            "n_trials": ps.trials,
            "type1": type1,
        }
        if check_power and k > 1:
            row["power"] = float(np.mean([all(r[1][j] for j in range(1, k)) for r in res]))
            row["power_at_k"] = {j: float(np.mean([r[1][j] for r in res])) for j in range(1, k)}
        else:
            row["power"] = None
        rows.append(row)
    return rows


# -- output --------------------------------------------------------------------------

ACCURACY_COLUMNS = ["N", "K", "out_in_ratio", "degree", "estimator", "accuracy", "n_trials", "underest", "overest", "mean_ms"]


def write_accuracy_csv(outcomes, path, timing: bool = True) -> None:
    cols = ACCURACY_COLUMNS if timing else ACCURACY_COLUMNS[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for o in outcomes:
            w.writerow(o.row(timing))


def write_accuracy_json(outcomes, path, metadata=None, timing: bool = True) -> None:
    doc = {"metadata": metadata or {}, "outcomes": [o.to_dict(timing) for o in outcomes]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def write_power_csv(rows, path) -> None:
    cols = ["N", "K", "regime", "degree_rule", "degree", "alpha", "n_trials", "power", "type1"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def run_metadata(estimator=None, trials_default=DEFAULT_TRIALS) -> dict:
    from . import __version__
    from ._accel import backend

    meta = {
        "smtnet_version": __version__,
        "kernel_backend": backend(),
        "default_trials": trials_default,
        "power_degree_rules": {k: v[0] for k, v in POWER_REGIMES.items()},
        "seed_derivation": "SeedSequence([master_seed, trial, 0]) for graphs, [master_seed, trial, 1] for the estimator",
        "no_acceptance_counts_as": "overest",
    }
    if estimator is not None and hasattr(estimator, "describe"):
        meta["estimator"] = estimator.describe()
    return meta
