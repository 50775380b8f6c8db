"""Nguyen benchmark suite and multi-seed ablation experiments.

Benchmark targets and domains follow Uy et al., "Semantically-based
crossover in genetic programming: application to real-valued symbolic
regression" (Genetic Programming and Evolvable Machines, 2011):
20 points for the univariate problems, 100 points on U[0, 1] for the
bivariate ones. Each dataset is drawn from a fixed per-benchmark seed.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expression import Dataset, evaluate
from .library import Library
from .priors import LengthBounds, PriorConfig, SoftLengthConfig
from .trainer import RunResult, TrainConfig, derive_rng, train_loop

DATASET_SEED = 20110101
GRID_SEED = 20110102
BASE_OPERATORS = ("add", "sub", "mul", "div", "sin", "cos", "exp", "log")

# Integer constants are not in the library, so 1 is written exp(x1 - x1)
# and 1/2 as 1 / (1 + 1); recovery is numeric, so any equivalent form counts.
_ONE = ["exp", "sub", "x1", "x1"]


@dataclass(frozen=True)
class Benchmark:
    name: str
    truth_names: tuple
    operators: tuple
    n_vars: int
    low: float
    high: float
    n_train: int
    reference: Callable = field(compare=False, repr=False)
    grid_size: int = 1000

    @property
    def library(self) -> Library:
        return Library.from_names(self.operators, self.n_vars)

    @property
    def truth(self) -> list:
        return self.library.encode(self.truth_names)

    @property
    def number(self) -> int:
        return int(self.name.split("-")[1])

    def _points(self, n: int, seed: int) -> np.ndarray:
        rng = derive_rng(seed, self.number)
        return rng.uniform(self.low, self.high, size=(n, self.n_vars))

    def dataset(self) -> Dataset:
        X = self._points(self.n_train, DATASET_SEED)
        y, finite = evaluate(self.truth, X, self.library)
        assert finite.all(), self.name
        return Dataset(X, y)

    def recovery_grid(self) -> np.ndarray:
        return self._points(self.grid_size, GRID_SEED)


def _bench(number, truth, reference, n_vars=1, low=-1.0, high=1.0, n_train=20, extra=()):
    return Benchmark(f"Nguyen-{number}", tuple(truth), BASE_OPERATORS + tuple(extra),
                     n_vars, low, high, n_train, reference)


def _poly(k):
    """Prefix tokens of x + x^2 + ... + x^k, nested as x + x*(x + x*(...))."""
    expr = ["x1"]
    for _ in range(k - 1):
        expr = ["add", "x1", "mul", "x1"] + expr
    return expr


def nguyen_suite() -> list:
    """The 12 Nguyen problems with their default token libraries."""
    x, y = "x1", "x2"
    return [
        _bench(1, _poly(3), lambda X: X[:, 0] ** 3 + X[:, 0] ** 2 + X[:, 0]),
        _bench(2, _poly(4), lambda X: sum(X[:, 0] ** p for p in range(1, 5))),
        _bench(3, _poly(5), lambda X: sum(X[:, 0] ** p for p in range(1, 6))),
        _bench(4, _poly(6), lambda X: sum(X[:, 0] ** p for p in range(1, 7))),
        _bench(5, ["sub", "mul", "sin", "mul", x, x, "cos", x] + _ONE,
               lambda X: np.sin(X[:, 0] ** 2) * np.cos(X[:, 0]) - 1),
        _bench(6, ["add", "sin", x, "sin", "add", x, "mul", x, x],
               lambda X: np.sin(X[:, 0]) + np.sin(X[:, 0] + X[:, 0] ** 2)),
        _bench(7, ["add", "log", "add", x] + _ONE + ["log", "add", "mul", x, x] + _ONE,
               lambda X: np.log(X[:, 0] + 1) + np.log(X[:, 0] ** 2 + 1), low=0.0, high=2.0),
        _bench(8, ["sqrt", x], lambda X: np.sqrt(X[:, 0]), low=0.0, high=4.0, extra=("sqrt",)),
        _bench(9, ["add", "sin", x, "sin", "mul", y, y],
               lambda X: np.sin(X[:, 0]) + np.sin(X[:, 1] ** 2), n_vars=2, low=0.0, n_train=100),
        _bench(10, ["mul", "add", "sin", x, "sin", x, "cos", y],
               lambda X: 2 * np.sin(X[:, 0]) * np.cos(X[:, 1]), n_vars=2, low=0.0, n_train=100),
        _bench(11, ["exp", "mul", y, "log", x],
               lambda X: X[:, 0] ** X[:, 1], n_vars=2, low=0.0, n_train=100),
        _bench(12, ["sub", "add", "sub", "mul", "mul", x, x, "mul", x, x, "mul", "mul", x, x, x,
                    "div", "mul", y, y, "add"] + _ONE + _ONE + [y],
               lambda X: X[:, 0] ** 4 - X[:, 0] ** 3 + X[:, 1] ** 2 / 2 - X[:, 1],
               n_vars=2, low=0.0, n_train=100),
    ]


def get_benchmark(name: str) -> Benchmark:
    for b in nguyen_suite():
        if b.name == name:
            return b
    raise KeyError(name)


VARIANTS = {
    "SE": dict(entropy_mode="SE", entropy_weight=0.005, entropy_decay=1.0, slp_enabled=False),
    "HE": dict(entropy_mode="HE", entropy_weight=0.02, entropy_decay=0.85, slp_enabled=False),
    "SLP": dict(entropy_mode="SE", entropy_weight=0.005, entropy_decay=1.0, slp_enabled=True),
    "SLP+HE": dict(entropy_mode="HE", entropy_weight=0.03, entropy_decay=0.7, slp_enabled=True),
}

ENTROPY_WEIGHTS = (0.001, 0.005, 0.01, 0.02, 0.03)
ENTROPY_DECAYS = (0.7, 0.75, 0.8, 0.85, 0.9)


def variant_config(variant: str, base: TrainConfig = TrainConfig()) -> TrainConfig:
    """``base`` with the variant's entropy/SLP settings applied."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}")
    return replace(base, **VARIANTS[variant])


def hyperparameter_grid(variant: str, base: TrainConfig = TrainConfig()) -> list:
    cfg = variant_config(variant, base)
    if cfg.entropy_mode == "SE":
        return [replace(cfg, entropy_weight=w) for w in ENTROPY_WEIGHTS]
    return [replace(cfg, entropy_weight=w, entropy_decay=d)
            for w in ENTROPY_WEIGHTS for d in ENTROPY_DECAYS]


@dataclass
class RunRecord:
    benchmark: str
    variant: str
    run: int
    seed: int
    result: RunResult

    def summary(self) -> dict:
        return dict(benchmark=self.benchmark, variant=self.variant, run=self.run,
                    seed=self.seed, **self.result.summary())


@dataclass
class ExperimentResult:
    variant: str
    runs: list

    def aggregates(self) -> dict:
        return aggregate([r.summary() for r in self.runs])

    def per_benchmark(self) -> dict:
        out = {}
        for name in dict.fromkeys(r.benchmark for r in self.runs):
            out[name] = aggregate([r.summary() for r in self.runs if r.benchmark == name])
        return out


def aggregate(summaries: Sequence[dict]) -> dict:
    """Recovery rate, mean steps to solve and mean best length."""
    n = len(summaries)
    return dict(
        n_runs=n,
        recovery=sum(bool(s["recovered"]) for s in summaries) / n,
        steps=float(np.mean([s["steps_to_solve"] for s in summaries])),
        length=float(np.mean([s["best_length"] for s in summaries])),
    )


def run_single(benchmark: Benchmark, config: TrainConfig, run_index: int,
               soft_length: SoftLengthConfig = SoftLengthConfig(),
               bounds: LengthBounds = LengthBounds(), constraints=(),
               stop_on_recovery: bool = True, callback=None) -> RunResult:
    """One training run; randomness keyed by ``(seed, benchmark, run)``."""
    priors = PriorConfig(
        equal_type=True,
        soft_length=soft_length if config.slp_enabled else None,
        bounds=bounds,
        constraints=tuple(constraints),
    )
    return train_loop(config, benchmark.dataset(), benchmark.truth, benchmark.library,
                      priors=priors, grid=benchmark.recovery_grid(),
                      spawn_key=(benchmark.number, run_index),
                      stop_on_recovery=stop_on_recovery, callback=callback)


def _job(args):
    name, config, k, kwargs = args
    return run_single(get_benchmark(name), config, k, **kwargs)


def run_experiment(variant: str, benchmarks: Sequence[Benchmark], n_runs: int,
                   base_seed: int = 0, base: TrainConfig = TrainConfig(),
                   workers: int = 1, **kwargs) -> ExperimentResult:
    """Run ``n_runs`` seeds of ``variant`` on each benchmark.

    Results do not depend on ``workers``: every run derives its own streams.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    config = replace(variant_config(variant, base), seed=base_seed)
    jobs = [(b.name, config, k, kwargs) for b in benchmarks for k in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [run_single(b, config, k, **kwargs) for b in benchmarks for k in range(n_runs)]
    runs = [RunRecord(name, variant, k, base_seed, res)
            for (name, _, k, _), res in zip(jobs, results)]
    return ExperimentResult(variant, runs)


def entropy_trace(result: RunResult) -> np.ndarray:
    """``(steps, 6)`` mean entropy of positions 1..6 at each step."""
    return np.array([r.position_entropy for r in result.traces]).reshape(-1, 6)


def length_histograms(result: RunResult) -> np.ndarray:
    """``(steps, max_length + 1)`` counts of sampled lengths; row 0 is the untrained policy."""
    return np.array([r.length_hist for r in result.traces])


def trace_recorders(result: RunResult):
    return entropy_trace(result), length_histograms(result)
