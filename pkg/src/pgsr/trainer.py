"""Risk-seeking policy gradient training loop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .expression import Dataset, fast_reward, recovery_check, to_infix
from .library import Library
from .policy import PolicyParams, SampleBatch, compute_gradients, sample_batch
from .priors import LengthBounds, PriorConfig, Priors, SoftLengthConfig

N_TRACE_POSITIONS = 6
ENTROPY_MODES = ("SE", "HE")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 1000
    risk_factor: float = 0.05
    entropy_weight: float = 0.005
    entropy_decay: float = 1.0
    entropy_mode: str = "SE"
    slp_enabled: bool = False
    max_steps: int = 2000
    seed: int = 0
    hidden_size: int = 32
    # "kept": divide by the filtered count; "batch": divide by the full batch size.
    normalize: str = "kept"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0 < self.risk_factor <= 1:
            raise ValueError("risk_factor must be in (0, 1]")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if not 0 < self.entropy_decay <= 1:
            raise ValueError("entropy_decay must be in (0, 1]")
        if self.entropy_mode not in ENTROPY_MODES:
            raise ValueError(f"entropy_mode must be one of {ENTROPY_MODES}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.normalize not in ("kept", "batch"):
            raise ValueError("normalize must be 'kept' or 'batch'")


def entropy_term(entropies, decay: float = 1.0, mode: str = "SE") -> float:
    """Per-sequence entropy bonus.

    ``SE`` sums step entropies; ``HE`` weights step ``i`` by ``decay**(i-1)``.
    Accepts a :class:`~pgsr.policy.ScoredSample` or a plain sequence.
    """
    h = np.asarray(getattr(entropies, "step_entropies", entropies), dtype=np.float64)
    if mode == "SE":
        return float(np.sum(h))
    if mode == "HE":
        return float(np.sum(decay ** np.arange(h.size) * h))
    raise ValueError(f"unknown entropy mode {mode!r}")


def risk_baseline(rewards: Sequence[float], risk_factor: float):
    """Empirical ``(1 - eps)``-quantile baseline and the indices to keep.

    Keeps exactly ``ceil(eps * M)`` samples: everything strictly above the
    baseline, then ties at the baseline in batch order.
    """
    r = np.asarray(rewards, dtype=np.float64)
    M = r.size
    if M < 1:
        raise ValueError("need at least one reward")
    if not 0 < risk_factor <= 1:
        raise ValueError("risk_factor must be in (0, 1]")
    # Guard against eps * M landing a hair above an integer.
    k = min(M, max(1, math.ceil(round(risk_factor * M, 9))))
    order = np.argsort(-r, kind="stable")
    b = float(r[order[k - 1]])
    return b, np.sort(order[:k])


class Adam:
    """Adam on a flat parameter vector, ascending the objective."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepReport:
    step: int
    best_reward: float
    baseline: float
    position_entropy: list
    length_hist: list
    n_kept: int
    best_expression: Optional[str]
    batch_best_reward: float
    batch_best_expression: str
    recovered: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    recovered: bool
    steps_to_solve: int
    best_expression: Optional[str]
    best_tokens: Optional[list]
    best_length: int
    best_reward: float
    traces: list = field(default_factory=list)
    params: Optional[PolicyParams] = field(default=None, repr=False)

    def summary(self) -> dict:
        return {f: getattr(self, f) for f in
                ("recovered", "steps_to_solve", "best_expression", "best_tokens",
                 "best_length", "best_reward")}


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)`` via SeedSequence spawn keys."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def default_grid(X: np.ndarray, n: int = 1000, seed: int = 0) -> np.ndarray:
    """Uniform points over the bounding box of ``X``."""
    rng = np.random.default_rng(seed)
    lo, hi = X.min(axis=0), X.max(axis=0)
    return rng.uniform(lo, hi, size=(n, X.shape[1]))


def prior_config(config: TrainConfig, soft_length: Optional[SoftLengthConfig] = None,
                 bounds: Optional[LengthBounds] = LengthBounds(), constraints=()) -> PriorConfig:
    return PriorConfig(
        equal_type=True,
        soft_length=(soft_length or SoftLengthConfig()) if config.slp_enabled else None,
        bounds=bounds,
        constraints=tuple(constraints),
    )


class PolicyGradientSearch:
    """Owns the policy, optimizer state and reward cache for one run.

    Seeds: the policy is initialized from ``(seed, *spawn_key, 0)`` and step
    ``k`` samples from ``(seed, *spawn_key, k)``, so any step is reproducible
    from the run's inputs alone.
    """

    def __init__(self, lib: Library, dataset: Dataset, config: TrainConfig = TrainConfig(),
                 priors: Optional[PriorConfig] = None, truth: Optional[Sequence[int]] = None,
                 grid: Optional[np.ndarray] = None, spawn_key: tuple = (),
                 params: Optional[PolicyParams] = None):
        self.lib = lib
        self.dataset = dataset
        self.config = config
        self.prior_config = priors if priors is not None else prior_config(config)
        self.priors = Priors(lib, self.prior_config)
        self.truth = list(truth) if truth is not None else None
        if self.truth is not None and grid is None:
            grid = default_grid(dataset.X)
        self.grid = grid
        self.spawn_key = tuple(spawn_key)
        if params is None:
            params = PolicyParams.initialize(len(lib), config.hidden_size,
                                             derive_rng(config.seed, *self.spawn_key, 0))
        self.params = params
        self.optimizer = Adam(params.size, config.learning_rate)
        self.step_count = 0
        self.best_reward = -np.inf
        self.best_tokens: Optional[list] = None
        self._cache: dict = {}

    def rewards(self, batch: SampleBatch) -> np.ndarray:
        out = np.empty(len(batch))
        for j in range(len(batch)):
            key = tuple(batch.tokens[j, :batch.lengths[j]].tolist())
            r = self._cache.get(key)
            if r is None:
                r = fast_reward(key, self.dataset, self.lib)
                if len(self._cache) > 500_000:
                    self._cache.clear()
                self._cache[key] = r
            out[j] = r
        return out

    def step(self) -> StepReport:
        """Sample, score, filter, and apply one Adam update."""
        cfg = self.config
        self.step_count += 1
        rng = derive_rng(cfg.seed, *self.spawn_key, self.step_count)
        batch = sample_batch(self.params, self.priors, cfg.batch_size, rng)
        batch.rewards = self.rewards(batch)

        b, keep = risk_baseline(batch.rewards, cfg.risk_factor)
        kept = batch.subset(keep)
        norm = len(keep) if cfg.normalize == "kept" else len(batch)
        grad = compute_gradients(self.params, self.priors, kept, b, cfg.entropy_weight,
                                 cfg.entropy_decay, cfg.entropy_mode, normalizer=norm)
        theta = self.optimizer.step(self.params.flat(), grad)
        self.params = PolicyParams.from_flat(theta, len(self.lib), cfg.hidden_size)

        j = int(np.argmax(batch.rewards))
        top = batch.sequence(j)
        if batch.rewards[j] > self.best_reward:
            self.best_reward = float(batch.rewards[j])
            self.best_tokens = top
        recovered = False
        if self.truth is not None:
            recovered = recovery_check(top, self.truth, self.lib, self.grid)
        return StepReport(
            step=self.step_count,
            best_reward=self.best_reward,
            baseline=b,
            position_entropy=position_entropies(batch),
            length_hist=np.bincount(batch.lengths, minlength=self.priors.max_length + 1).tolist(),
            n_kept=len(keep),
            best_expression=to_infix(self.best_tokens, self.lib),
            batch_best_reward=float(batch.rewards[j]),
            batch_best_expression=to_infix(top, self.lib),
            recovered=recovered,
        )

    def run(self, max_steps: Optional[int] = None, stop_on_recovery: bool = True,
            callback: Optional[Callable[[StepReport], None]] = None) -> RunResult:
        max_steps = self.config.max_steps if max_steps is None else max_steps
        traces = []
        solved_at = None
        for _ in range(max_steps):
            report = self.step()
            traces.append(report)
            if callback is not None:
                callback(report)
            if report.recovered and solved_at is None:
                solved_at = report.step
                if stop_on_recovery:
                    break
        best = self.best_tokens
        return RunResult(
            recovered=solved_at is not None,
            steps_to_solve=solved_at if solved_at is not None else max_steps,
            best_expression=to_infix(best, self.lib) if best else None,
            best_tokens=self.lib.decode(best) if best else None,
            best_length=len(best) if best else 0,
            best_reward=float(self.best_reward) if best else 0.0,
            traces=traces,
            params=self.params,
        )


def position_entropies(batch: SampleBatch, n_positions: int = N_TRACE_POSITIONS) -> list:
    """Mean step entropy at positions 1..n over samples that reach them."""
    out = []
    for t in range(n_positions):
        reach = batch.lengths > t
        out.append(float(batch.entropies[reach, t].mean()) if reach.any() else float("nan"))
    return out


def train_step(search: PolicyGradientSearch):
    """One update; returns ``(params, report)``."""
    report = search.step()
    return search.params, report


def train_loop(config: TrainConfig, dataset: Dataset, truth: Optional[Sequence[int]],
               lib: Library, priors: Optional[PriorConfig] = None, grid=None,
               spawn_key: tuple = (), stop_on_recovery: bool = True, callback=None) -> RunResult:
    search = PolicyGradientSearch(lib, dataset, config, priors, truth, grid, spawn_key)
    return search.run(stop_on_recovery=stop_on_recovery, callback=callback)
