"""Hyperparameter search: space sampling, asynchronous successive
halving, and sequential model-based proposals.

An objective is a callable mapping a config dict to an iterator of
per-epoch metric values (e.g. validation AUC). The tune loop advances
trials epoch by epoch on a virtual clock (one time unit per epoch),
applying successive-halving decisions at rungs grace * eta^k. With
parallelism > 1 the loop is an event-ordered simulation: decisions use
exactly the metrics recorded by earlier events in (time, sequence)
order, so the full trial table is reproducible from the seed.

The model-based proposer fits a kernel smoother (Gaussian kernel over
standardized encodings, median-distance bandwidth) and picks the
candidate maximizing expected improvement; with fewer than five
observations it falls back to random sampling.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

import numpy as np

CONTINUE = "continue"
STOP = "stop"


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # log_uniform | uniform | int_uniform | choice
    lo: float = 0.0
    hi: float = 0.0
    values: tuple = ()


def log_uniform(name: str, lo: float, hi: float) -> Param:
    if not 0 < lo < hi:
        raise ValueError("log_uniform needs 0 < lo < hi")
    return Param(name, "log_uniform", lo=lo, hi=hi)


def uniform(name: str, lo: float, hi: float) -> Param:
    if not lo < hi:
        raise ValueError("uniform needs lo < hi")
    return Param(name, "uniform", lo=lo, hi=hi)


def int_uniform(name: str, lo: int, hi: int) -> Param:
    if not lo < hi:
        raise ValueError("int_uniform needs lo < hi")
    return Param(name, "int_uniform", lo=float(lo), hi=float(hi))


def choice(name: str, values) -> Param:
    values = tuple(values)
    if not values:
        raise ValueError("choice needs at least one value")
    return Param(name, "choice", values=values)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")


def default_space() -> SearchSpace:
    """Learning rate, batch size, recurrent depth, dropout."""
    return SearchSpace(
        (
            log_uniform("learning_rate", 1e-5, 1e-1),
            choice("batch_size", (32, 64, 128, 256)),
            int_uniform("lstm_layers", 1, 4),
            uniform("dropout_rate", 0.1, 0.7),
        )
    )


def sample(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One config; log_uniform drawn as exp(U(ln lo, ln hi))."""
    config = {}
    for p in space.params:
        if p.kind == "log_uniform":
            config[p.name] = float(np.exp(rng.uniform(np.log(p.lo), np.log(p.hi))))
        elif p.kind == "uniform":
            config[p.name] = float(rng.uniform(p.lo, p.hi))
        elif p.kind == "int_uniform":
            config[p.name] = int(rng.integers(int(p.lo), int(p.hi) + 1))
        elif p.kind == "choice":
            config[p.name] = p.values[int(rng.integers(len(p.values)))]
        else:
            raise ValueError(f"unknown parameter kind {p.kind!r}")
    return config


@dataclass(frozen=True)
class SchedulerConfig:
    metric: str = "val_auc"
    mode: str = "max"
    max_t: int = 27
    grace_period: int = 1
    reduction_factor: int = 3

    def __post_init__(self):
        if self.mode not in ("max", "min"):
            raise ValueError("mode must be max or min")
        if self.grace_period < 1 or self.max_t < self.grace_period:
            raise ValueError("need 1 <= grace_period <= max_t")
        if self.reduction_factor < 2:
            raise ValueError("reduction_factor must be >= 2")


def rung_epochs(cfg: SchedulerConfig) -> list[int]:
    """Epoch counts at which stopping decisions happen: grace * eta^k."""
    rungs = []
    e = cfg.grace_period
    while e <= cfg.max_t:
        rungs.append(e)
        e *= cfg.reduction_factor
    return rungs


_STATUS_ORDER = {"running": 0, "stopped": 1, "completed": 1, "failed": 1}


@dataclass
class Trial:
    trial_id: int
    config: dict
    metrics: list[float] = field(default_factory=list)  # one per epoch
    status: str = "running"
    epochs: int = 0
    start_time: float = 0.0
    end_time: float | None = None

    def set_status(self, status: str) -> None:
        if _STATUS_ORDER[status] < _STATUS_ORDER[self.status]:
            raise ValueError(f"illegal status transition {self.status} -> {status}")
        if self.status != "running" and status != self.status:
            raise ValueError(f"illegal status transition {self.status} -> {status}")
        self.status = status

    @property
    def final_metric(self) -> float | None:
        return self.metrics[-1] if self.metrics else None

    def metric_at_epoch(self, epoch: int) -> float:
        return self.metrics[epoch - 1]


def asha_decide(
    trial: Trial,
    rung: int,
    completed_rung_metrics: list[float],
    cfg: SchedulerConfig,
) -> str:
    """Successive-halving decision for one trial at one rung.

    completed_rung_metrics holds the other trials' metrics recorded at
    this rung so far; the trial's own metric joins them, and the top
    ceil(len/eta) survive, ties kept. A trial below grace_period epochs
    always continues.
    """
    if rung < 0:
        raise ValueError("rung must be >= 0")
    if trial.epochs < cfg.grace_period:
        return CONTINUE
    epochs_at_rung = cfg.grace_period * cfg.reduction_factor**rung
    own = trial.metric_at_epoch(epochs_at_rung)
    metrics = list(completed_rung_metrics)
    metrics.append(own)
    if cfg.mode == "min":
        metrics = [-m for m in metrics]
        own = -own
    k = math.ceil(len(metrics) / cfg.reduction_factor)
    threshold = sorted(metrics, reverse=True)[k - 1]
    return CONTINUE if own >= threshold else STOP


# ---------------------------------------------------------------------------
# Model-based proposal


class Surrogate(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> None: ...

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


def encode_config(space: SearchSpace, config: dict) -> np.ndarray:
    """Deterministic numeric embedding: reals scaled to [0,1] (log scale
    for log_uniform), ints scaled, choices one-hot."""
    parts = []
    for p in space.params:
        v = config[p.name]
        if p.kind == "log_uniform":
            parts.append((np.log(v) - np.log(p.lo)) / (np.log(p.hi) - np.log(p.lo)))
        elif p.kind == "uniform":
            parts.append((v - p.lo) / (p.hi - p.lo))
        elif p.kind == "int_uniform":
            parts.append((v - p.lo) / (p.hi - p.lo))
        else:
            onehot = [1.0 if v == option else 0.0 for option in p.values]
            if sum(onehot) != 1.0:
                raise ValueError(f"value {v!r} not among choices for {p.name}")
            parts.extend(onehot)
    return np.array(parts, dtype=float)


class KernelSurrogate:
    """Nadaraya-Watson smoother with a Gaussian kernel.

    Bandwidth is the median pairwise distance of the fitted points. The
    predictive std combines the kernel-weighted residual spread with a
    prior term that grows as a query moves away from all observations.
    """

    def __init__(self, bandwidth: float | None = None):
        self.bandwidth = bandwidth

    def fit(self, X: np.ndarray, y: np.ndarray) -> None:
        self.X_ = np.asarray(X, dtype=float)
        self.y_ = np.asarray(y, dtype=float)
        if self.bandwidth is not None:
            self.h_ = self.bandwidth
        else:
            diffs = self.X_[:, None, :] - self.X_[None, :, :]
            dists = np.sqrt((diffs**2).sum(axis=2))
            upper = dists[np.triu_indices(len(self.X_), k=1)]
            positive = upper[upper > 0]
            med = float(np.median(positive)) if positive.size else 1.0
            # shrink with sample size so the smoother localizes as
            # evidence accumulates instead of averaging across slopes
            self.h_ = med * len(self.X_) ** -0.2
        self.prior_std_ = float(self.y_.std()) or 1.0

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        d2 = ((X[:, None, :] - self.X_[None, :, :]) ** 2).sum(axis=2)
        k = np.exp(-d2 / (2.0 * self.h_**2))
        w_sum = k.sum(axis=1)
        mean = (k @ self.y_) / w_sum
        resid2 = (self.y_[None, :] - mean[:, None]) ** 2
        local_var = (k * resid2).sum(axis=1) / w_sum
        nearest = k.max(axis=1)
        std = np.sqrt(local_var + (self.prior_std_**2) * (1.0 - nearest))
        return mean, std


@dataclass
class SurrogateState:
    """Observed (config, metric) pairs and acquisition settings."""

    space: SearchSpace
    mode: str = "max"
    observations: list[tuple[dict, float]] = field(default_factory=list)
    surrogate: Surrogate = field(default_factory=KernelSurrogate)
    n_candidates: int = 512
    min_observations: int = 5

    def record(self, config: dict, metric: float) -> None:
        self.observations.append((dict(config), float(metric)))


def expected_improvement(mean, std, best):
    """EI for maximization; at std=0 degenerates to max(mean-best, 0)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    improve = mean - best
    ei = np.where(improve > 0, improve, 0.0)
    positive = std > 0
    z = np.zeros_like(mean)
    z[positive] = improve[positive] / std[positive]
    phi = np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    big_phi = 0.5 * (1.0 + _erf_vec(z / np.sqrt(2)))
    ei = np.where(positive, improve * big_phi + std * phi, ei)
    return ei


def _erf_vec(x):
    return np.vectorize(math.erf)(np.asarray(x, dtype=float))


def smbo_propose(state: SurrogateState, space: SearchSpace, rng: np.random.Generator) -> dict:
    """Next config: argmax expected improvement over random candidates.

    Cold start (fewer than min_observations points) samples randomly.
    Ties in EI (including the all-zero case of a certain surrogate)
    break on the higher predicted mean, so a zero-uncertainty
    surrogate reduces to greedy mean maximization.
    """
    if len(state.observations) < state.min_observations:
        return sample(space, rng)
    sign = 1.0 if state.mode == "max" else -1.0
    X = np.array([encode_config(space, c) for c, _ in state.observations])
    y = sign * np.array([m for _, m in state.observations])
    state.surrogate.fit(X, y)
    best = float(y.max())
    candidates = [sample(space, rng) for _ in range(state.n_candidates)]
    enc = np.array([encode_config(space, c) for c in candidates])
    mean, std = state.surrogate.predict(enc)
    ei = expected_improvement(mean, std, best)
    order = np.lexsort((mean, ei))  # last key dominates
    return candidates[int(order[-1])]


# ---------------------------------------------------------------------------
# Tune loop


def tune(
    objective: Callable[[dict], Iterator[float]],
    space: SearchSpace,
    scheduler_cfg: SchedulerConfig,
    budget_trials: int = 100,
    parallelism: int = 1,
    seed: int = 0,
    proposer: str = "random",
) -> tuple[Trial, list[Trial]]:
    """Run up to budget_trials trials under successive halving.

    Returns (best trial, all trials). A trial whose objective raises is
    marked failed and the loop continues. Total epochs consumed is at
    most budget_trials * max_t.
    """
    if budget_trials < 1:
        raise ValueError("budget_trials must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if proposer not in ("random", "smbo"):
        raise ValueError(f"unknown proposer {proposer!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x705E]))
    state = SurrogateState(space, mode=scheduler_cfg.mode)
    rungs = rung_epochs(scheduler_cfg)
    rung_metrics: dict[int, list[float]] = {r: [] for r in range(len(rungs))}

    trials: list[Trial] = []
    iterators: dict[int, Iterator[float]] = {}
    heap: list[tuple[float, int, int]] = []  # (event time, seq, trial_id)
    seq = 0
    started = 0
    now = 0.0

    def propose() -> dict:
        if proposer == "smbo":
            return smbo_propose(state, space, rng)
        return sample(space, rng)

    def start_trial(at: float):
        # fills one executor slot, skipping over trials that fail at once
        nonlocal seq, started
        while started < budget_trials:
            trial = Trial(trial_id=len(trials), config=propose(), start_time=at)
            trials.append(trial)
            started += 1
            try:
                iterators[trial.trial_id] = iter(objective(trial.config))
            except Exception:
                trial.set_status("failed")
                trial.end_time = at
                continue
            heapq.heappush(heap, (at + 1.0, seq, trial.trial_id))
            seq += 1
            return

    def finish(trial: Trial, status: str, at: float):
        trial.set_status(status)
        trial.end_time = at
        iterators.pop(trial.trial_id, None)
        if trial.metrics:
            state.record(trial.config, trial.metrics[-1])

    for _ in range(min(parallelism, budget_trials)):
        start_trial(0.0)

    while heap:
        now, _, trial_id = heapq.heappop(heap)
        trial = trials[trial_id]
        try:
            metric = float(next(iterators[trial_id]))
        except StopIteration:
            finish(trial, "completed", now)
        except Exception:
            finish(trial, "failed", now)
        else:
            trial.metrics.append(metric)
            trial.epochs += 1
            decision = CONTINUE
            if trial.epochs in rungs:
                rung = rungs.index(trial.epochs)
                decision = asha_decide(trial, rung, rung_metrics[rung], scheduler_cfg)
                rung_metrics[rung].append(metric)
            if decision == STOP:
                finish(trial, "stopped", now)
            elif trial.epochs >= scheduler_cfg.max_t:
                finish(trial, "completed", now)
            else:
                heapq.heappush(heap, (now + 1.0, seq, trial_id))
                seq += 1
        if trial.status != "running" and started < budget_trials:
            start_trial(now)

    scored = [t for t in trials if t.metrics]
    if not scored:
        raise ValueError("every trial failed before producing a metric")
    sign = 1.0 if scheduler_cfg.mode == "max" else -1.0
    best = max(scored, key=lambda t: (sign * t.final_metric, -t.trial_id))
    return best, trials


def trials_to_lines(trials: list[Trial]) -> list[str]:
    """One JSON record per trial, insertion order."""
    lines = []
    for t in trials:
        lines.append(
            json.dumps(
                {
                    "trial_id": t.trial_id,
                    "config": t.config,
                    "metrics": t.metrics,
                    "status": t.status,
                    "epochs": t.epochs,
                },
                sort_keys=True,
            )
        )
    return lines


def summary_table(initial: dict, optimized: dict) -> str:
    """Three-column text table: parameter, initial value, optimized value."""
    keys = list(initial)
    rows = [("Hyperparameter", "Initial Value", "Optimized Value")]
    for key in keys:

        def fmt(v):
            return f"{v:.6g}" if isinstance(v, float) else str(v)

        rows.append((key, fmt(initial[key]), fmt(optimized.get(key, ""))))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
