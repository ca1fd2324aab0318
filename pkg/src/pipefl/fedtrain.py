"""Clustered-scheduling gradient descent and the conventional baseline.

Each round the server samples clients, every sampled client computes one
full-batch gradient on its shard, and the server applies the
sample-count-weighted average. The clustered variant samples ``N`` clients
from every cluster and is clocked by the last cluster's deadline; the
baseline samples ``N`` clients from the whole population.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .clustering import ClusterPlan, TimingParams
from .data import FederatedDataset, Shard
from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptyAggregation,
    EmptyEvalSet,
    EmptyShard,
    InvalidRange,
    NonPositiveLearningRate,
)
from .models import Model
from .profiles import OrderedProfiles
from .rng import INIT, SAMPLING, stream
from .timing import iteration_duration, pipelined_round_duration

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6

Schedule = Union[float, Callable[[int], float]]


@dataclass(frozen=True)
class GradientMsg:
    client_id: int
    g: np.ndarray
    n_m: int


@dataclass(frozen=True)
class Target:
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.metric not in ("accuracy", "loss"):
            raise InvalidRange(f"target metric must be 'accuracy' or 'loss', got {self.metric!r}")

    def reached(self, loss: float, accuracy: float | None) -> bool:
        if self.metric == "loss":
            return loss <= self.value
        return accuracy is not None and accuracy >= self.value


@dataclass(frozen=True)
class TrainConfig:
    T: int
    eta: Schedule
    N: int
    seed: int = 0
    target: Target | None = None

    def __post_init__(self) -> None:
        if self.T < 1:
            raise InvalidRange(f"T must be >= 1, got {self.T}")
        if self.N < 1:
            raise InvalidRange(f"N must be >= 1, got {self.N}")

    def eta_at(self, t: int) -> float:
        return float(self.eta(t)) if callable(self.eta) else float(self.eta)


@dataclass(frozen=True)
class RoundRecord:
    t: int
    selected: tuple[tuple[int, ...], ...]
    loss: float
    accuracy: float | None
    sim_seconds: float

    @property
    def clients(self) -> int:
        return sum(len(s) for s in self.selected)


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float | None


def local_gradient(model: Model, w: np.ndarray, shard: Shard) -> GradientMsg:
    if shard.n == 0:
        raise EmptyShard(f"client {shard.client_id} has no samples")
    if w.shape != (model.dim,):
        raise DimensionMismatch(f"weights have shape {w.shape}, model expects ({model.dim},)")
    if shard.X.shape[1] != model.feature_dim:
        raise DimensionMismatch(
            f"client {shard.client_id} features have dim {shard.X.shape[1]}, model expects {model.feature_dim}"
        )
    return GradientMsg(shard.client_id, model.grad(w, shard.X, shard.y), shard.n)


def aggregate(msgs: Iterable[GradientMsg]) -> np.ndarray:
    """Sample-count-weighted mean of client gradients.

    Summation runs in ascending ``client_id`` order, so the result does not
    depend on arrival order.
    """
    ordered = sorted(msgs, key=lambda m: m.client_id)
    if not ordered:
        raise EmptyAggregation("no gradients to aggregate")
    shape = ordered[0].g.shape
    total = np.zeros(shape)
    weight = 0
    for m in ordered:
        if m.g.shape != shape:
            raise DimensionMismatch(f"client {m.client_id} sent shape {m.g.shape}, expected {shape}")
        total += m.n_m * m.g
        weight += m.n_m
    return total / weight


def global_update(w: np.ndarray, g: np.ndarray, eta_t: float) -> np.ndarray:
    if not eta_t > 0:
        raise NonPositiveLearningRate(f"learning rate must be > 0, got {eta_t}")
    if w.shape != g.shape:
        raise DimensionMismatch(f"weights {w.shape} vs gradient {g.shape}")
    return w - eta_t * g


def sample_round(
    clusters: Sequence[Sequence[int]], N: int, rng: np.random.Generator
) -> tuple[tuple[int, ...], ...]:
    """Draw ``min(N, |C_k|)`` members uniformly without replacement from each cluster.

    ``clusters`` is a plan's member lists; empty clusters yield empty selections.
    """
    picked = []
    for k, members in enumerate(clusters, start=1):
        if len(members) == 0:
            picked.append(())
            continue
        if len(members) < N:
            logger.warning("cluster %d has %d members, fewer than N=%d; selecting all", k, len(members), N)
        chosen = rng.choice(np.asarray(members), size=min(N, len(members)), replace=False)
        picked.append(tuple(sorted(int(c) for c in chosen)))
    return tuple(picked)


def evaluate(model: Model, w: np.ndarray, eval_set) -> EvalResult:
    """Global objective and accuracy.

    ``eval_set`` is a :class:`FederatedDataset` (loss weighted by client
    sample counts, i.e. the pooled mean) or an ``(X, y)`` pair.
    """
    if isinstance(eval_set, FederatedDataset):
        if eval_set.n == 0:
            raise EmptyEvalSet("dataset has no samples")
        loss = math.fsum(s.n * model.loss(w, s.X, s.y) for s in eval_set.shards) / eval_set.n
        X, y = eval_set.pooled()
        return EvalResult(loss, model.accuracy(w, X, y))
    X, y = eval_set
    if len(y) == 0:
        raise EmptyEvalSet("evaluation set has no samples")
    return EvalResult(model.loss(w, X, y), model.accuracy(w, X, y))


def _train(
    model: Model,
    data: FederatedDataset,
    clusters: Sequence[Sequence[int]],
    round_seconds: Callable[[tuple[tuple[int, ...], ...]], float],
    cfg: TrainConfig,
    w0: np.ndarray | None,
) -> list[RoundRecord]:
    shards = {s.client_id: s for s in data.shards}
    missing = {c for members in clusters for c in members} - shards.keys()
    if missing:
        raise InvalidRange(f"plan references clients without data: {sorted(missing)[:5]}")
    w = model.init(stream(cfg.seed, INIT)) if w0 is None else np.array(w0, dtype=float)
    sampler = stream(cfg.seed, SAMPLING)

    def score(w: np.ndarray) -> EvalResult:
        train = evaluate(model, w, data)
        if data.test is None:
            return train
        return EvalResult(train.loss, model.accuracy(w, *data.test))

    initial = score(w).loss
    limit = DIVERGENCE_FACTOR * max(initial, 1e-12)
    records: list[RoundRecord] = []
    clock = 0.0
    for t in range(1, cfg.T + 1):
        selected = sample_round(clusters, cfg.N, sampler)
        msgs = [local_gradient(model, w, shards[c]) for group in selected for c in group]
        w = global_update(w, aggregate(msgs), cfg.eta_at(t))
        result = score(w)
        if not math.isfinite(result.loss) or result.loss > limit:
            raise DivergenceDetected(f"round {t}: loss {result.loss} exceeds {limit:g}")
        clock += round_seconds(selected)
        records.append(RoundRecord(t, selected, result.loss, result.accuracy, clock))
        if cfg.target is not None and cfg.target.reached(result.loss, result.accuracy):
            break
    return records


def run_cs_gd(
    model: Model,
    data: FederatedDataset,
    plan: ClusterPlan,
    timing: TimingParams,
    cfg: TrainConfig,
    w0: np.ndarray | None = None,
) -> list[RoundRecord]:
    if plan.members is None:
        raise InvalidRange("plan has no member lists; build it from client profiles")
    duration = pipelined_round_duration(plan.theta, timing)
    return _train(model, data, plan.members, lambda _sel: duration, cfg, w0)


def run_baseline(
    model: Model,
    data: FederatedDataset,
    profiles: OrderedProfiles,
    timing: TimingParams,
    cfg: TrainConfig,
    w0: np.ndarray | None = None,
    clock: str = "realized",
) -> list[RoundRecord]:
    """Conventional scheme: ``N`` clients drawn from everyone each round.

    ``clock="realized"`` charges each round the slowest selected client's
    time; ``clock="deadline"`` charges the fixed worst case
    ``tau_max + delta_global``, matching a one-cluster pipeline.
    """
    everyone = [tuple(sorted(p.client_id for p in profiles.profiles))]
    if clock == "realized":
        tau = {p.client_id: p.tau_m for p in profiles.profiles}

        def seconds(sel):
            return iteration_duration([tau[c] for c in sel[0]], timing)

    elif clock == "deadline":
        fixed = pipelined_round_duration([profiles.tau_max + timing.delta_global], timing)

        def seconds(_sel):
            return fixed

    else:
        raise InvalidRange(f"clock must be 'realized' or 'deadline', got {clock!r}")
    return _train(model, data, everyone, seconds, cfg, w0)


def rounds_to_target(records: Sequence[RoundRecord], target: Target) -> int | None:
    for r in records:
        if target.reached(r.loss, r.accuracy):
            return r.t
    return None


def pooled_gd(model: Model, data: FederatedDataset, eta: float, T: int, seed: int = 0) -> tuple[np.ndarray, EvalResult]:
    """Centralised full-batch gradient descent on all client data.

    Serves as the reference that target accuracies are defined against.
    Accuracy is measured on the test split when the dataset has one.
    """
    X, y = data.pooled()
    w = model.init(stream(seed, INIT))
    for _ in range(T):
        w = global_update(w, model.grad(w, X, y), eta)
    acc_set = data.test if data.test is not None else (X, y)
    return w, EvalResult(model.loss(w, X, y), model.accuracy(w, *acc_set))
