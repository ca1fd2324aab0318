"""Round durations, spectrum utilization and the pipelined upload timeline.

Times are seconds measured from the start of a round, i.e. the moment the
server starts updating and broadcasting the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .clustering import ClusterPlan, TimingParams
from .errors import EmptySelection, InvalidRange, OverlapDetected


@dataclass(frozen=True)
class Window:
    cluster: int
    start: float
    end: float


@dataclass(frozen=True)
class Timeline:
    windows: tuple[Window, ...]
    round_duration: float
    rounds: int = 1

    @property
    def total(self) -> float:
        return self.rounds * self.round_duration


@dataclass(frozen=True)
class EfficiencyReport:
    epsilon_baseline: float
    epsilon_pfl: float
    gain_ratio: float


def iteration_duration(selected_taus: Sequence[float], timing: TimingParams) -> float:
    """Length of one conventional round: the slowest selected client gates the upload."""
    if len(selected_taus) == 0:
        raise EmptySelection("a round needs at least one selected client")
    return timing.tau_server + max(selected_taus) + timing.tau_com


def total_time(per_round_durations: Sequence[float]) -> float:
    return math.fsum(per_round_durations)


def pipelined_round_duration(theta: Sequence[float], timing: TimingParams) -> float:
    """Deadline-clocked round length: the last cluster's window closes the round."""
    return timing.tau_server + theta[-1] + timing.tau_com


def efficiency(K: int, timing: TimingParams, tau_max: float) -> EfficiencyReport:
    """Uplink utilization of the conventional scheme and of a ``K``-cluster pipeline.

    The pipeline round is ``delta_global`` longer than the conventional one
    but carries ``K`` upload windows instead of one.
    """
    if K < 1:
        raise InvalidRange(f"K must be >= 1, got {K}")
    if tau_max < 0:
        raise InvalidRange(f"tau_max must be >= 0, got {tau_max}")
    base_round = timing.tau_com + timing.tau_server + tau_max
    eps = timing.tau_com / base_round
    eps_pfl = K * timing.tau_com / (base_round + timing.delta_global)
    return EfficiencyReport(eps, eps_pfl, eps_pfl / eps)


def build_timeline(plan: ClusterPlan, timing: TimingParams, rounds: int = 1) -> Timeline:
    """One upload window per non-empty cluster, opening at its deadline.

    Empty clusters leave a gap where their window would have been.
    """
    if not plan.theta:
        raise InvalidRange("plan carries no deadlines; build it from profiles")
    windows = []
    for k, (size, theta) in enumerate(zip(plan.sizes, plan.theta), start=1):
        if size == 0:
            continue
        start = timing.tau_server + theta
        windows.append(Window(k, start, start + timing.tau_com))
    for prev, nxt in zip(windows, windows[1:]):
        # relative slack covers float rounding in theta_k = top - (K-k) tau_com
        if prev.end > nxt.start + 1e-12 * max(1.0, abs(nxt.start)):
            raise OverlapDetected(
                f"cluster {prev.cluster} uploads until {prev.end}s but cluster {nxt.cluster} starts at {nxt.start}s"
            )
    return Timeline(tuple(windows), pipelined_round_duration(plan.theta, timing), rounds)
