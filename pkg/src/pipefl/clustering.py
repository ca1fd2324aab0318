"""Optimal computation-time clustering of clients.

Clients sorted by computation time are cut into ``K`` contiguous clusters.
Cluster ``k`` uploads at deadline ``theta_k``; deadlines are spaced one
communication slot apart and end at ``tau_max + delta_global``. The count
threshold ``pi_k`` is the number of clients fast enough for ``theta_k``.

Cluster sizes are chosen to be as equal as possible::

    min  sum_k (delta_k - M/K)^2
    s.t. delta_1 + ... + delta_k <= pi_k   (k < K)
         delta_1 + ... + delta_K  = M

The relaxed (real-valued) problem is solved exactly by walking the lower
convex hull of the points ``(k, pi_k)`` with ``pi_0 = 0`` and ``pi_K = M``
(:func:`solve_relaxed`). :func:`brute_force_solve` enumerates every
active-set hypothesis and serves as an independent oracle.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DeadlineViolation,
    InvalidRange,
    KTooLarge,
    KTooLargeForEnumeration,
    NoOptimalHypothesis,
    NonMonotoneBoundaries,
)
from .profiles import OrderedProfiles

logger = logging.getLogger(__name__)

TOL = 1e-9
MAX_ENUMERATION_K = 24
# absorbs binary representation error in ratios such as 0.6 / 0.2
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class TimingParams:
    tau_com: float
    tau_server: float = 0.0
    delta_global: float = 0.0

    def __post_init__(self) -> None:
        if not self.tau_com > 0:
            raise InvalidRange(f"tau_com must be > 0, got {self.tau_com}")
        if self.tau_server < 0:
            raise InvalidRange(f"tau_server must be >= 0, got {self.tau_server}")
        if self.delta_global < 0:
            raise InvalidRange(f"delta_global must be >= 0, got {self.delta_global}")


@dataclass(frozen=True)
class Thresholds:
    """Cluster deadlines and prefix caps for ``M`` clients in ``K`` clusters.

    ``pi`` holds the ``K - 1`` inequality thresholds. ``theta`` may be empty
    when thresholds were supplied directly rather than derived from profiles.
    """

    K: int
    M: int
    pi: tuple[int, ...]
    theta: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.K < 1:
            raise InvalidRange(f"K must be >= 1, got {self.K}")
        if self.M < 1:
            raise InvalidRange(f"M must be >= 1, got {self.M}")
        if len(self.pi) != self.K - 1:
            raise InvalidRange(f"expected {self.K - 1} thresholds, got {len(self.pi)}")
        if self.theta and len(self.theta) != self.K:
            raise InvalidRange(f"expected {self.K} deadlines, got {len(self.theta)}")
        full = self.full_pi
        if any(b < a for a, b in zip(full, full[1:])):
            raise InvalidRange(f"thresholds must be non-decreasing within [0, M]: {full}")

    @classmethod
    def from_pi(cls, pi: Sequence[int], M: int) -> "Thresholds":
        return cls(K=len(pi) + 1, M=M, pi=tuple(int(p) for p in pi))

    @property
    def full_pi(self) -> tuple[int, ...]:
        """``(pi_0, ..., pi_K)`` with ``pi_0 = 0`` and ``pi_K = M``."""
        return (0, *self.pi, self.M)

    def points(self) -> list[tuple[int, int]]:
        return list(enumerate(self.full_pi))


@dataclass(frozen=True)
class RelaxedSolution:
    delta: tuple[float, ...]
    objective: float
    active: tuple[bool, ...] = ()

    def prefix_sums(self) -> list[float]:
        # Neumaier compensated running sum: one pass, error of about one ulp
        out: list[float] = []
        total = comp = 0.0
        for d in self.delta:
            t = total + d
            if abs(total) >= abs(d):
                comp += (total - t) + d
            else:
                comp += (d - t) + total
            total = t
            out.append(total + comp)
        return out


@dataclass(frozen=True)
class KktCertificate:
    lam: tuple[float, ...]
    nu: float
    active: tuple[bool, ...]
    complementary_slackness_residual: float


class Verdict(enum.Enum):
    CONTRADICTING = "contradicting"
    SUBOPTIMAL = "suboptimal"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class ClusterPlan:
    """Integer cluster boundaries and the resulting member sets.

    ``omega[k-1]`` is the largest rank in cluster ``k``; ``members`` lists the
    client ids of each cluster in ascending id order (``None`` when the plan was
    built from bare thresholds without profiles).
    """

    omega: tuple[int, ...]
    theta: tuple[float, ...]
    pi: tuple[int, ...]
    objective_integer: float
    members: tuple[tuple[int, ...], ...] | None = None
    relaxed: RelaxedSolution | None = field(default=None, compare=False)

    @property
    def K(self) -> int:
        return len(self.omega)

    @property
    def M(self) -> int:
        return self.omega[-1] if self.omega else 0

    @property
    def sizes(self) -> tuple[int, ...]:
        prev = (0, *self.omega[:-1])
        return tuple(b - a for a, b in zip(prev, self.omega))


@dataclass
class PlanReport:
    warnings: list[str] = field(default_factory=list)


def _floor(x: float) -> int:
    return math.floor(x + _FLOOR_SLACK)


def cluster_count_bound(profiles: OrderedProfiles, timing: TimingParams) -> int:
    """Largest admissible K: the fastest client must still meet the first deadline."""
    spread = profiles.tau_max - profiles.tau_min
    return _floor((spread + timing.tau_com + timing.delta_global) / timing.tau_com)


def choose_cluster_count(profiles: OrderedProfiles, timing: TimingParams) -> int:
    """Practical cluster count, one below the bound; never less than 1."""
    spread = profiles.tau_max - profiles.tau_min
    return max(1, _floor((spread + timing.delta_global) / timing.tau_com))


def compute_thresholds(profiles: OrderedProfiles, timing: TimingParams, K: int) -> Thresholds:
    if K < 1:
        raise InvalidRange(f"K must be >= 1, got {K}")
    bound = cluster_count_bound(profiles, timing)
    if K > bound:
        raise KTooLarge(f"K={K} exceeds the admissible maximum {bound} for these profiles")
    top = profiles.tau_max + timing.delta_global
    theta = tuple(top - (K - k) * timing.tau_com for k in range(1, K + 1))
    pi = tuple(profiles.count_within(t) for t in theta[:-1])
    return Thresholds(K=K, M=profiles.M, pi=pi, theta=theta)


def _objective(values: Sequence[float], M: int, K: int) -> float:
    mean = M / K
    return math.fsum((v - mean) ** 2 for v in values)


def solve_hypothesis(h: Sequence[bool], thresholds: Thresholds) -> RelaxedSolution:
    """Closed-form solution of the KKT system under active-set guess ``h``.

    ``h[k-1]`` marks constraint ``k`` as binding; the last entry stands for the
    equality constraint and must be set. Between consecutive binding indices
    ``a < b`` every cluster gets ``(pi_b - pi_a) / (b - a)``.
    """
    K = thresholds.K
    if len(h) != K:
        raise InvalidRange(f"hypothesis must have {K} entries, got {len(h)}")
    if not h[-1]:
        raise InvalidRange("last hypothesis entry (equality constraint) must be active")
    full = thresholds.full_pi
    delta: list[float] = []
    a = 0
    for b in (k for k in range(1, K + 1) if h[k - 1]):
        value = (full[b] - full[a]) / (b - a)
        delta.extend([value] * (b - a))
        a = b
    return RelaxedSolution(tuple(delta), _objective(delta, thresholds.M, K), tuple(bool(x) for x in h))


def certificate(sol: RelaxedSolution, thresholds: Thresholds) -> KktCertificate:
    """Dual values recovered from a primal solution.

    ``lambda_k = 2 (delta_{k+1} - delta_k)`` from stationarity and
    ``nu = 2 (delta_K - M/K)``.
    """
    d = sol.delta
    K = thresholds.K
    lam = tuple(2.0 * (d[k + 1] - d[k]) for k in range(K - 1))
    nu = 2.0 * (d[-1] - thresholds.M / K)
    prefix = sol.prefix_sums()
    residual = max((abs(lam[k] * (prefix[k] - thresholds.pi[k])) for k in range(K - 1)), default=0.0)
    active = sol.active or tuple([False] * (K - 1) + [True])
    return KktCertificate(lam, nu, active, residual)


def check_hypothesis(
    sol: RelaxedSolution, h: Sequence[bool], thresholds: Thresholds
) -> tuple[Verdict, KktCertificate]:
    prefix = sol.prefix_sums()
    for k in range(thresholds.K - 1):
        if not h[k] and prefix[k] > thresholds.pi[k] + TOL:
            return Verdict.CONTRADICTING, certificate(sol, thresholds)
    d = sol.delta
    if any(d[k] < d[k - 1] - TOL for k in range(1, len(d))):
        return Verdict.SUBOPTIMAL, certificate(sol, thresholds)
    return Verdict.OPTIMAL, certificate(sol, thresholds)


def _hypotheses(K: int):
    """All hypotheses, fewest binding inequality constraints first."""
    idx = range(K - 1)
    for r in range(K):
        for chosen in itertools.combinations(idx, r):
            h = [False] * K
            for c in chosen:
                h[c] = True
            h[-1] = True
            yield tuple(h)


def brute_force_solve(thresholds: Thresholds) -> RelaxedSolution:
    """Test hypotheses exhaustively and return the optimal one.

    Hypotheses are visited in order of increasing active-set size, so the
    returned ``active`` is the minimal binding set. Several hypotheses can
    be optimal when hull points are collinear; they all give the same
    ``delta``.
    """
    if thresholds.K > MAX_ENUMERATION_K:
        raise KTooLargeForEnumeration(
            f"K={thresholds.K} needs 2^{thresholds.K - 1} hypotheses; limit is K={MAX_ENUMERATION_K}"
        )
    for h in _hypotheses(thresholds.K):
        sol = solve_hypothesis(h, thresholds)
        verdict, _ = check_hypothesis(sol, h, thresholds)
        if verdict is Verdict.OPTIMAL:
            return sol
    raise NoOptimalHypothesis(f"no hypothesis is optimal for pi={thresholds.full_pi}")


def prune_constraints(thresholds: Thresholds) -> tuple[bool, ...]:
    """Flag constraints that cannot bind at the optimum.

    Constraint ``k`` is flagged when ``(k, pi_k)`` lies strictly above the
    chord between some ``(a, pi_a)`` and ``(b, pi_b)`` with ``a < k < b``.
    Comparisons are cross-multiplied so integer thresholds are exact.
    """
    full = thresholds.full_pi
    K = thresholds.K
    flags = []
    for k in range(1, K):
        above = any(
            (full[k] - full[a]) * (b - a) > (full[b] - full[a]) * (k - a)
            for a in range(0, k)
            for b in range(k + 1, K + 1)
        )
        flags.append(above)
    return tuple(flags)


def solve_relaxed(thresholds: Thresholds) -> tuple[RelaxedSolution, KktCertificate]:
    """Exact relaxed optimum by walking the lower convex hull of ``(k, pi_k)``.

    From the current vertex ``a`` pick the ``b > a`` of least slope, ties going
    to the farthest ``b``; every cluster in ``(a, b]`` gets that slope.
    Within a run of equal ``pi`` only the last index can win (same rise, longer
    run), so candidates are restricted to run ends.
    """
    full = np.asarray(thresholds.full_pi, dtype=np.int64)
    K = thresholds.K
    ends = np.flatnonzero(np.append(full[1:] != full[:-1], True))
    delta: list[float] = []
    active = [False] * K
    a = 0
    while a != K:
        cand = ends[np.searchsorted(ends, a, side="right") :]
        rise = full[cand] - full[a]
        run = cand - a
        # float argmin as a start, then settle exactly by cross-multiplying
        j = int(np.argmin(rise / run))
        while True:
            better = np.flatnonzero(rise * run[j] < rise[j] * run)
            if better.size == 0:
                break
            j = int(better[np.argmin(rise[better] / run[better])])
        best = int(cand[np.flatnonzero(rise * run[j] == rise[j] * run)[-1]])
        value = int(full[best] - full[a]) / (best - a)
        delta.extend([value] * (best - a))
        active[best - 1] = True
        a = best
    sol = RelaxedSolution(tuple(delta), _objective(delta, thresholds.M, K), tuple(active))
    return sol, certificate(sol, thresholds)


def round_boundaries(sol: RelaxedSolution, thresholds: Thresholds) -> tuple[int, ...]:
    """Nearest-integer cluster boundaries from relaxed sizes.

    Halves round up; each boundary is then clipped into
    ``[previous boundary, pi_k]`` so the deadline constraints survive.
    """
    prefix = sol.prefix_sums()
    omega: list[int] = []
    prev = 0
    for k in range(thresholds.K - 1):
        w = math.floor(prefix[k] + 0.5)
        clipped = min(max(w, prev), thresholds.pi[k])
        if clipped != w:
            logger.debug("boundary %d clipped from %d to %d", k + 1, w, clipped)
        omega.append(clipped)
        prev = clipped
    omega.append(thresholds.M)
    return tuple(omega)


def _integer_objective(omega: Sequence[int], M: int) -> float:
    prev = (0, *omega[:-1])
    return _objective([b - a for a, b in zip(prev, omega)], M, len(omega))


def round_and_build(
    sol: RelaxedSolution, profiles: OrderedProfiles | None, thresholds: Thresholds
) -> ClusterPlan:
    omega = round_boundaries(sol, thresholds)
    members = None
    if profiles is not None:
        if profiles.M != thresholds.M:
            raise InvalidRange(f"profiles have {profiles.M} clients, thresholds expect {thresholds.M}")
        lows = (0, *omega[:-1])
        members = tuple(
            tuple(sorted(profiles.client_at(r) for r in range(lo + 1, hi + 1)))
            for lo, hi in zip(lows, omega)
        )
    return ClusterPlan(
        omega=omega,
        theta=thresholds.theta,
        pi=thresholds.pi,
        objective_integer=_integer_objective(omega, thresholds.M),
        members=members,
        relaxed=sol,
    )


def plan_clusters(
    profiles: OrderedProfiles, timing: TimingParams, K: int | None = None
) -> tuple[ClusterPlan, Thresholds, KktCertificate]:
    """Thresholds, relaxed optimum and rounded plan in one call (``K=None`` picks it)."""
    if K is None:
        K = choose_cluster_count(profiles, timing)
    th = compute_thresholds(profiles, timing, K)
    sol, cert = solve_relaxed(th)
    return round_and_build(sol, profiles, th), th, cert


def single_cluster_plan(profiles: OrderedProfiles, timing: TimingParams) -> ClusterPlan:
    """Conventional federated learning expressed as a one-cluster plan."""
    plan, _, _ = plan_clusters(profiles, timing, K=1)
    return plan


def validate_plan(
    plan: ClusterPlan,
    thresholds: Thresholds,
    N: int,
    profiles: OrderedProfiles | None = None,
    timing: TimingParams | None = None,
) -> PlanReport:
    """Check hard scheduling constraints and collect soft warnings.

    Raises :class:`NonMonotoneBoundaries` or :class:`DeadlineViolation`;
    undersized or unbalanced clusters only produce warnings.
    """
    omega = plan.omega
    M = thresholds.M
    if len(omega) != thresholds.K:
        raise NonMonotoneBoundaries(f"plan has {len(omega)} boundaries, expected {thresholds.K}")
    bounds = (0, *omega)
    if any(b < a for a, b in zip(bounds, bounds[1:])) or omega[-1] != M:
        raise NonMonotoneBoundaries(f"boundaries must be non-decreasing from 0 to {M}: {list(omega)}")

    theta = thresholds.theta or plan.theta
    if timing is not None and theta:
        for k in range(1, len(theta)):
            if theta[k] - theta[k - 1] < timing.tau_com - TOL:
                raise DeadlineViolation(
                    f"deadlines {k} and {k + 1} are {theta[k] - theta[k - 1]} apart, "
                    f"less than one communication slot {timing.tau_com}"
                )

    sizes = plan.sizes
    for k, size in enumerate(sizes, start=1):
        if size == 0:
            continue
        if profiles is not None and theta:
            tau = profiles.tau_at(omega[k - 1])
            if tau > theta[k - 1]:
                raise DeadlineViolation(
                    f"cluster {k}: slowest member needs {tau}s but deadline is {theta[k - 1]}s"
                )
        elif k < thresholds.K and omega[k - 1] > thresholds.pi[k - 1]:
            raise DeadlineViolation(
                f"cluster {k}: boundary {omega[k - 1]} exceeds threshold {thresholds.pi[k - 1]}"
            )

    report = PlanReport()
    mean = M / thresholds.K
    for k, size in enumerate(sizes, start=1):
        if size == 0:
            report.warnings.append(f"cluster {k} is empty; its upload slot is wasted, consider a smaller K")
        elif size < N:
            report.warnings.append(f"cluster {k} has {size} clients, fewer than {N} sub-channels")
        if abs(size - mean) > 0.5 * mean:
            report.warnings.append(f"cluster {k} size {size} deviates from the mean {mean:g} by more than 50%")
    for w in report.warnings:
        logger.warning(w)
    return report
