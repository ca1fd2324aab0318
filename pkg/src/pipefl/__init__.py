"""Clustered client scheduling and pipelined uploads for federated learning."""

from .clustering import (
    ClusterPlan,
    Thresholds,
    TimingParams,
    brute_force_solve,
    compute_thresholds,
    plan_clusters,
    round_and_build,
    solve_relaxed,
)
from .profiles import ClientProfile, OrderedProfiles, order_profiles, profiles_from_counts

__version__ = "0.1.0"
