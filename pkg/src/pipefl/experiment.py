"""Rounds-to-target sweeps over cluster count, sub-channels, seeds and learning rates."""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .clustering import TimingParams, plan_clusters
from .config import ExperimentConfig
from .data import (
    FederatedDataset,
    images_to_features,
    load_idx,
    partition_real,
    synth_logistic_data,
    synth_partition_counts,
)
from .errors import DivergenceDetected, PipeflError
from .fedtrain import RoundRecord, Target, TrainConfig, pooled_gd, rounds_to_target, run_baseline, run_cs_gd
from .models import Model, build_model
from .profiles import OrderedProfiles, order_profiles, profiles_from_counts
from .timing import efficiency

logger = logging.getLogger(__name__)


def build_dataset(opts: dict[str, Any], seed: int) -> FederatedDataset:
    counts = synth_partition_counts(opts.get("clients", 1500), opts.get("n_min", 10), opts.get("n_max", 70), seed)
    if opts["kind"] == "synthetic":
        return synth_logistic_data(
            counts,
            opts.get("feature_dim", 10),
            opts.get("separation", 3.0),
            seed,
            non_iid=opts.get("non_iid", False),
            skew=opts.get("skew", 0.5),
            test_samples=opts.get("test_samples", 2000),
        )
    data = partition_real(load_idx(opts["train_images"]), load_idx(opts["train_labels"]), counts, seed)
    if "test_images" in opts:
        X = images_to_features(load_idx(opts["test_images"]))
        y = load_idx(opts["test_labels"]).array().astype(np.int64).reshape(-1)
        data = FederatedDataset(data.shards, data.feature_dim, max(data.n_classes, int(y.max()) + 1), (X, y))
    return data


def model_for(opts: dict[str, Any], data: FederatedDataset) -> Model:
    return build_model(opts["kind"], data.feature_dim, data.n_classes, opts.get("hidden", 32))


def timing_for(cfg: ExperimentConfig, profiles: OrderedProfiles, K: int | str) -> TimingParams:
    """Timing for one cell; ``tau_com="auto"`` spaces deadlines so exactly ``K`` clusters fit."""
    t = cfg.timing
    delta = t.get("delta_global", 0.0)
    tau_com = t.get("tau_com", "auto")
    if tau_com == "auto":
        if K == "auto":
            raise PipeflError("tau_com='auto' needs an explicit cluster count")
        spread = profiles.tau_max - profiles.tau_min + delta
        tau_com = spread / K if spread > 0 else 1.0
    return TimingParams(tau_com, t.get("tau_server", 0.0), delta)


def resolve_target(cfg: ExperimentConfig, model: Model, data: FederatedDataset, seed: int) -> Target:
    opts = cfg.target
    if "value" in opts:
        return Target(opts["metric"], opts["value"])
    _, ref = pooled_gd(model, data, opts.get("reference_eta", 1.0), opts.get("reference_rounds", 500), seed)
    ref_value = ref.accuracy if opts["metric"] == "accuracy" else ref.loss
    return Target(opts["metric"], opts["relative_to_reference"] * ref_value)


@dataclass
class RunResult:
    K: int
    N: int
    eta: float
    seed: int
    rounds: int | None
    seconds: float | None
    records: list[RoundRecord] = field(default_factory=list, repr=False)
    error: str | None = None


def run_one(cfg: ExperimentConfig, K: int | str, N: int, eta: float, seed: int, baseline: bool = False) -> RunResult:
    """One training run. ``baseline`` forces conventional uniform sampling."""
    data = build_dataset(cfg.dataset, seed)
    model = model_for(cfg.model, data)
    profiles = order_profiles(profiles_from_counts(data.counts, cfg.timing.get("sigma", 1.0)))
    target = resolve_target(cfg, model, data, seed)
    tcfg = TrainConfig(cfg.rounds, eta, N, seed, target)
    try:
        timing = timing_for(cfg, profiles, K)
        if baseline:
            records = run_baseline(model, data, profiles, timing, tcfg)
            k_used = 1
        else:
            plan, _, _ = plan_clusters(profiles, timing, None if K == "auto" else K)
            records = run_cs_gd(model, data, plan, timing, tcfg)
            k_used = plan.K
    except (DivergenceDetected, PipeflError) as exc:
        return RunResult(K if isinstance(K, int) else 0, N, eta, seed, None, None, error=str(exc))
    hit = rounds_to_target(records, target)
    secs = records[hit - 1].sim_seconds if hit is not None else None
    return RunResult(k_used, N, eta, seed, hit, secs, records)


def _run_task(args) -> RunResult:
    cfg, K, N, eta, seed, baseline = args
    res = run_one(cfg, K, N, eta, seed, baseline)
    res.records = []
    return res


def _median(values: list[float | None]) -> float | None:
    """Median treating misses as infinitely late; ``None`` if the median itself missed."""
    finite = sorted(v if v is not None else float("inf") for v in values)
    m = statistics.median(finite)
    return None if m == float("inf") else m


@dataclass
class Cell:
    K: int
    N: int
    eta: float
    rounds: list[int | None]
    seconds: list[float | None]
    median_rounds: float | None
    median_seconds: float | None
    gain: float | None = None
    epsilon: float | None = None
    epsilon_pfl: float | None = None
    baseline_equal_total: float | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def reached(self) -> bool:
        return self.median_rounds is not None


def _best_eta(results: dict[float, list[RunResult]]) -> float:
    def key(eta):
        m = _median([r.rounds for r in results[eta]])
        return (m is None, m if m is not None else 0.0, eta)

    return min(results, key=key)


def compare(cfg: ExperimentConfig, jobs: int = 1) -> list[Cell]:
    """Run every (K, N) cell over all seeds and learning rates.

    ``K=1`` runs the conventional scheme. Each cell keeps the learning rate
    with the lowest median rounds-to-target; misses count as never reaching
    it. Gains are relative to the ``K=1`` cell with the same ``N``.
    """
    Ks = cfg.cluster_list
    Ns = cfg.subchannels
    keys: list[tuple] = []
    tasks: list[tuple] = []

    def add(key, K, N, baseline):
        for eta in cfg.eta_grid:
            for seed in cfg.seeds:
                keys.append((key, eta))
                tasks.append((cfg, K, N, eta, seed, baseline))

    for K in Ks:
        for N in Ns:
            add((K, N), K, N, K == 1)
            if cfg.baseline_budget == "equal_total" and isinstance(K, int) and K > 1:
                # conventional scheme given the same number of clients per round
                add(("equal_total", K, N), 1, N * K, True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    grouped: dict[tuple, dict[float, list[RunResult]]] = {}
    for (key, eta), res in zip(keys, results):
        grouped.setdefault(key, {}).setdefault(eta, []).append(res)

    cells: list[Cell] = []
    ref: dict[int, float | None] = {}
    for K in Ks:
        for N in Ns:
            by_eta = grouped[(K, N)]
            eta = _best_eta(by_eta)
            runs = by_eta[eta]
            k_used = runs[0].K if runs[0].error is None else (K if isinstance(K, int) else 0)
            cell = Cell(
                K=k_used,
                N=N,
                eta=eta,
                rounds=[r.rounds for r in runs],
                seconds=[r.seconds for r in runs],
                median_rounds=_median([r.rounds for r in runs]),
                median_seconds=_median([r.seconds for r in runs]),
                errors=[r.error for r in runs if r.error],
            )
            tot = grouped.get(("equal_total", K, N))
            if tot:
                cell.baseline_equal_total = _median([r.rounds for r in tot[_best_eta(tot)]])
            if cell.K == 1:
                ref[N] = cell.median_rounds
            cells.append(cell)

    for cell in cells:
        base = ref.get(cell.N)
        if base is not None and cell.median_rounds is not None:
            cell.gain = (base - cell.median_rounds) / base
        _attach_efficiency(cfg, cell)
    return cells


def _attach_efficiency(cfg: ExperimentConfig, cell: Cell) -> None:
    if cell.K < 1:
        return
    data = build_dataset(cfg.dataset, cfg.seeds[0])
    profiles = order_profiles(profiles_from_counts(data.counts, cfg.timing.get("sigma", 1.0)))
    try:
        timing = timing_for(cfg, profiles, cell.K)
    except PipeflError:
        return
    report = efficiency(cell.K, timing, profiles.tau_max)
    cell.epsilon = report.epsilon_baseline
    cell.epsilon_pfl = report.epsilon_pfl


def _fmt(v: float | None, fmt: str = "g") -> str:
    return "-" if v is None else format(v, fmt)


def format_table(cells: list[Cell]) -> str:
    """Aligned text table: rows are cluster counts, columns sub-channels."""
    Ns = sorted({c.N for c in cells})
    Ks = sorted({c.K for c in cells})
    lookup = {(c.K, c.N): c for c in cells}
    header = ["K\\N", *[str(n) for n in Ns]]
    rows = [header]
    for K in Ks:
        row = [str(K)]
        for N in Ns:
            c = lookup.get((K, N))
            if c is None:
                row.append("")
            elif not c.reached:
                row.append("not reached")
            else:
                row.append(f"{c.median_rounds:g} ({_fmt(None if c.gain is None else 100 * c.gain, '.0f')}%)")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join(" | ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


CSV_FIELDS = [
    "K",
    "N",
    "eta",
    "median_rounds",
    "gain_pct",
    "median_seconds",
    "epsilon",
    "epsilon_pfl",
    "baseline_equal_total_rounds",
    "rounds_per_seed",
]


def cell_rows(cells: list[Cell]) -> list[dict[str, Any]]:
    return [
        {
            "K": c.K,
            "N": c.N,
            "eta": c.eta,
            "median_rounds": _fmt(c.median_rounds),
            "gain_pct": _fmt(None if c.gain is None else 100 * c.gain, ".2f"),
            "median_seconds": _fmt(c.median_seconds),
            "epsilon": _fmt(c.epsilon, ".6g"),
            "epsilon_pfl": _fmt(c.epsilon_pfl, ".6g"),
            "baseline_equal_total_rounds": _fmt(c.baseline_equal_total),
            "rounds_per_seed": " ".join(_fmt(r) for r in c.rounds),
        }
        for c in cells
    ]
