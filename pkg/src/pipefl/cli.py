"""Command-line entry point: ``pipefl {cluster,schedule,simulate,compare}``.

Exit codes: 0 success, 1 validation failure, 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .clustering import (
    ClusterPlan,
    KktCertificate,
    Thresholds,
    TimingParams,
    choose_cluster_count,
    compute_thresholds,
    round_and_build,
    solve_relaxed,
    validate_plan,
)
from .config import load_config
from .errors import FormatError, PipeflError, ValidationError
from .experiment import CSV_FIELDS, cell_rows, compare, format_table, run_one
from .profiles import order_profiles, read_profiles_csv
from .timing import build_timeline, efficiency

logger = logging.getLogger("pipefl")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _clusters_arg(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        k = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from exc
    if k < 1:
        raise argparse.ArgumentTypeError("cluster count must be >= 1")
    return k


def _cert_dict(cert: KktCertificate) -> dict[str, Any]:
    return {
        "lambda": list(cert.lam),
        "nu": cert.nu,
        "active": list(cert.active),
        "complementary_slackness_residual": cert.complementary_slackness_residual,
    }


def plan_to_dict(
    plan: ClusterPlan,
    cert: KktCertificate,
    warnings: list[str],
    timing: TimingParams | None,
    tau_range: tuple[float, float] | None,
) -> dict[str, Any]:
    out: dict[str, Any] = {
        "K": plan.K,
        "M": plan.M,
        "omega": list(plan.omega),
        "sizes": list(plan.sizes),
        "theta": list(plan.theta),
        "pi": list(plan.pi),
        "delta": list(plan.relaxed.delta) if plan.relaxed else None,
        "objective_relaxed": plan.relaxed.objective if plan.relaxed else None,
        "objective": plan.objective_integer,
        "certificate": _cert_dict(cert),
        "warnings": warnings,
        "members": [list(m) for m in plan.members] if plan.members is not None else None,
    }
    if timing is not None:
        out["timing"] = dataclasses.asdict(timing)
    if tau_range is not None:
        out["tau_min"], out["tau_max"] = tau_range
        if timing is not None:
            out["efficiency"] = dataclasses.asdict(efficiency(plan.K, timing, tau_range[1]))
    return out


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_cluster(args: argparse.Namespace) -> int:
    if args.pi is not None:
        if args.clients is None or not isinstance(args.clusters, int):
            raise ValidationError("--pi needs --clients M and an explicit --clusters K")
        if len(args.pi) != args.clusters - 1:
            raise ValidationError(f"--pi needs K-1={args.clusters - 1} values, got {len(args.pi)}")
        th = Thresholds.from_pi(args.pi, args.clients)
        sol, cert = solve_relaxed(th)
        plan = round_and_build(sol, None, th)
        report = validate_plan(plan, th, args.subchannels)
        doc = plan_to_dict(plan, cert, report.warnings, None, None)
    else:
        if args.profiles is None:
            raise ValidationError("give either --profiles FILE or --pi LIST")
        if args.tau_com is None:
            raise ValidationError("--tau-com is required with --profiles")
        profiles = order_profiles(read_profiles_csv(args.profiles, args.sigma))
        timing = TimingParams(args.tau_com, args.tau_server, args.delta_global)
        K = choose_cluster_count(profiles, timing) if args.clusters == "auto" else args.clusters
        th = compute_thresholds(profiles, timing, K)
        sol, cert = solve_relaxed(th)
        plan = round_and_build(sol, profiles, th)
        report = validate_plan(plan, th, args.subchannels, profiles, timing)
        doc = plan_to_dict(plan, cert, report.warnings, timing, (profiles.tau_min, profiles.tau_max))
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def _load_plan(path: str) -> tuple[ClusterPlan, TimingParams, float | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        timing = TimingParams(**doc["timing"])
        plan = ClusterPlan(
            omega=tuple(int(v) for v in doc["omega"]),
            theta=tuple(float(v) for v in doc["theta"]),
            pi=tuple(int(v) for v in doc["pi"]),
            objective_integer=float(doc["objective"]),
            members=tuple(tuple(m) for m in doc["members"]) if doc.get("members") is not None else None,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: plan file is missing field {exc}") from exc
    return plan, timing, doc.get("tau_max")


def timeline_csv(plan: ClusterPlan, timing: TimingParams) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster", "start", "end"])
    for win in build_timeline(plan, timing).windows:
        w.writerow([win.cluster, repr(win.start), repr(win.end)])
    return buf.getvalue()


def cmd_schedule(args: argparse.Namespace) -> int:
    plan, timing, tau_max = _load_plan(args.plan)
    timeline = build_timeline(plan, timing, args.rounds)
    summary = {"round_duration": timeline.round_duration, "total_seconds": timeline.total}
    if tau_max is not None:
        summary.update(dataclasses.asdict(efficiency(plan.K, timing, tau_max)))
    _emit(timeline_csv(plan, timing), args.out)
    text = "".join(f"{k}: {v:.6g}\n" for k, v in summary.items())
    # keep stdout pure CSV when the timeline goes there
    (sys.stderr if args.out in (None, "-") else sys.stdout).write(text)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def _metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "loss", "accuracy", "sim_seconds", "clients"])
    for r in records:
        w.writerow([r.t, repr(r.loss), "" if r.accuracy is None else repr(r.accuracy), repr(r.sim_seconds), r.clients])
    return buf.getvalue()


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir or cfg.output_dir)
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)
    runs = []
    for K in cfg.cluster_list:
        for N in cfg.subchannels:
            for eta in cfg.eta_grid:
                for seed in cfg.seeds:
                    res = run_one(cfg, K, N, eta, seed)
                    name = f"K{K}_N{N}_eta{eta:g}_seed{seed}.csv"
                    (out_dir / "runs" / name).write_text(_metrics_csv(res.records))
                    runs.append(
                        {
                            "K": res.K,
                            "clusters": K,
                            "N": N,
                            "eta": eta,
                            "seed": seed,
                            "rounds_to_target": res.rounds,
                            "seconds_to_target": res.seconds,
                            "metrics": f"runs/{name}",
                            "error": res.error,
                        }
                    )
                    logger.info("K=%s N=%d eta=%g seed=%d -> %s", K, N, eta, seed, res.rounds)
    (out_dir / "summary.json").write_text(json.dumps({"runs": runs}, indent=2) + "\n")
    print(f"wrote {len(runs)} runs to {out_dir}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = compare(cfg, jobs=args.jobs)
    with (out_dir / "compare.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(cell_rows(cells))
    table = format_table(cells)
    (out_dir / "compare.txt").write_text(table + "\n")
    print(table)
    for c in cells:
        if not c.reached:
            print(f"K={c.K} N={c.N}: target never reached (median)", file=sys.stderr)
        for err in sorted(set(c.errors)):
            print(f"K={c.K} N={c.N}: {err}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pipefl", description="Clustered scheduling and pipelined uploads for federated learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cluster", help="compute an optimal cluster plan")
    c.add_argument("--profiles", help="CSV with client_id,n_m[,tau_m]")
    c.add_argument("--sigma", type=float, help="seconds per sample; overrides tau_m")
    c.add_argument("--pi", type=_int_list, help="count thresholds pi_1..pi_{K-1} (skips profiles)")
    c.add_argument("--clients", type=int, help="client count M when using --pi")
    c.add_argument("--tau-com", type=float)
    c.add_argument("--tau-server", type=float, default=0.0)
    c.add_argument("--delta-global", type=float, default=0.0)
    c.add_argument("--clusters", type=_clusters_arg, default="auto")
    c.add_argument("--subchannels", type=int, default=1)
    c.add_argument("--out", help="plan JSON path (default stdout)")
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("schedule", help="pipelined upload timeline of a plan")
    s.add_argument("plan")
    s.add_argument("--out", help="timeline CSV path (default stdout)")
    s.add_argument("--summary", help="also write the summary as JSON")
    s.add_argument("--rounds", type=int, default=1)
    s.set_defaults(func=cmd_schedule)

    m = sub.add_parser("simulate", help="train with clustered scheduling")
    m.add_argument("config")
    m.add_argument("--out-dir")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("compare", help="rounds-to-target table against the conventional scheme")
    r.add_argument("config")
    r.add_argument("--out-dir")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_compare)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PipeflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
