"""Batch experiment front end.

Every command is deterministic given its flags: per-trial seeds derive from
the ``--seed`` base and the trial index through a fixed 64-bit mixer, output
rows are written in trial order regardless of ``--jobs``, and no timestamps
or environment details leak into the output, so repeated invocations are
byte-identical.

Exit codes: 0 success, 2 usage or configuration error, 3 resource budget
exceeded, 4 internal assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Optional, Sequence

from . import __version__
from .core import LEADER, Protocol, run_trial
from .exact import (
    BudgetExceededError,
    DEFAULT_BUDGET,
    NonAbsorbingError,
    enumerate_reachable,
    expected_hitting_steps,
    safety_verdicts,
)
from .influence import (
    INFLUENCER_EVENT,
    InfluencerObserver,
    InteractionLog,
    ScheduleRecorder,
    backward_sets,
    build_graph,
    demo_log,
    first_exceed_time,
    write_size_series,
)
from .protocols import load_protocol, make_protocol
from .rng import derive_seed
from .stats import ceil_rational_power, coupon_spec, expected_coupon_sum, summarize, variance_coupon_sum

BUDGET_ENV = "POPSIM_BUDGET"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_INTERNAL = 4


def threshold_count(expr: str, n: int) -> int:
    """Evaluate a threshold expression for one population size.

    Supported forms: ``n``, ``n^A`` with rational A (``2/3``, ``0.5``, ``2``),
    ``log(n)`` (natural log), or a plain number.  Results are rounded up with
    exact integer arithmetic for the power form, matching the convention used
    by the analytic oracles.
    """
    expr = expr.strip()
    if expr == "log(n)":
        value = max(1, math.ceil(math.log(n)))
    elif expr == "n":
        value = n
    elif expr.startswith("n^"):
        try:
            a = Fraction(expr[2:])
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"bad exponent in threshold expression {expr!r}") from None
        if a < 0:
            raise ValueError("threshold exponent must be >= 0")
        value = ceil_rational_power(n, a.numerator, a.denominator)
    else:
        try:
            value = math.ceil(Fraction(expr))
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"unsupported threshold expression {expr!r}") from None
    if value < 1:
        raise ValueError(f"threshold expression {expr!r} evaluates below 1 at n={n}")
    return value


def _resolve_protocol(args, n: int) -> Protocol:
    if getattr(args, "protocol_file", None):
        return load_protocol(args.protocol_file)
    return make_protocol(args.protocol, n)


def _stop_plan(protocol: Protocol, threshold: Optional[int]):
    """Choose the named stop event for a plain run of this protocol.

    pairwise-elimination freezes once one leader remains, so the one-leader
    event is its stabilization; other leader-outputting protocols get the
    more honest name ``one_leader``.  The epidemic stops when everyone is
    infected; leave-init stops at the initial-state threshold when one is
    given, otherwise runs to the step budget.
    """
    if protocol.name == "pairwise-elimination":
        return "stabilized", "one_leader"
    if protocol.name == "one-way-epidemic":
        return "all_infected", "all_infected"
    if protocol.name == "leave-init":
        return ("init_below_threshold", "init_below") if threshold is not None else (None, None)
    if protocol.output_states(LEADER):
        return "one_leader", "one_leader"
    return None, None


def _make_stop_predicate(kind: Optional[str], protocol: Protocol, n: int, threshold: Optional[int]):
    if kind is None:
        return None
    if kind == "one_leader":
        leaders = protocol.output_states(LEADER)
        return lambda trial: sum(trial.counts[s] for s in leaders) == 1
    if kind == "all_infected":
        return lambda trial: trial.counts[1] == n
    if kind == "init_below":
        init = protocol.initial_state
        return lambda trial: trial.counts[init] < threshold
    raise AssertionError(f"unknown stop kind {kind}")


def _initial_override(protocol: Protocol, n: int):
    if protocol.name == "one-way-epidemic":
        # Seed exactly one infected agent; the protocol itself starts all-susceptible.
        return [1] + [0] * (n - 1)
    return None


def _run_job(job) -> dict:
    """One trial of the plain-run sweep; top level so worker processes can pickle it."""
    protocol, n, trial_idx, seed, max_steps, event_name, stop_kind, threshold = job
    pred = _make_stop_predicate(stop_kind, protocol, n, threshold)
    rec = run_trial(
        protocol,
        n,
        seed,
        max_steps=max_steps,
        stop_event=(event_name, pred) if pred is not None else None,
        initial=_initial_override(protocol, n),
    )
    row = {
        "trial": trial_idx,
        "seed": seed,
        "n": n,
        "steps": rec.steps_taken,
        "parallel_time": rec.steps_taken / n,
        "truncated": int(rec.truncated),
    }
    if event_name is not None:
        row[f"{event_name}_step"] = rec.event_steps.get(event_name, "")
    return row


def _influencer_job(job) -> dict:
    protocol, n, trial_idx, seed, max_steps, threshold, agent = job
    rec = first_exceed_time(
        protocol, n, seed, threshold, max_steps=max_steps, agent=agent
    )
    t_min = rec.event_steps.get(INFLUENCER_EVENT)
    ratio = t_min / (n * math.log(n)) if t_min is not None else None
    return {
        "n": n,
        "trial": trial_idx,
        "seed": seed,
        "threshold": threshold,
        "t_min": t_min if t_min is not None else "",
        "ratio": ratio if ratio is not None else "",
        "truncated": int(rec.truncated),
        "_ratio_value": ratio,
    }


def _coupon_job(job) -> dict:
    protocol, n, trial_idx, seed, max_steps, threshold = job
    pred = _make_stop_predicate("init_below", protocol, n, threshold)
    rec = run_trial(
        protocol, n, seed, max_steps=max_steps, stop_event=("init_below_threshold", pred)
    )
    return {
        "n": n,
        "trial": trial_idx,
        "seed": seed,
        "f": threshold,
        "steps": rec.steps_taken,
        "parallel_time": rec.steps_taken / n,
        "truncated": int(rec.truncated),
    }


def _map_jobs(fn, jobs_list, workers: int):
    if workers <= 1 or len(jobs_list) <= 1:
        return [fn(job) for job in jobs_list]
    chunk = max(1, len(jobs_list) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs_list, chunksize=chunk))


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def _render_rows(rows: list[dict], columns: list[str], fmt: str, schema: str) -> str:
    header = f"# schema={schema} tool=popsim/{__version__}"
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(header + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(col, "")) for col in columns])
        return buf.getvalue()
    if fmt == "gnuplot":
        lines = [header, "# columns: " + " ".join(columns)]
        for row in rows:
            lines.append(" ".join(_format_cell(row.get(col, "")) or "nan" for col in columns))
        return "\n".join(lines) + "\n"
    if fmt == "json":
        cleaned = [{col: row.get(col, None) for col in columns} for row in rows]
        doc = {"schema": schema, "tool": f"popsim/{__version__}", "rows": cleaned}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    raise ValueError(f"unknown output format {fmt!r}")


def _emit(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _summary_row(n: int, threshold: int, ratios: list[float]) -> dict:
    row = {"n": n, "threshold": threshold, "count": len(ratios)}
    if ratios:
        est = summarize(ratios)
        row.update(
            mean_ratio=est.mean,
            variance=est.variance,
            std_error=est.std_error,
            **{f"p{lvl}": val for lvl, val in est.percentiles.items()},
        )
    return row


def cmd_run(args) -> int:
    sizes = args.n
    recorded_log = None
    rows = []
    event_columns: list[str] = []
    for n in sizes:
        protocol = _resolve_protocol(args, n)
        threshold = threshold_count(args.threshold, n) if args.threshold else None
        event_name, stop_kind = _stop_plan(protocol, threshold)
        if event_name is not None and f"{event_name}_step" not in event_columns:
            event_columns.append(f"{event_name}_step")
        jobs = [
            (protocol, n, t, derive_seed(args.seed, t), args.max_steps, event_name, stop_kind, threshold)
            for t in range(args.trials)
        ]
        rows.extend(_map_jobs(_run_job, jobs, args.jobs))
        if args.save_log and recorded_log is None:
            # Replay trial 0 with a recorder; observers draw no randomness, so
            # the trajectory is identical to the sweep's trial 0.
            recorder = ScheduleRecorder(n)
            pred = _make_stop_predicate(stop_kind, protocol, n, threshold)
            run_trial(
                protocol,
                n,
                derive_seed(args.seed, 0),
                max_steps=args.max_steps,
                stop_event=(event_name, pred) if pred is not None else None,
                observers=[recorder],
                initial=_initial_override(protocol, n),
            )
            recorded_log = recorder.log
    columns = ["trial", "seed", "n", "steps", "parallel_time", "truncated", *event_columns]
    _emit(_render_rows(rows, columns, args.format, "popsim.run.v1"), args.out)
    if args.save_log:
        recorded_log.save(args.save_log)
    return EXIT_OK


def cmd_influencer(args) -> int:
    trial_rows = []
    summary_rows = []
    series_done = False
    for n in args.n:
        protocol = _resolve_protocol(args, n)
        threshold = threshold_count(args.threshold, n)
        jobs = [
            (protocol, n, t, derive_seed(args.seed, t), args.max_steps, threshold, args.agent)
            for t in range(args.trials)
        ]
        results = _map_jobs(_influencer_job, jobs, args.jobs)
        ratios = [row.pop("_ratio_value") for row in results]
        trial_rows.extend(results)
        summary_rows.append(_summary_row(n, threshold, [r for r in ratios if r is not None]))
        if args.series_out and not series_done:
            obs = InfluencerObserver(n, threshold=threshold, agent=args.agent, track_series=True)
            run_trial(
                protocol,
                n,
                derive_seed(args.seed, 0),
                max_steps=args.max_steps,
                stop=lambda trial: obs.first_exceed_step is not None,
                observers=[obs],
            )
            write_size_series(obs, args.series_out)
            series_done = True

    trial_cols = ["n", "trial", "seed", "threshold", "t_min", "ratio", "truncated"]
    _emit(_render_rows(trial_rows, trial_cols, args.format, "popsim.influencer-trials.v1"), args.out)
    summary_cols = ["n", "threshold", "count", "mean_ratio", "variance", "std_error"] + [
        f"p{lvl}" for lvl in (1, 5, 25, 50, 75, 95, 99)
    ]
    summary_text = _render_rows(summary_rows, summary_cols, args.format, "popsim.influencer-summary.v1")
    _emit(summary_text, _summary_path(args))
    return EXIT_OK


def _summary_path(args) -> Optional[str]:
    """Summary rows go to --summary-out, or a ``-summary`` sibling of --out,
    or stdout after the trial rows."""
    if args.summary_out:
        return args.summary_out
    if args.out and args.out != "-":
        root, ext = os.path.splitext(args.out)
        return f"{root}-summary{ext or '.csv'}"
    return None


def cmd_coupon(args) -> int:
    trial_rows = []
    summary_rows = []
    for n in args.n:
        protocol = make_protocol("leave-init", n)
        threshold = threshold_count(args.threshold, n)
        jobs = [
            (protocol, n, t, derive_seed(args.seed, t), args.max_steps, threshold)
            for t in range(args.trials)
        ]
        results = _map_jobs(_coupon_job, jobs, args.jobs)
        trial_rows.extend(results)

        spec = coupon_spec(n, threshold)
        analytic_mean = expected_coupon_sum(spec)
        analytic_var = variance_coupon_sum(spec)
        steps = [row["steps"] for row in results if not row["truncated"]]
        summary = {
            "n": n,
            "f": threshold,
            "f_star": 2 * math.ceil(threshold / 2),
            "analytic_mean": analytic_mean,
            "analytic_variance": analytic_var,
        }
        if steps:
            est = summarize([float(s) for s in steps])
            below_half = sum(1 for s in steps if s < analytic_mean / 2)
            summary.update(
                empirical_mean=est.mean,
                empirical_std_error=est.std_error,
                fraction_below_half_analytic=below_half / len(steps),
            )
        summary_rows.append(summary)

    trial_cols = ["n", "trial", "seed", "f", "steps", "parallel_time", "truncated"]
    _emit(_render_rows(trial_rows, trial_cols, args.format, "popsim.coupon-trials.v1"), args.out)
    summary_cols = [
        "n", "f", "f_star", "analytic_mean", "analytic_variance",
        "empirical_mean", "empirical_std_error", "fraction_below_half_analytic",
    ]
    summary_text = _render_rows(summary_rows, summary_cols, args.format, "popsim.coupon-summary.v1")
    _emit(summary_text, _summary_path(args))
    return EXIT_OK


def cmd_exact(args) -> int:
    if len(args.n) != 1:
        raise ValueError("exact analysis takes a single --n")
    n = args.n[0]
    protocol = _resolve_protocol(args, n)
    budget = int(os.environ.get(BUDGET_ENV, DEFAULT_BUDGET))
    space = enumerate_reachable(protocol, n, budget=budget)
    verdicts = safety_verdicts(space)
    safe = frozenset(i for i, v in enumerate(verdicts) if v.safe)

    report = {
        "schema": "popsim.exact.v1",
        "tool": f"popsim/{__version__}",
        "protocol": protocol.name,
        "n": n,
        "reachable_configurations": len(space),
        "safe_configurations": len(safe),
        "budget": budget,
        "configurations": [
            {
                "states": list(v.config),
                "safe": v.safe,
                "leader_count": v.leader_count,
                "reason": v.reason,
            }
            for v in verdicts
        ],
    }
    if safe:
        steps = expected_hitting_steps(space, lambda c: space.index[c] in safe)
        report["expected_stabilization_steps"] = {
            "rational": f"{steps.numerator}/{steps.denominator}" if steps.denominator != 1 else str(steps.numerator),
            "real": float(steps),
        }
        report["expected_stabilization_parallel_time"] = float(steps) / n
    else:
        report["expected_stabilization_steps"] = None
        report["note"] = "no safe configurations are reachable"
    _emit(json.dumps(report, sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_export_graph(args) -> int:
    log = demo_log() if args.fixture else InteractionLog.load(args.log)
    v, t = args.agent, args.step
    if not 0 <= t <= len(log):
        raise ValueError(f"step {t} out of range for a log of length {len(log)}")
    graph = build_graph(log, t)
    layers = backward_sets(log, v, t)

    lines = [f"# schema=popsim.graph.v1 tool=popsim/{__version__}"]
    lines.append(f"n={log.n} depth={t} query_agent={v}")
    lines.append("edges:")
    if graph.edges:
        lines.append(graph.to_edge_text())
    lines.append("backward:")
    for offset, members in enumerate(layers):
        layer = t - offset
        listed = ",".join(str(u) for u in sorted(members))
        lines.append(f"layer={layer} size={len(members)} members={listed}")
    _emit("\n".join(lines) + "\n", args.out)
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(graph.to_dot() + "\n")
    return EXIT_OK


def _add_common(parser, *, sizes=True, trials=True):
    if sizes:
        parser.add_argument("--n", type=int, action="append", required=True,
                            help="population size (repeatable)")
    if trials:
        parser.add_argument("--trials", type=int, default=1)
        parser.add_argument("--seed", type=int, default=0,
                            help="sweep seed base; per-trial seeds derive from it")
        parser.add_argument("--max-steps", type=int, default=None)
        parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument("--format", choices=["csv", "json", "gnuplot"], default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popsim",
        description="Population-protocol experiments: simulation sweeps, "
        "influencer tracking, and exact small-population analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run seeded trials of a protocol")
    p_run.add_argument("--protocol", default=None)
    p_run.add_argument("--protocol-file", default=None)
    p_run.add_argument("--threshold", default=None,
                       help="stop threshold for leave-init (e.g. n^2/3)")
    p_run.add_argument("--save-log", default=None,
                       help="record trial 0's interaction log to this path")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_inf = sub.add_parser("influencer", help="first-crossing times of influencer set sizes")
    p_inf.add_argument("--protocol", default="leave-init",
                       help="protocol to drive (influence growth is protocol independent)")
    p_inf.add_argument("--protocol-file", default=None)
    p_inf.add_argument("--threshold", default="n^2/3")
    p_inf.add_argument("--agent", type=int, default=None,
                       help="track one fixed agent instead of the first crossing by anyone")
    p_inf.add_argument("--summary-out", default=None)
    p_inf.add_argument("--series-out", default=None,
                       help="write trial 0's size time series as CSV")
    _add_common(p_inf)
    p_inf.set_defaults(func=cmd_influencer)

    p_coupon = sub.add_parser("coupon", help="initial-state drain experiment with analytic bound")
    p_coupon.add_argument("--threshold", default="n^2/3",
                          help="stop once fewer than this many agents remain initial")
    p_coupon.add_argument("--summary-out", default=None)
    _add_common(p_coupon)
    p_coupon.set_defaults(func=cmd_coupon)

    p_exact = sub.add_parser("exact", help="exhaustive reachability, safety, and hitting time")
    p_exact.add_argument("--protocol", default=None)
    p_exact.add_argument("--protocol-file", default=None)
    _add_common(p_exact, trials=False)
    p_exact.set_defaults(func=cmd_exact)

    p_graph = sub.add_parser("export-graph", help="layered influence graph and backward sets")
    source = p_graph.add_mutually_exclusive_group(required=True)
    source.add_argument("--log", default=None, help="interaction log file")
    source.add_argument("--fixture", action="store_true",
                        help="use the built-in five-agent demo schedule")
    p_graph.add_argument("--agent", type=int, required=True)
    p_graph.add_argument("--step", type=int, required=True)
    p_graph.add_argument("--dot", default=None, help="also write Graphviz output here")
    _add_common(p_graph, sizes=False, trials=False)
    p_graph.set_defaults(func=cmd_export_graph)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "protocol", None) is None and getattr(args, "protocol_file", None) is None:
        if args.command in ("run", "exact"):
            parser.error(f"{args.command} needs --protocol or --protocol-file")
    try:
        return args.func(args)
    except BudgetExceededError as exc:
        print(f"popsim: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except AssertionError as exc:
        print(f"popsim: internal assertion failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, NonAbsorbingError, OSError) as exc:
        print(f"popsim: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
