"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 infeasible or invalid collaboration,
4 training stalled.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import groups, netsim, sgd, strategy
from .core import CollaborationSpec, SpecError, spec_from_json

log = logging.getLogger("swarm_planner")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DOMAIN = 3
EXIT_STALL = 4


class InputError(Exception):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: CollaborationSpec
    trace: netsim.ChurnTrace | None
    training: netsim.TrainingConfig


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(doc, dict) or "collaboration" not in doc:
        raise InputError("scenario needs a 'collaboration' block")
    try:
        spec = spec_from_json(doc["collaboration"])
    except SpecError as exc:
        raise InputError(str(exc)) from exc
    trace = None
    try:
        if doc.get("trace") is not None:
            trace = netsim.ChurnTrace.from_json(doc["trace"])
        training = netsim.TrainingConfig.from_json(doc.get("training", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad trace or training block: {exc}") from exc
    if trace is not None:
        ids = {p.id for p in spec.peers}
        unknown = sorted({e.peer for e in trace.events} - ids)
        if unknown:
            raise InputError(f"trace references unknown peers: {', '.join(unknown)}")
    return Scenario(str(doc.get("name", Path(path).stem)), spec, trace, training)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# -- plan ----------------------------------------------------------------------

def plan_table(asg) -> str:
    lines = [f"{'peer':<16} {'role':<10} {'fraction':>10}"]
    for pid, role, frac in zip(asg.peer_ids, asg.roles(), asg.fractions):
        lines.append(f"{pid:<16} {role:<10} {frac:>10.6f}")
    lines.append(f"xi = {asg.throughput:.6g} steps/s")
    return "\n".join(lines) + "\n"


def cmd_plan(args) -> int:
    sc = load_scenario(args.scenario)
    asg = strategy.solve_strategy(sc.spec, policy=args.policy)
    # the table goes wherever the machine-readable output does not
    (sys.stdout if args.out else sys.stderr).write(plan_table(asg))
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["peer", "role", "fraction", "compute"])
        for pid, role, frac, c in zip(asg.peer_ids, asg.roles(), asg.fractions, asg.compute):
            w.writerow([pid, role, f"{frac:.12g}", int(c)])
        _emit(buf.getvalue(), args.out)
    else:
        doc = asg.to_json()
        doc["scenario"] = sc.name
        _emit(_dumps(doc), args.out)
    return EXIT_OK


# -- simulate ------------------------------------------------------------------

STEP_COLUMNS = ("step", "time", "samples", "n_peers", "staleness", "round_seconds")


def _steps_csv(trace: netsim.SimTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_COLUMNS)
    for s in trace.steps:
        w.writerow([s.index, f"{s.time:.6f}", f"{s.samples:.6f}", len(s.peers), s.staleness, f"{s.round_seconds:.6f}"])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    horizon = args.hours * 3600.0
    if sc.trace is None:
        trace = netsim.ChurnTrace.static([p.id for p in sc.spec.peers], horizon)
    else:
        trace = netsim.ChurnTrace(sc.trace.events, horizon)
    base = netsim.TrainingConfig(**{**sc.training.__dict__, "seed": args.seed})
    summary: dict[str, Any] = {"scenario": sc.name, "hours": args.hours, "seed": args.seed, "strategies": {}}
    main_trace = None
    for algo in netsim.ALGORITHMS:
        cfg = netsim.TrainingConfig(**{**base.__dict__, "algorithm": algo})
        try:
            sim = netsim.simulate_training(sc.spec, trace, cfg)
        except netsim.TrainingStalled as exc:
            log.error("%s", exc)
            sys.stderr.write(f"training stalled: {exc}\n")
            return EXIT_STALL
        summary["strategies"][algo] = {
            "round_seconds": _clean(netsim.simulate_averaging(sc.spec, algo)),
            "steps_per_hour": sim.steps_per_hour(),
            "steps": len(sim.steps),
            "restarts": sim.restarts,
            "solver_calls": sim.solver_calls,
        }
        if algo == base.algorithm:
            main_trace = sim
    st = summary["strategies"]
    ar, ad = st[netsim.ALLREDUCE], st[netsim.ADAPTIVE]
    summary["adaptive_vs_allreduce_speedup"] = _clean(
        ad["steps_per_hour"] / ar["steps_per_hour"] if ar["steps_per_hour"] else math.inf
    )
    rs_ar, rs_ad = ar["round_seconds"], ad["round_seconds"]
    summary["adaptive_vs_allreduce_round_ratio"] = _clean(rs_ar / rs_ad if rs_ad else math.inf)
    window = 3600.0 if horizon >= 2 * 3600.0 else horizon / 4
    summary["window_seconds"] = window
    summary["window_steps_per_hour"] = [r for _, r in main_trace.window_rates(window)]
    if args.out:
        Path(args.out).write_text(_steps_csv(main_trace))
        sys.stdout.write(_dumps(summary))
    elif args.format == "csv":
        sys.stdout.write(_steps_csv(main_trace))
    else:
        sys.stdout.write(_dumps(summary))
    return EXIT_OK


# -- groups --------------------------------------------------------------------

def _parse_range(text: str, parts: int, kind):
    bits = text.split(":")
    if len(bits) != parts:
        raise InputError(f"range {text!r} needs {parts} colon-separated fields")
    try:
        return [kind(b) for b in bits]
    except ValueError as exc:
        raise InputError(f"bad range {text!r}") from exc


def cmd_groups(args) -> int:
    lo_n, hi_n = _parse_range(args.n_range, 2, int)
    lo_p, hi_p, step = _parse_range(args.p_range, 3, float)
    if lo_n < 2 or hi_n < lo_n:
        raise InputError("n range must satisfy 2 <= a <= b")
    if step <= 0 or lo_p < 0 or hi_p >= 1 or hi_p < lo_p:
        raise InputError("p range must satisfy 0 <= lo <= hi < 1 and step > 0")
    count = int(math.floor((hi_p - lo_p) / step + 1e-9)) + 1
    ps = [round(lo_p + k * step, 12) for k in range(count)]
    rows = []
    for p in ps:
        for n in range(lo_n, hi_n + 1):
            m = groups.optimal_group_size(n, p)
            rows.append({"n": n, "p": p, "m_star": m, "expected_iterations": groups.expected_iterations(n, m, p)})
    if args.format == "json":
        _emit(_dumps(rows), args.out)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "p", "m_star", "expected_iterations"])
        for r in rows:
            w.writerow([r["n"], f"{r['p']:g}", r["m_star"], f"{r['expected_iterations']:.10g}"])
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- sgd -----------------------------------------------------------------------

SGD_DEFAULTS = {
    "mode": "equivalence",
    "dim": 20,
    "mu": 1.0,
    "L": 10.0,
    "sigma0": 1.0,
    "m": 16,
    "steps": 500,
    "seeds": 50,
    "overshoot": 2.0,
    "lr": None,
    "seed": 0,
}


def _sgd_config(path: str | None) -> dict:
    cfg = dict(SGD_DEFAULTS)
    if path:
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(cfg)
        if unknown:
            raise InputError(f"unknown sgd options: {sorted(unknown)}")
        cfg.update(doc)
    if cfg["mode"] not in ("equivalence", "zero_noise", "bound"):
        raise InputError(f"unknown sgd mode {cfg['mode']!r}")
    return cfg


def cmd_sgd(args) -> int:
    cfg = _sgd_config(args.config)
    sigma0 = 0.0 if cfg["mode"] == "zero_noise" else cfg["sigma0"]
    prob = sgd.QuadraticProblem.random(cfg["dim"], cfg["mu"], cfg["L"], sigma0, seed=cfg["seed"])
    steps, m = cfg["steps"], cfg["m"]
    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    columns: dict[str, np.ndarray] = {}
    summary: dict[str, Any] = {"mode": cfg["mode"]}
    if cfg["mode"] == "zero_noise":
        lr = cfg["lr"] or 1.0 / cfg["L"]
        run = sgd.run_sgd(prob, sgd.BatchSchedule.fixed(m, steps), lr=lr, seed=cfg["seed"])
        columns["loss"] = run.losses
        monotone = bool(np.all(np.diff(run.losses) <= 0))
        summary["monotone"] = monotone
        line = f"monotone: {str(monotone).lower()}"
    elif cfg["mode"] == "equivalence":
        fixed, varying, gaps = [], [], []
        for s in seeds:
            a = sgd.run_sgd(prob, sgd.BatchSchedule.fixed(m, steps), lr=cfg["lr"], seed=s)
            sched = sgd.BatchSchedule.poisson_overshoot(m, steps, cfg["overshoot"], seed=10_000 + s)
            b = sgd.run_sgd(prob, sched, lr=cfg["lr"], seed=s)
            fixed.append(a.losses)
            varying.append(b.losses)
            gaps.append(sgd.stepwise_gap(a.losses, b.losses, a.losses[0]))
        columns["fixed_mean"] = np.mean(fixed, axis=0)
        columns["varying_mean"] = np.mean(varying, axis=0)
        gap = float(np.mean(gaps))
        summary["gap"] = gap
        line = f"gap metric: {gap:.6%} of initial suboptimality (limit 5%)"
    else:
        runs = [sgd.run_sgd(prob, sgd.BatchSchedule.poisson_overshoot(m, steps, cfg["overshoot"], seed=10_000 + s),
                            lr=1.0 / (2 * cfg["L"]), seed=s) for s in seeds]
        res = sgd.check_bound(prob, runs, m)
        columns["loss_mean"] = np.mean([r.losses for r in runs], axis=0)
        summary.update({"holds": res.holds, "lhs": res.lhs, "rhs": res.rhs})
        line = f"bound holds: {str(res.holds).lower()} (lhs {res.lhs:.6g}, rhs {res.rhs:.6g})"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = sorted(columns)
    w.writerow(["step"] + names)
    for k in range(len(columns[names[0]])):
        w.writerow([k] + [f"{columns[c][k]:.10g}" for c in names])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        sys.stdout.write(line + "\n")
    elif args.format == "json":
        sys.stdout.write(_dumps(summary))
    else:
        sys.stdout.write(buf.getvalue())
        sys.stderr.write(line + "\n")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarm-planner", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="solve the averaging strategy for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--policy", choices=("all", "relaxed", "exhaustive"), default="all")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate training and compare averaging strategies")
    p.add_argument("--scenario", required=True)
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="per-step CSV; the JSON summary then goes to stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("groups", help="optimal group size over an (n, p) grid")
    p.add_argument("--n-range", required=True, help="a:b, inclusive")
    p.add_argument("--p-range", required=True, help="lo:hi:step")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_groups)

    p = sub.add_parser("sgd", help="varying-batch SGD experiments on a quadratic")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sgd)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SWARM_PLANNER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "hours", 1.0) <= 0:
        sys.stderr.write("error: --hours must be positive\n")
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except strategy.NoComputingPeers:
        sys.stderr.write("error: no computing peers\n")
        return EXIT_DOMAIN
    except (strategy.InvalidSpec, strategy.LpInfeasible) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DOMAIN
    except netsim.TrainingStalled as exc:
        sys.stderr.write(f"training stalled: {exc}\n")
        return EXIT_STALL


if __name__ == "__main__":
    sys.exit(main())
