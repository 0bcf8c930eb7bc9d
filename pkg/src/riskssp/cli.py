"""Command line driver: build, certify, solve, evaluate, report.

Subcommands
    run         grid-world experiment sweep over risk measures
    solve       solve an MDP JSON file under one risk measure
    certify     check goal reachability assumptions for an MDP file
    bruteforce  nested-risk outcome-tree evaluation for small instances

Exit codes: 0 all solves converged; 1 bad input (flag parsing, config,
schema, validation, certification); 2 some solve did not converge
(divergence tripwire or iteration cap).  RISKSSP_THREADS caps the
number of concurrent solves in `run`; outputs never depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RiskSspError, ValidationError
from .gridworld import GridWorldSpec, build_gridworld, generate_gridworld_spec
from .mdp import goal_avoidance_fixpoint, load_mdp, properness_certificate
from .montecarlo import robustness_eval
from .rng import derive_seed
from .solver import (DEFAULT_MAX_ITER, DEFAULT_TOL, Policy, SolveStatus,
                     nested_risk_bruteforce, solver_certificate,
                     value_iteration)
from .risk import RiskSpec

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2

CSV_COLUMNS = ("grid", "risk", "eps", "J_start", "solve_time_s",
               "n_uncertain_obstacles", "failure_rate", "status")


@dataclass
class ExperimentConfig:
    rows: int
    cols: int
    risks: list
    slip: float = 0.1
    seed: int = 0
    runs: int = 100
    out_dir: str = "results"
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    perturb_prob: float = 0.2
    horizon: int | None = None
    n_obstacles: int | None = None
    n_uncertain: int | None = None
    obstacle_cost: float = 5.0
    step_cost: float = 1.0
    cost_mode: str = "fuel"
    threads: int | None = None

    def __post_init__(self):
        if not self.risks:
            raise ValueError("at least one --risk is required")

    @property
    def grid_label(self) -> str:
        return f"{self.rows}x{self.cols}"


def _parse_grid(text: str):
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ValueError(f"bad grid {text!r}, expected MxN like 4x5") from None


def config_from_args(args) -> ExperimentConfig:
    """Merge an optional JSON config file with flags; flags win."""
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    def pick(flag, key, default):
        if flag is not None:
            return flag
        return doc.get(key, default)

    grid = args.grid or doc.get("grid")
    if grid is None:
        raise ValueError("grid size required (--grid MxN)")
    rows, cols = _parse_grid(grid) if isinstance(grid, str) else grid

    risk_texts = args.risk if args.risk else doc.get("risks", [])
    risks = [RiskSpec.parse(t) for t in risk_texts]

    return ExperimentConfig(
        rows=rows, cols=cols, risks=risks,
        slip=pick(args.slip, "slip", 0.1),
        seed=pick(args.seed, "seed", 0),
        runs=pick(args.runs, "runs", 100),
        out_dir=pick(args.out, "out", "results"),
        tol=pick(args.tol, "tol", DEFAULT_TOL),
        max_iter=pick(args.max_iter, "max_iter", DEFAULT_MAX_ITER),
        perturb_prob=pick(args.perturb_prob, "perturb_prob", 0.2),
        horizon=pick(args.horizon, "horizon", None),
        n_obstacles=pick(args.obstacles, "n_obstacles", None),
        n_uncertain=pick(args.uncertain, "n_uncertain", None),
        obstacle_cost=pick(args.obstacle_cost, "obstacle_cost", 5.0),
        step_cost=pick(args.step_cost, "step_cost", 1.0),
        cost_mode=pick(args.cost_mode, "cost_mode", "fuel"),
        threads=pick(args.threads, "threads", None),
    )


def _thread_count(config: ExperimentConfig, n_jobs: int) -> int:
    env = os.environ.get("RISKSSP_THREADS")
    cap = config.threads if config.threads is not None else \
        (int(env) if env else n_jobs)
    return max(1, min(cap, n_jobs))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, stdout=None) -> int:
    """Solve the configured grid under each risk spec, evaluate map
    robustness with the solved policies, and emit one CSV plus one JSON
    report per risk.  Returns the process exit code."""
    out = stdout or sys.stdout
    spec = generate_gridworld_spec(
        config.rows, config.cols, config.seed,
        n_obstacles=config.n_obstacles, n_uncertain=config.n_uncertain,
        slip=config.slip, obstacle_cost=config.obstacle_cost,
        step_cost=config.step_cost, cost_mode=config.cost_mode)
    mdp = build_gridworld(spec)

    def solve_one(item):
        idx, risk = item
        report = value_iteration(mdp, risk, tol=config.tol,
                                 max_iter=config.max_iter)
        robustness = None
        if report.status is SolveStatus.CONVERGED:
            robustness = robustness_eval(
                spec, report.policy, config.runs, config.perturb_prob,
                derive_seed(config.seed, 1 + idx), horizon=config.horizon)
        return report, robustness

    jobs = list(enumerate(config.risks))
    workers = _thread_count(config, len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve_one, jobs))
    else:
        results = [solve_one(job) for job in jobs]

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for risk, (report, robustness) in zip(config.risks, results):
        j_start = report.J.values[spec.start_state]
        rows.append({
            "grid": config.grid_label,
            "risk": risk.kind.value,
            "eps": "" if risk.kind.value == "expectation" else repr(risk.epsilon),
            "J_start": repr(j_start),
            "solve_time_s": repr(report.wall_time),
            "n_uncertain_obstacles": len(spec.uncertain_obstacles),
            "failure_rate": "" if robustness is None else repr(robustness.failure_rate),
            "status": report.status.value,
        })
        doc = {
            "grid": config.grid_label,
            "risk": risk.label,
            "spec": spec.to_json_dict(),
            "solve": report.to_json_dict(),
            "robustness": None if robustness is None else robustness.to_json_dict(),
        }
        _write_json(out_dir / f"report_{risk.file_label}.json", doc)

    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    print(f"{'grid':>7} {'risk':>14} {'J*(s0)':>12} {'time[s]':>9} "
          f"{'#u.o.':>5} {'f.r.':>7} {'status':>20}", file=out)
    for risk, (report, robustness) in zip(config.risks, results):
        j_start = report.J.values[spec.start_state]
        fr = "-" if robustness is None else f"{robustness.failure_rate:.1%}"
        print(f"{config.grid_label:>7} {risk.label:>14} {j_start:>12.4f} "
              f"{report.wall_time:>9.3f} {len(spec.uncertain_obstacles):>5} "
              f"{fr:>7} {report.status.value:>20}", file=out)
    print(f"wrote {csv_path}", file=out)

    if any(report.status is not SolveStatus.CONVERGED for report, _ in results):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def solve_file(mdp_path, risk: RiskSpec, out_path=None,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               stdout=None) -> int:
    out = stdout or sys.stdout
    mdp = load_mdp(mdp_path)
    report = value_iteration(mdp, risk, tol=tol, max_iter=max_iter)
    doc = {"risk": risk.label, "solve": report.to_json_dict()}
    if out_path:
        _write_json(Path(out_path), doc)
        print(f"wrote {out_path}", file=out)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    print(f"status: {report.status.value}  residual: {report.residual:.3e}  "
          f"iterations: {report.iterations}", file=out)
    return EXIT_OK if report.status is SolveStatus.CONVERGED else EXIT_NOT_CONVERGED


def certify_file(mdp_path, stdout=None) -> int:
    out = stdout or sys.stdout
    mdp = load_mdp(mdp_path)
    avoid = goal_avoidance_fixpoint(mdp)
    if avoid:
        print("certification failed: the goal can be avoided surely from "
              f"{sorted(avoid)}", file=out)
        try:
            cert = solver_certificate(mdp)
            print(f"best-policy reachability fallback: tau={cert.tau} "
                  f"p={cert.p:.6g} bound={cert.upper_bound:.6g}", file=out)
        except RiskSspError as e:
            print(str(e), file=out)
        return EXIT_INPUT_ERROR
    cert = properness_certificate(mdp)
    print(f"certified: tau={cert.tau} p={cert.p:.6g} c_bar={cert.c_bar:.6g} "
          f"upper_bound={cert.upper_bound:.6g}", file=out)
    return EXIT_OK


def bruteforce_file(mdp_path, risk: RiskSpec, horizon: int,
                    policy_path=None, stdout=None) -> int:
    out = stdout or sys.stdout
    mdp = load_mdp(mdp_path)
    if policy_path:
        with open(policy_path) as fh:
            choice = json.load(fh)
        policy = Policy({s: a for s, a in choice.items()})
    else:
        first = mdp.actions[0]
        policy = Policy({name: first for i, name in enumerate(mdp.states)
                         if i != mdp.goal})
    values = nested_risk_bruteforce(mdp, risk, policy, horizon)
    print(json.dumps({"horizon": horizon, "risk": risk.label,
                      "values": values.values}, indent=2, sort_keys=True),
          file=out)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; input errors must exit 1 here."""

    def error(self, message):
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskssp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="grid-world experiment sweep")
    run.add_argument("--grid", help="grid size MxN, e.g. 4x5")
    run.add_argument("--risk", action="append",
                     help="risk measure, e.g. expectation, cvar:0.3, evar:0.7 "
                          "(repeatable)")
    run.add_argument("--slip", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--out")
    run.add_argument("--tol", type=float)
    run.add_argument("--max-iter", dest="max_iter", type=int)
    run.add_argument("--perturb-prob", dest="perturb_prob", type=float)
    run.add_argument("--horizon", type=int)
    run.add_argument("--obstacles", type=int)
    run.add_argument("--uncertain", type=int)
    run.add_argument("--obstacle-cost", dest="obstacle_cost", type=float)
    run.add_argument("--step-cost", dest="step_cost", type=float)
    run.add_argument("--cost-mode", dest="cost_mode",
                     choices=("fuel", "min_time"))
    run.add_argument("--threads", type=int)
    run.add_argument("--config", help="JSON config file; flags take precedence")

    solve = sub.add_parser("solve", help="solve an MDP JSON file")
    solve.add_argument("mdp", help="path to MDP JSON")
    solve.add_argument("--risk", required=True)
    solve.add_argument("--out")
    solve.add_argument("--tol", type=float, default=DEFAULT_TOL)
    solve.add_argument("--max-iter", dest="max_iter", type=int,
                       default=DEFAULT_MAX_ITER)

    certify = sub.add_parser("certify", help="certify goal reachability")
    certify.add_argument("mdp", help="path to MDP JSON")

    brute = sub.add_parser("bruteforce",
                           help="outcome-tree nested risk evaluation")
    brute.add_argument("mdp", help="path to MDP JSON")
    brute.add_argument("--risk", required=True)
    brute.add_argument("--horizon", type=int, required=True)
    brute.add_argument("--policy", help="JSON file mapping state to action")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "run":
            return run_experiment(config_from_args(args))
        if args.command == "solve":
            return solve_file(args.mdp, RiskSpec.parse(args.risk), args.out,
                              tol=args.tol, max_iter=args.max_iter)
        if args.command == "certify":
            return certify_file(args.mdp)
        if args.command == "bruteforce":
            return bruteforce_file(args.mdp, RiskSpec.parse(args.risk),
                                   args.horizon, args.policy)
        parser.error(f"unknown command {args.command!r}")
    except ValidationError as e:
        for violation in e.violations:
            print(f"error: {violation}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (RiskSspError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
