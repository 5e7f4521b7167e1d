"""Command-line driver: ``nsdp --scenario NAME|PATH --algo {qnsd,cqnsd,lp,ilp} ...``.

Exit status is 0 when the run converged (or the oracle found an optimum),
2 when it did not, and 1 on any input error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .cqnsd import run_cqnsd
from .harness import ScenarioError, emit_solution, emit_trace, load_scenario
from .oracle import InstanceTooLarge, check_solution, solve_fractional_lp, solve_integer_bruteforce
from .qnsd import QnsdParams, Solution, Trace, run_qnsd

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nsdp", description="Solve a cloud-network service distribution scenario.")
    p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    p.add_argument("--algo", choices=("qnsd", "cqnsd", "lp", "ilp"), default="qnsd")
    p.add_argument("--V", type=float, help="cost/backlog tradeoff (scenario default if omitted)")
    p.add_argument("--theta", type=float, help="momentum in [0,1)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float, help="conservation tolerance for declaring convergence")
    p.add_argument("--trace", type=Path, help="trace CSV path (default <scenario>.<algo>.trace.csv)")
    p.add_argument("--solution", type=Path, help="solution JSON path (default <scenario>.<algo>.solution.json)")
    p.add_argument("--trace-every", type=int, help="trace stride (default 10)")
    p.add_argument("--full-trace", action="store_true", help="trace every iteration")
    p.add_argument("--no-truncation", action="store_true", help="average from t=1 without frame restarts")
    p.add_argument("--figures", type=Path, metavar="DIR", help="also render PNG figures into DIR")
    return p


def _params(args: argparse.Namespace, defaults: QnsdParams) -> QnsdParams:
    if args.full_trace and args.trace_every is not None:
        raise _UsageError("--full-trace and --trace-every are mutually exclusive")
    changes = {}
    for flag, field_name in (("V", "V"), ("theta", "theta"), ("max_iters", "max_iters"), ("tol", "tol")):
        value = getattr(args, flag)
        if value is not None:
            changes[field_name] = value
    if args.full_trace:
        changes["trace_every"] = 1
    elif args.trace_every is not None:
        changes["trace_every"] = args.trace_every
    if args.no_truncation:
        changes["truncate"] = False
    try:
        return replace(defaults, **changes)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc


def _oracle_solution(graph, algo: str, args) -> tuple[Solution | None, str]:
    if algo == "lp":
        res = solve_fractional_lp(graph)
    else:
        res = solve_integer_bruteforce(graph, method="prune")
    if not res.ok:
        return None, res.status
    report = check_solution(graph, None, None, res)
    sol = Solution(
        avg_flows=res.flows,
        avg_resources=res.resources,
        cost=res.cost,
        max_violation=max(0.0, report.max_conservation_violation),
        iterations_used=0,
        converged=True,
        frame=0,
    )
    if algo == "ilp":
        sol.integer_flows, sol.integer_resources, sol.integer_cost = res.flows, res.resources, res.cost
        sol.integer_report, sol.integer_feasible = report, report.feasible() and report.integer_ok
    return sol, res.status


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run, write artifacts and return the exit status."""
    try:
        args = build_parser().parse_args(argv)
        scenario = load_scenario(args.scenario)
        params = _params(args, scenario.defaults)
    except (_UsageError, ScenarioError) as exc:
        print(f"nsdp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    graph = scenario.graph()
    stem = f"{scenario.name}.{args.algo}"
    trace_path = args.trace or Path(f"{stem}.trace.csv")
    solution_path = args.solution or Path(f"{stem}.solution.json")
    trace = Trace()

    if args.algo in ("lp", "ilp"):
        try:
            sol, status = _oracle_solution(graph, args.algo, args)
        except InstanceTooLarge as exc:
            print(f"nsdp: error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        if sol is None:
            print(f"{args.algo}: {status}")
            return EXIT_NOT_CONVERGED
        print(f"{args.algo}: optimum {sol.cost:.9g}")
    else:
        runner = run_qnsd if args.algo == "qnsd" else run_cqnsd
        sol, trace = runner(graph, params=params)
        line = (
            f"{args.algo}: iterations {sol.iterations_used}, cost {sol.cost:.9g}, "
            f"max violation {sol.max_violation:.3g}, converged {sol.converged}"
        )
        if sol.integer_resources is not None:
            line += f", integer cost {sol.integer_cost:.9g} (feasible {sol.integer_feasible})"
        print(line)

    try:
        emit_trace(trace, trace_path)
        emit_solution(graph, sol, solution_path, args.algo, scenario.name)
        if args.figures is not None:
            _figures(args.figures, stem, graph, sol, trace)
    except OSError as exc:
        print(f"nsdp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _figures(directory: Path, stem: str, graph, sol: Solution, trace: Trace) -> None:
    from .harness import processing_allocation
    from .plotting import plot_allocation, plot_trace

    directory.mkdir(parents=True, exist_ok=True)
    nodes = list(graph.network.node_ids)
    if trace.rows:
        plot_trace(trace, directory / f"{stem}.trace.png")
    plot_allocation(processing_allocation(graph, sol.avg_flows), nodes,
                    directory / f"{stem}.allocation.png", "averaged processing allocation")
    if sol.integer_flows is not None:
        plot_allocation(processing_allocation(graph, sol.integer_flows), nodes,
                        directory / f"{stem}.integer-allocation.png", "integer processing allocation")


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
