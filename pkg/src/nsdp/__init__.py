"""Distributed placement and routing of service chains over a cloud network.

The library builds the cloud-augmented graph for a network, a set of service
chains and their demands, then solves it with the queue-based QNSD algorithm,
its integer-constrained variant C-QNSD, or the exact LP and brute-force
integer oracles.
"""

from nsdp.cqnsd import run_cqnsd
from nsdp.harness import Scenario, ScenarioError, build_bundled, emit_solution, emit_trace, load_scenario
from nsdp.model import (
    AugmentedGraph,
    CloudNetwork,
    CommodityId,
    Demand,
    FunctionSpec,
    LinkSpec,
    ModelError,
    NodeSpec,
    ServiceSpec,
    build_augmented_graph,
)
from nsdp.oracle import FeasibilityReport, FlowSolution, check_solution, solve_fractional_lp, solve_integer_bruteforce
from nsdp.qnsd import QnsdParams, Solution, Trace, run_qnsd

__all__ = [
    "AugmentedGraph",
    "CloudNetwork",
    "CommodityId",
    "Demand",
    "FeasibilityReport",
    "FlowSolution",
    "FunctionSpec",
    "LinkSpec",
    "ModelError",
    "NodeSpec",
    "QnsdParams",
    "Scenario",
    "ScenarioError",
    "ServiceSpec",
    "Solution",
    "Trace",
    "build_augmented_graph",
    "build_bundled",
    "check_solution",
    "emit_solution",
    "emit_trace",
    "load_scenario",
    "run_cqnsd",
    "run_qnsd",
    "solve_fractional_lp",
    "solve_integer_bruteforce",
]
