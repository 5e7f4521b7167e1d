"""Scenario files, bundled experiments and run artifacts.

Scenario files are YAML documents whose keys mirror the model types::

    name: two-node
    network:
      nodes:
        - {id: 1, cloud_unit_cost: 1, cloud_capacity: 10}
      links:
        - {from: 1, to: 2, net_unit_cost: 1, net_capacity: 10, transport_req: 1}
    services:
      - id: 1
        functions:
          - {proc_req: {1: 1, 2: 1}, flow_scaling: 1}
    demands:
      - {destination: 2, service: 1, sources: {1: 1}}
    defaults: {V: 20, theta: 0.0, max_iters: 5000, trace_every: 10}

``availability`` is optional and defaults to the nodes listed in ``proc_req``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .model import (
    AugmentedGraph,
    CloudNetwork,
    Demand,
    FunctionSpec,
    LinkSpec,
    ModelError,
    NodeSpec,
    ServiceSpec,
    build_augmented_graph,
)
from .qnsd import QnsdParams, Solution, Trace

__all__ = [
    "BUNDLED",
    "Scenario",
    "ScenarioError",
    "bundled_path",
    "dump_scenario",
    "emit_solution",
    "emit_trace",
    "format_number",
    "load_scenario",
    "parse_scenario",
    "processing_allocation",
    "scenario_to_dict",
]

BUNDLED = ("abilene-fractional", "abilene-integer", "abilene-integer-half", "two-node")

TRACE_HEADER = "iteration,frame,cost_avg,max_violation"


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate."""


@dataclass(frozen=True)
class Scenario:
    name: str
    network: CloudNetwork
    services: tuple[ServiceSpec, ...]
    demands: tuple[Demand, ...]
    defaults: QnsdParams
    description: str = ""

    def graph(self) -> AugmentedGraph:
        return build_augmented_graph(self.network, self.services, self.demands)


def _num(x: float) -> int | float:
    return int(x) if float(x).is_integer() else float(x)


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    d = sc.defaults
    return {
        "name": sc.name,
        "description": sc.description,
        "network": {
            "nodes": [
                {"id": nd.id, "cloud_unit_cost": _num(nd.cloud_unit_cost), "cloud_capacity": int(nd.cloud_capacity)}
                for nd in sc.network.nodes
            ],
            "links": [
                {
                    "from": ln.source,
                    "to": ln.target,
                    "net_unit_cost": _num(ln.net_unit_cost),
                    "net_capacity": int(ln.net_capacity),
                    "transport_req": _num(ln.transport_req),
                }
                for ln in sc.network.links
            ],
        },
        "services": [
            {
                "id": svc.id,
                "functions": [
                    {
                        "proc_req": {u: _num(r) for u, r in sorted(fn.proc_req.items())},
                        "availability": sorted(fn.availability),
                        "flow_scaling": _num(fn.flow_scaling),
                    }
                    for fn in svc.functions
                ],
            }
            for svc in sc.services
        ],
        "demands": [
            {
                "destination": dem.destination,
                "service": dem.service,
                "sources": {s: _num(v) for s, v in sorted(dem.sources.items())},
            }
            for dem in sc.demands
        ],
        "defaults": {
            "V": _num(d.V),
            "theta": _num(d.theta),
            "max_iters": d.max_iters,
            "trace_every": d.trace_every,
        },
    }


def dump_scenario(sc: Scenario, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None, width=100)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _field(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(obj).__name__}")
    if key not in obj:
        raise ScenarioError(f"{where}: missing field '{key}'")
    return obj[key]


def parse_scenario(data: Any, origin: str = "<scenario>") -> Scenario:
    """Build a validated :class:`Scenario` from parsed YAML/JSON data."""
    try:
        net = _field(data, "network", origin)
        nodes = [
            NodeSpec(
                int(_field(nd, "id", f"{origin}: network.nodes[{i}]")),
                float(_field(nd, "cloud_unit_cost", f"{origin}: network.nodes[{i}]")),
                int(_field(nd, "cloud_capacity", f"{origin}: network.nodes[{i}]")),
            )
            for i, nd in enumerate(_field(net, "nodes", f"{origin}: network"))
        ]
        links = []
        for i, ln in enumerate(_field(net, "links", f"{origin}: network") or []):
            where = f"{origin}: network.links[{i}]"
            links.append(
                LinkSpec(
                    int(_field(ln, "from", where)),
                    int(_field(ln, "to", where)),
                    float(_field(ln, "net_unit_cost", where)),
                    int(_field(ln, "net_capacity", where)),
                    float(ln.get("transport_req", 1.0)),
                )
            )
        network = CloudNetwork(nodes, links)
        services = []
        for i, svc in enumerate(_field(data, "services", origin) or []):
            where = f"{origin}: services[{i}]"
            fns = []
            for j, fn in enumerate(_field(svc, "functions", where)):
                fwhere = f"{where}.functions[{j}]"
                req = _field(fn, "proc_req", fwhere)
                avail = fn.get("availability")
                if not isinstance(req, dict):
                    nodes_for = avail if avail is not None else list(network.node_ids)
                    req = {u: req for u in nodes_for}
                fns.append(
                    FunctionSpec(
                        {int(u): float(r) for u, r in req.items()},
                        None if avail is None else frozenset(int(u) for u in avail),
                        float(fn.get("flow_scaling", 1.0)),
                    )
                )
            services.append(ServiceSpec(int(_field(svc, "id", where)), fns))
        demands = []
        for i, dem in enumerate(_field(data, "demands", origin) or []):
            where = f"{origin}: demands[{i}]"
            demands.append(
                Demand(
                    int(_field(dem, "destination", where)),
                    int(_field(dem, "service", where)),
                    {int(s): float(v) for s, v in _field(dem, "sources", where).items()},
                )
            )
        dflt = data.get("defaults") or {}
        defaults = QnsdParams(
            V=float(dflt.get("V", 40.0)),
            theta=float(dflt.get("theta", 0.0)),
            max_iters=int(dflt.get("max_iters", 10000)),
            trace_every=int(dflt.get("trace_every", 10)),
        )
        sc = Scenario(
            str(data.get("name", Path(origin).stem)),
            network,
            tuple(services),
            tuple(demands),
            defaults,
            str(data.get("description", "") or ""),
        )
        sc.graph()  # runs the cross-reference validation
        return sc
    except ScenarioError:
        raise
    except (ModelError, ValueError, TypeError, AttributeError) as exc:
        raise ScenarioError(f"{origin}: {exc}") from exc


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ScenarioError(f"unknown bundled scenario '{name}' (have: {', '.join(BUNDLED)})")
    return Path(str(resources.files("nsdp") / "scenarios" / f"{name}.yaml"))


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name.

    Raises:
        ScenarioError: unreadable file, YAML syntax error (with line and
            column), missing field, or a violated model invariant.
    """
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{p}: parse error{at}: {getattr(exc, 'problem', exc)}") from exc
    return parse_scenario(data, str(p))


def format_number(x: float) -> str:
    """Plain decimal notation with 9 significant digits."""
    if x == 0:
        return "0"
    return np.format_float_positional(float(x), precision=9, unique=False, fractional=False, trim="-")


def emit_trace(trace: Trace, path: str | Path) -> None:
    lines = [TRACE_HEADER]
    for row in trace.rows:
        lines.append(
            f"{row.iteration},{row.frame},{format_number(row.cost_avg)},{format_number(row.max_violation)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> Trace:
    from .qnsd import TraceRow

    rows = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ScenarioError(f"{path}: not a trace file")
    for line in lines[1:]:
        it, fr, cost, viol = line.split(",")
        rows.append(TraceRow(int(it), int(fr), float(cost), float(viol)))
    return Trace(rows)


def processing_allocation(graph: AugmentedGraph, flows: np.ndarray) -> dict[int, dict[str, float]]:
    """Cloud resource units per node and function ``"(phi,i)"`` implied by ``flows``."""
    out: dict[int, dict[str, float]] = {}
    req = np.where(graph.admissible, graph.req_matrix, 0.0)
    for u in graph.network.node_ids:
        e = graph.compute_in(u)
        row: dict[str, float] = {}
        for k, c in enumerate(graph.commodities):
            units = float(flows[e, k] * req[e, k])
            if units > 1e-12:
                key = f"({c.service},{c.stage + 1})"
                row[key] = row.get(key, 0.0) + units
        if row:
            out[u] = row
    return out


def _flow_entries(graph: AugmentedGraph, flows: np.ndarray) -> list[dict[str, Any]]:
    out = []
    for e, k in zip(*np.nonzero(np.abs(flows) > 1e-12)):
        edge = graph.edges[int(e)]
        c = graph.commodities[int(k)]
        out.append(
            {
                "edge": edge.label(),
                "kind": edge.kind.value,
                "commodity": [c.destination, c.service, c.stage],
                "flow": float(flows[e, k]),
            }
        )
    return out


def _resource_entries(graph: AugmentedGraph, y: np.ndarray) -> list[dict[str, Any]]:
    return [
        {"edge": graph.edges[int(e)].label(), "kind": graph.edges[int(e)].kind.value, "units": float(y[e])}
        for e in np.flatnonzero(np.abs(y) > 1e-12)
    ]


def solution_to_dict(graph: AugmentedGraph, solution: Solution, algo: str, scenario: str) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "scenario": scenario,
        "algorithm": algo,
        "cost": solution.cost,
        "max_violation": solution.max_violation,
        "iterations_used": solution.iterations_used,
        "converged": solution.converged,
        "avg_flows": _flow_entries(graph, solution.avg_flows),
        "avg_resources": _resource_entries(graph, solution.avg_resources),
        "processing_allocation": {
            str(u): row for u, row in processing_allocation(graph, solution.avg_flows).items()
        },
    }
    if solution.integer_resources is not None:
        doc["integer"] = {
            "cost": solution.integer_cost,
            "feasible": solution.integer_feasible,
            "resources": _resource_entries(graph, solution.integer_resources),
            "flows": _flow_entries(graph, solution.integer_flows),
            "processing_allocation": {
                str(u): row for u, row in processing_allocation(graph, solution.integer_flows).items()
            },
        }
    return doc


def emit_solution(graph: AugmentedGraph, solution: Solution, path: str | Path, algo: str = "", scenario: str = "") -> None:
    """Write the solution as an indented JSON document."""
    doc = solution_to_dict(graph, solution, algo, scenario)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# Bundled Abilene topology.  Node numbering is reconstructed: west coast
# 1-2-4, center 5-6, east coast 7-10-11 (see scenarios/abilene-topology.yaml).
ABILENE_CITIES = {
    1: "Seattle",
    2: "Sunnyvale",
    3: "Denver",
    4: "Los Angeles",
    5: "Houston",
    6: "Kansas City",
    7: "Atlanta",
    8: "Indianapolis",
    9: "Chicago",
    10: "Washington",
    11: "New York",
}
ABILENE_EDGES = (
    (1, 2), (1, 3), (2, 3), (2, 4), (3, 6), (4, 5), (5, 6),
    (5, 7), (6, 8), (7, 8), (7, 10), (8, 9), (9, 11), (10, 11),
)


def abilene_network(cloud_cost_cheap: float = 1.0, cloud_cost: float = 3.0) -> CloudNetwork:
    nodes = [NodeSpec(u, cloud_cost_cheap if u in (5, 6) else cloud_cost, 10) for u in range(1, 12)]
    links = []
    for a, b in ABILENE_EDGES:
        links.append(LinkSpec(a, b, 1.0, 10, 1.0))
        links.append(LinkSpec(b, a, 1.0, 10, 1.0))
    return CloudNetwork(nodes, links)


def build_bundled(name: str) -> Scenario:
    """Construct a bundled scenario in code (the YAML fixtures are generated from this)."""
    every = range(1, 12)
    if name == "abilene-fractional":
        services = (
            ServiceSpec(1, [FunctionSpec.uniform(1.0, every), FunctionSpec.uniform(3.0, every)]),
            ServiceSpec(2, [FunctionSpec.uniform(2.0, every), FunctionSpec.uniform(2.0, every)]),
        )
        west, east = (1, 2, 4), (7, 10, 11)
        demands = tuple(
            [Demand(d, 2, {s: 1.0 for s in east}) for d in west]
            + [Demand(d, 1, {s: 1.0 for s in west}) for d in east]
        )
        return Scenario(
            name, abilene_network(), services, tuple(sorted(demands, key=lambda d: d.destination)),
            QnsdParams(V=300.0, theta=0.9, max_iters=15000, trace_every=10),
            "Abilene, 2 services x 2 functions, 6 clients, 18 unit-rate source-destination pairs "
            "(node numbering reconstructed).",
        )
    if name in ("abilene-integer", "abilene-integer-half"):
        rate = 1.0 if name == "abilene-integer" else 0.5
        services = (ServiceSpec(1, [FunctionSpec.uniform(1.0, every)]),)
        demands = (Demand(7, 1, {2: rate}), Demand(11, 1, {1: rate}))
        V = 1000.0 if rate == 1.0 else 100.0
        return Scenario(
            name, abilene_network(), services, demands,
            QnsdParams(V=V, theta=0.9, max_iters=20000, trace_every=10),
            f"Abilene, one single-function service, s-d pairs (1,11) and (2,7) at rate {rate} "
            "(node numbering reconstructed).",
        )
    if name == "two-node":
        network = CloudNetwork(
            [NodeSpec(1, 1.0, 10), NodeSpec(2, 3.0, 10)],
            [LinkSpec(1, 2, 1.0, 10, 1.0), LinkSpec(2, 1, 1.0, 10, 1.0)],
        )
        services = (ServiceSpec(1, [FunctionSpec.uniform(1.0, (1, 2))]),)
        demands = (Demand(2, 1, {1: 1.0}),)
        return Scenario(
            name, network, services, demands,
            QnsdParams(V=20.0, theta=0.0, max_iters=16383, trace_every=10),
            "Two nodes, one single-function service, unit demand from 1 to 2.",
        )
    raise ScenarioError(f"unknown bundled scenario '{name}'")


def write_bundled(directory: str | Path) -> list[Path]:
    out = []
    for name in BUNDLED:
        p = Path(directory) / f"{name}.yaml"
        dump_scenario(build_bundled(name), p)
        out.append(p)
    return out


def scenario_from_parts(
    name: str,
    network: CloudNetwork,
    services: Sequence[ServiceSpec],
    demands: Sequence[Demand],
    defaults: QnsdParams | None = None,
) -> Scenario:
    return Scenario(name, network, tuple(services), tuple(demands), defaults or QnsdParams(V=40.0))
