"""Independent verification: feasibility checks, cost, exact LP and integer search.

Nothing here depends on the iterative solvers.  The LP is assembled directly
from the augmented graph and handed to :func:`nsdp.simplex.solve_lp`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .model import AugmentedGraph, CommodityId, Demand, EdgeKind
from .simplex import INFEASIBLE, OPTIMAL, solve_lp

__all__ = [
    "FeasibilityReport",
    "FlowSolution",
    "InstanceTooLarge",
    "check_solution",
    "evaluate_cost",
    "mirror_compute_out",
    "solve_fractional_lp",
    "solve_integer_bruteforce",
]

EXACT_TOL = 1e-9


class InstanceTooLarge(RuntimeError):
    """The integer search space exceeds the configured bound."""


class HasFlows(Protocol):
    flows: np.ndarray
    resources: np.ndarray


@dataclass
class FlowSolution:
    """Flows (edges x commodities) and resources (edges) with a solver status."""

    status: str
    cost: float | None
    flows: np.ndarray | None
    resources: np.ndarray | None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class FeasibilityReport:
    max_conservation_violation: float
    max_abs_conservation_violation: float
    chaining_ok: bool
    capacity_ok: bool
    source_ok: bool
    sink_ok: bool
    admissible_ok: bool
    nonnegative_ok: bool
    integer_ok: bool
    worst: dict[str, str] = field(default_factory=dict)

    def feasible(self, conservation_tol: float = EXACT_TOL, *, two_sided: bool = True) -> bool:
        """All constructive checks pass and conservation is within ``conservation_tol``.

        With ``two_sided`` the absolute imbalance is bounded; otherwise only the
        surplus (inflow exceeding outflow) is.
        """
        cons = self.max_abs_conservation_violation if two_sided else self.max_conservation_violation
        return (
            self.chaining_ok
            and self.capacity_ok
            and self.source_ok
            and self.sink_ok
            and self.admissible_ok
            and self.nonnegative_ok
            and cons <= conservation_tol
        )


def evaluate_cost(graph: AugmentedGraph, resources: np.ndarray) -> float:
    """Total resource cost ``sum_e w_e y_e``."""
    return float(graph.unit_cost @ np.asarray(resources, dtype=float))


def mirror_compute_out(graph: AugmentedGraph, resources: np.ndarray) -> np.ndarray:
    """Copy compute-in allocations onto the free compute-out edges, clipped to their capacity."""
    out = resources.copy()
    out[graph.cout_edges] = np.minimum(resources[graph.cin_edges], graph.capacity[graph.cout_edges])
    return out


def _conservation(graph: AugmentedGraph, flows: np.ndarray) -> np.ndarray:
    return graph.in_inc @ flows - graph.out_inc @ flows


def _label(graph: AugmentedGraph, u: int, k: int) -> str:
    c = graph.commodities[k]
    return f"node {u + 1}, commodity ({c.destination},{c.service},{c.stage})"


def check_solution(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None,
    demands: Sequence[Demand] | None,
    solution: HasFlows,
    tol: float = EXACT_TOL,
) -> FeasibilityReport:
    """Evaluate every NSDP constraint on ``solution``.

    Constructive constraints (chaining, capacity, source, sink, admissibility,
    sign) are checked at ``tol``.  Flow conservation at physical nodes is
    reported numerically: the surplus ``inflow - outflow`` per (node,
    commodity), maximised.
    """
    if commodities is not None and list(commodities) != graph.commodities:
        raise ValueError("commodity list does not match the graph")
    f = np.asarray(solution.flows, dtype=float)
    y = np.asarray(solution.resources, dtype=float)
    E, K = graph.n_edges, graph.n_commodities
    if f.shape != (E, K) or y.shape != (E,):
        raise ValueError(f"expected flows {(E, K)} and resources {(E,)}, got {f.shape} and {y.shape}")
    worst: dict[str, str] = {}

    surplus = _conservation(graph, f)
    if surplus.size:
        u, k = np.unravel_index(np.argmax(surplus), surplus.shape)
        max_surplus = float(surplus[u, k])
        ua, ka = np.unravel_index(np.argmax(np.abs(surplus)), surplus.shape)
        max_abs = float(abs(surplus[ua, ka]))
        worst["conservation"] = _label(graph, int(ua), int(ka))
    else:
        max_surplus = max_abs = 0.0

    # chaining: f_{p(u),u}^{c+1} = xi * f_{u,p(u)}^{c}; nothing else leaves p(u)
    expected_out = np.zeros((graph.n, K))
    fin = f[graph.cin_edges]
    has_succ = graph.succ_index >= 0
    expected_out[:, graph.succ_index[has_succ]] = fin[:, has_succ] * graph.scaling[graph.succ_index[has_succ]]
    chain_err = np.abs(f[graph.cout_edges] - expected_out)
    chaining_ok = bool(chain_err.max(initial=0.0) <= tol)
    if not chaining_ok:
        u, k = np.unravel_index(np.argmax(chain_err), chain_err.shape)
        worst["chaining"] = _label(graph, int(u), int(k))

    req = np.where(graph.admissible, graph.req_matrix, 0.0)
    load = (f * req).sum(axis=1)
    cap_err = np.maximum(load - y, y - graph.capacity)
    capacity_ok = bool(cap_err.max(initial=-np.inf) <= tol)
    if not capacity_ok:
        worst["capacity"] = graph.edges[int(np.argmax(cap_err))].label()

    src_err = np.abs(f[graph.source_edges] - graph.injection[graph.source_edges])
    source_ok = bool(src_err.max(initial=0.0) <= tol)
    if not source_ok:
        u, k = np.unravel_index(np.argmax(src_err), src_err.shape)
        worst["source"] = _label(graph, int(u), int(k))

    bad_sink = np.abs(f[graph.sink_edges]) * ~graph.admissible[graph.sink_edges]
    sink_ok = bool(bad_sink.max(initial=0.0) <= tol)
    if not sink_ok:
        u, k = np.unravel_index(np.argmax(bad_sink), bad_sink.shape)
        worst["sink"] = _label(graph, int(u), int(k))

    bad_adm = np.abs(f) * ~graph.admissible
    admissible_ok = bool(bad_adm.max(initial=0.0) <= tol)
    if not admissible_ok:
        e, k = np.unravel_index(np.argmax(bad_adm), bad_adm.shape)
        worst["admissible"] = f"{graph.edges[int(e)].label()} {tuple(graph.commodities[int(k)])}"

    nonnegative_ok = bool(min(f.min(initial=0.0), y.min(initial=0.0)) >= -tol)
    # only the costly decisions must be integral; the compute-out mirror is
    # clipped to a capacity that may itself be fractional
    costly = np.concatenate([graph.network_edges, graph.cin_edges])
    integer_ok = bool(np.all(np.abs(y[costly] - np.round(y[costly])) <= tol))
    return FeasibilityReport(
        max_surplus, max_abs, chaining_ok, capacity_ok, source_ok, sink_ok,
        admissible_ok, nonnegative_ok, integer_ok, worst,
    )


class _FlowLP:
    """Column/row layout of the NSDP linear program on an augmented graph.

    Flow columns exist for admissible (edge, commodity) pairs on network,
    compute-in and sink edges; compute-out flows are substituted through the
    chaining constraint and source flows are constants.  One resource column
    per network/compute-in edge follows the flow columns.
    """

    def __init__(self, graph: AugmentedGraph):
        self.graph = graph
        kinds = graph.kind
        decision = np.isin(kinds, [EdgeKind.NETWORK.value, EdgeKind.COMPUTE_IN.value, EdgeKind.SINK.value])
        pairs = np.argwhere(graph.admissible & decision[:, None])
        self.pairs = pairs
        self.nf = len(pairs)
        self.y_edges = np.flatnonzero(np.isin(kinds, [EdgeKind.NETWORK.value, EdgeKind.COMPUTE_IN.value]))
        self.ny = len(self.y_edges)
        self.ncol = self.nf + self.ny
        n, K = graph.n, graph.n_commodities

        cons = np.zeros((n * K, self.ncol))
        node_of = {}
        for e in range(graph.n_edges):
            node_of[e] = (
                int(np.flatnonzero(graph.in_inc[:, e])[0]) if graph.in_inc[:, e].any() else None,
                int(np.flatnonzero(graph.out_inc[:, e])[0]) if graph.out_inc[:, e].any() else None,
            )
        cin_node = {int(e): u for u, e in enumerate(graph.cin_edges)}
        for col, (e, k) in enumerate(pairs):
            head, tail = node_of[int(e)]
            if head is not None:
                cons[head * K + k, col] += 1.0
            if tail is not None:
                cons[tail * K + k, col] -= 1.0
            if int(e) in cin_node:
                # processed output re-enters u as the successor commodity
                s = graph.succ_index[k]
                u = cin_node[int(e)]
                cons[u * K + s, col] += graph.scaling[s]
        rhs = -(graph.in_inc @ graph.injection).ravel()
        live = np.any(cons != 0, axis=1) | (rhs != 0)
        self.A_eq = cons[live]
        self.b_eq = rhs[live]

        load = np.zeros((self.ny, self.ncol))
        ypos = {int(e): j for j, e in enumerate(self.y_edges)}
        for col, (e, k) in enumerate(pairs):
            if int(e) in ypos:
                load[ypos[int(e)], col] = graph.req_matrix[e, k]
        for j in range(self.ny):
            load[j, self.nf + j] = -1.0
        self.load = load
        self.cost = np.zeros(self.ncol)
        self.cost[self.nf:] = graph.unit_cost[self.y_edges]

    def solve(self, lo: np.ndarray | None = None, hi: np.ndarray | None = None, objective: bool = True):
        """LP over flows with ``lo <= y <= hi`` on the resource columns."""
        hi = self.graph.capacity[self.y_edges] if hi is None else hi
        rows = [self.load]
        rhs = [np.zeros(self.ny)]
        eye = np.zeros((self.ny, self.ncol))
        eye[np.arange(self.ny), self.nf + np.arange(self.ny)] = 1.0
        rows.append(eye)
        rhs.append(hi)
        if lo is not None and np.any(lo > 0):
            sel = np.flatnonzero(lo > 0)
            rows.append(-eye[sel])
            rhs.append(-lo[sel])
        c = self.cost if objective else np.zeros(self.ncol)
        return solve_lp(c, np.vstack(rows), np.concatenate(rhs), self.A_eq, self.b_eq)

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.graph
        flows = g.injection.copy()
        flows[self.pairs[:, 0], self.pairs[:, 1]] = x[: self.nf]
        fin = flows[g.cin_edges]
        has = g.succ_index >= 0
        cout = np.zeros((g.n, g.n_commodities))
        cout[:, g.succ_index[has]] = fin[:, has] * g.scaling[g.succ_index[has]]
        flows[g.cout_edges] = cout
        req = np.where(g.admissible, g.req_matrix, 0.0)
        resources = np.zeros(g.n_edges)
        resources[self.y_edges] = (flows[self.y_edges] * req[self.y_edges]).sum(axis=1)
        return flows, mirror_compute_out(g, resources)


def solve_fractional_lp(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None = None,
    demands: Sequence[Demand] | None = None,
) -> FlowSolution:
    """Exact optimum of the fractional NSDP (integer resources relaxed)."""
    lp = _FlowLP(graph)
    res = lp.solve()
    if not res.ok:
        return FlowSolution(res.status, None, None, None)
    flows, resources = lp.unpack(res.x)
    return FlowSolution(OPTIMAL, evaluate_cost(graph, resources), flows, resources)


def _volume_bounds(graph: AugmentedGraph) -> np.ndarray:
    """Upper bound on the resource units any cycle-free optimal solution puts on each edge."""
    vol = np.zeros(graph.n_commodities)
    total_in = graph.injection.sum(axis=0)
    for k, c in enumerate(graph.commodities):
        vol[k] = total_in[k] if c.stage == 0 else vol[k - 1] * graph.scaling[k]
    req = np.where(graph.admissible, graph.req_matrix, 0.0)
    return np.ceil(req @ vol - 1e-9)


def solve_integer_bruteforce(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None = None,
    demands: Sequence[Demand] | None = None,
    cap_limit: int | None = None,
    *,
    method: str = "enumerate",
    max_vectors: int = 200_000,
    max_nodes: int = 200_000,
) -> FlowSolution:
    """Minimum-cost integer resource vector with a feasible fractional flow.

    Resource levels are searched on network and compute-in edges with a
    positive unit cost; free edges get their full capacity.  Each level is
    capped at ``min(capacity, cap_limit)`` and, always, at the volume bound of
    :func:`_volume_bounds`, which no cycle-free optimum exceeds.

    ``method="enumerate"`` walks the full product of levels and checks each
    vector with the flow LP (refusing more than ``max_vectors`` vectors).
    ``method="prune"`` walks the same space depth-first but discards every
    subtree whose LP relaxation is infeasible or cannot beat the incumbent;
    it is exact and scales to the bundled Abilene instances.

    Raises:
        InstanceTooLarge: the space or the search tree exceeds its bound.
    """
    lp = _FlowLP(graph)
    caps = graph.capacity[lp.y_edges].copy()
    bound = _volume_bounds(graph)[lp.y_edges]
    hi = np.minimum(caps, bound)
    if cap_limit is not None:
        hi = np.minimum(hi, cap_limit)
    hi = np.maximum(hi, 0).astype(int)
    w = lp.cost[lp.nf:]
    free = w <= 0
    hi_free = np.where(free, caps, hi)
    search = np.flatnonzero(~free)

    if method == "enumerate":
        size = math.prod(int(hi[j]) + 1 for j in search)
        if size > max_vectors:
            raise InstanceTooLarge(f"{size} resource vectors exceed the bound {max_vectors}")
        best_cost, best_y = math.inf, None
        for levels in itertools.product(*(range(int(hi[j]) + 1) for j in search)):
            y = hi_free.astype(float)
            y[search] = levels
            cost = float(w @ y)
            if cost >= best_cost - EXACT_TOL:
                continue
            if lp.solve(hi=y, objective=False).ok:
                best_cost, best_y = cost, y
        return _integer_result(graph, lp, best_y)

    if method != "prune":
        raise ValueError(f"unknown method {method!r}")
    integral_costs = bool(np.all(np.abs(w - np.round(w)) < 1e-12))
    best_cost, best_y = math.inf, None
    root_hi = hi_free.astype(float)
    stack = [(np.zeros(lp.ny), root_hi)]
    nodes = 0
    while stack:
        lo, up = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise InstanceTooLarge(f"search tree exceeded {max_nodes} nodes")
        res = lp.solve(lo=lo, hi=up)
        if not res.ok:
            continue
        bound_val = res.fun - 1e-9
        if integral_costs:
            bound_val = math.ceil(bound_val)
        if bound_val >= best_cost - 1e-9:
            continue
        y = res.x[lp.nf:]
        frac = np.abs(y - np.round(y))
        frac[free] = 0.0
        if frac.max(initial=0.0) <= 1e-7:
            y_int = np.where(free, up, np.round(y))
            cost = float(w @ y_int)
            if cost < best_cost:
                best_cost, best_y = cost, y_int
            continue
        # rounding every level up keeps the relaxed flow feasible
        y_up = np.where(free, up, np.minimum(np.ceil(y - 1e-9), up))
        cost_up = float(w @ y_up)
        if cost_up < best_cost - 1e-9:
            best_cost, best_y = cost_up, y_up
        j = int(np.argmax(frac * np.maximum(w, 1e-12)))
        down_hi = up.copy()
        down_hi[j] = math.floor(y[j])
        up_lo = lo.copy()
        up_lo[j] = math.ceil(y[j])
        stack.append((lo, down_hi))
        stack.append((up_lo, up))
    return _integer_result(graph, lp, best_y)


def _integer_result(graph: AugmentedGraph, lp: _FlowLP, y: np.ndarray | None) -> FlowSolution:
    if y is None:
        return FlowSolution(INFEASIBLE, None, None, None)
    res = lp.solve(hi=y, objective=False)
    flows, _ = lp.unpack(res.x)
    resources = np.zeros(graph.n_edges)
    resources[lp.y_edges] = np.where(lp.cost[lp.nf:] > 0, y, 0.0)
    # free edges report what the flow needs, rounded up
    load = (flows * np.where(graph.admissible, graph.req_matrix, 0.0)).sum(axis=1)
    free = lp.y_edges[lp.cost[lp.nf:] <= 0]
    resources[free] = np.minimum(np.ceil(load[free] - 1e-9), graph.capacity[free])
    resources = mirror_compute_out(graph, resources)
    return FlowSolution(OPTIMAL, evaluate_cost(graph, resources), flows, resources)
