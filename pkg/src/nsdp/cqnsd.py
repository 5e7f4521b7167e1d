"""Constrained QNSD (C-QNSD) for integer resource allocation.

Same queue dynamics as QNSD, but a node may only forward, per commodity,
what it received in the previous iteration.  With that budget the per-node
decision becomes a set of fractional knapsacks, one per outgoing edge and
integer resource level, which pushes several commodities into the same
resource units instead of opening new ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import AugmentedGraph, CommodityId, Demand
from .oracle import check_solution, evaluate_cost
from .qnsd import (
    QnsdParams,
    QnsdState,
    Solution,
    Trace,
    TraceRow,
    averaged_metrics,
    init_state,
    processing_weights,
    queue_update,
    solution_construct,
    transport_weights,
)

__all__ = [
    "EdgeAssignment",
    "FIXED_POINT_WINDOW",
    "build_budgets",
    "knapsack_levels",
    "node_assignment",
    "run_cqnsd",
]

#: Consecutive iterations with unchanged flows and queues that count as converged.
FIXED_POINT_WINDOW = 50
_FIXED_POINT_TOL = 1e-9


@dataclass
class EdgeAssignment:
    edge: int
    y: int
    flows: np.ndarray  # per commodity, on this edge
    score: float


def build_budgets(graph: AugmentedGraph, prev_flows: np.ndarray) -> np.ndarray:
    """Per (node, commodity) inflow during the previous iteration (n x K).

    Includes source injection and processed output arriving from ``p(u)``.
    """
    return graph.in_inc @ prev_flows


def knapsack_levels(weights: np.ndarray, reqs: np.ndarray, budgets: np.ndarray, capacity: int,
                    unit_cost: float, V: float) -> tuple[int, np.ndarray, float]:
    """Best integer resource level for one edge and the greedy fill at that level.

    ``weights`` are values per resource unit, ``reqs`` resource units per flow
    unit and ``budgets`` the flow available per commodity, all for the
    candidate commodities already sorted by decreasing weight.  Level ``y``
    scores ``sum_j weight_j * req_j * f_j - V * unit_cost * y`` where ``f``
    fills ``y`` resource units greedily.  Ties go to the smaller level.

    Returns ``(y, flows, score)``.
    """
    units = reqs * budgets
    bp_x = np.concatenate([[0.0], np.cumsum(units)])
    bp_v = np.concatenate([[0.0], np.cumsum(weights * units)])
    levels = np.arange(int(capacity) + 1, dtype=float)
    utility = np.interp(levels, bp_x, bp_v)
    score = utility - V * unit_cost * levels
    y = int(np.argmax(score))
    flows = np.zeros(len(weights))
    room = float(y)
    for j in range(len(weights)):
        if room <= 0:
            break
        take = min(budgets[j], room / reqs[j])
        flows[j] = take
        room -= take * reqs[j]
    return y, flows, float(score[y])


def node_assignment(
    graph: AugmentedGraph,
    U: np.ndarray,
    u: int,
    budgets: np.ndarray,
    V: float,
) -> list[EdgeAssignment]:
    """Joint transport/processing decision at physical node ``u`` (1-based).

    Out-edges (network links leaving ``u`` and ``(u,p(u))``) are visited in
    decreasing order of their best positive commodity weight, ties by edge
    index.  Each edge takes the best integer level from :func:`knapsack_levels`
    and consumes ``budgets[u-1]`` in place.
    """
    row = u - 1
    edges = [int(e) for e in graph.network_edges if graph.net_tail[e] == row]
    W_rows = [transport_weights(graph, U, np.array(edges))] if edges else []
    reqs_rows = [graph.req_matrix[edges]] if edges else []
    cin = int(graph.cin_edges[row])
    edges.append(cin)
    W_rows.append(processing_weights(graph, U, np.array([row])))
    reqs_rows.append(graph.req_matrix[[cin]])
    W = np.vstack(W_rows)
    R = np.vstack(reqs_rows)
    avail = budgets[row]

    usable = (W > 0) & (avail > 0)[None, :]
    best = np.where(usable, W, -np.inf).max(axis=1, initial=-np.inf)
    order = sorted(range(len(edges)), key=lambda i: (-best[i], edges[i]))
    out = []
    for i in order:
        e = edges[i]
        if not np.isfinite(best[i]):
            continue
        cand = np.flatnonzero((W[i] > 0) & (avail > 0))
        if cand.size == 0:
            continue
        cand = cand[np.argsort(-W[i, cand], kind="stable")]
        y, f, score = knapsack_levels(
            W[i, cand], R[i, cand], avail[cand], int(graph.capacity[e]), float(graph.unit_cost[e]), V
        )
        if y == 0:
            continue
        flows = np.zeros(graph.n_commodities)
        flows[cand] = f
        avail[cand] = np.maximum(avail[cand] - f, 0.0)
        out.append(EdgeAssignment(e, y, flows, score))
    return out


def decide_constrained(graph: AugmentedGraph, U: np.ndarray, V: float, prev_flows: np.ndarray):
    """All C-QNSD decisions of one iteration; returns ``(y, flows, budgets)``."""
    budgets = build_budgets(graph, prev_flows)
    start = budgets.copy()
    # final commodities at their destination are drained, never forwarded
    budgets[graph.pinned] = 0.0
    flows = graph.injection.copy()
    y = np.zeros(graph.n_edges)
    for u in graph.network.node_ids:
        for a in node_assignment(graph, U, u, budgets, V):
            y[a.edge] = a.y
            flows[a.edge] = a.flows
            if a.edge == graph.cin_edges[u - 1]:
                has = graph.succ_index >= 0
                out = np.zeros(graph.n_commodities)
                out[graph.succ_index[has]] = a.flows[has] * graph.scaling[graph.succ_index[has]]
                flows[graph.cout_edges[u - 1]] = out
                y[graph.cout_edges[u - 1]] = min(a.y, graph.capacity[graph.cout_edges[u - 1]])
    # the sink drains what reached the destination last iteration, so the
    # budget rule holds on sink edges too
    fin = np.flatnonzero(graph.is_final)
    d = graph.dest_index[fin]
    flows[graph.sink_edges[d], fin] = start[d, fin]
    return y, flows, start


def run_cqnsd(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None = None,
    demands: Sequence[Demand] | None = None,
    params: QnsdParams | None = None,
    callback: Callable[[QnsdState, np.ndarray], None] | None = None,
    stop_at_fixed_point: bool = True,
) -> tuple[Solution, Trace]:
    """Run C-QNSD.

    A fixed point is reached when flows and actual queues have not changed
    (within 1e-9) for :data:`FIXED_POINT_WINDOW` consecutive iterations; the
    run then stops unless ``stop_at_fixed_point`` is false.  The returned
    solution carries the per-iteration integer assignment of the last
    iteration together with the oracle's verdict; ``converged`` is true only
    when a fixed point was reached and the assignment is feasible.

    ``callback(state, budgets)`` sees every iteration with the budgets the
    decisions were made against.
    """
    if params is None:
        raise ValueError("params are required")
    state = init_state(graph, commodities, demands)
    trace = Trace()
    stable = 0
    fixed = False
    for t in range(1, params.max_iters + 1):
        state.t = t
        Q, dQ, U = queue_update(state, graph, params.theta)
        state.U_prev, state.U_cur, state.Q = state.U_cur, U, Q
        prev = state.flows
        state.resources, state.flows, budgets = decide_constrained(graph, U, params.V, prev)
        solution_construct(state, graph, params.truncate)
        if t % params.trace_every == 0:
            trace.rows.append(TraceRow(t, state.j, *averaged_metrics(graph, state)))
        if callback is not None:
            callback(state, budgets)
        same = (
            np.max(np.abs(state.flows - prev), initial=0.0) <= _FIXED_POINT_TOL
            and np.max(np.abs(dQ), initial=0.0) <= _FIXED_POINT_TOL
        )
        stable = stable + 1 if same else 0
        if stable >= FIXED_POINT_WINDOW:
            fixed = True
            if stop_at_fixed_point:
                break

    cost, violation = averaged_metrics(graph, state)
    f_avg, y_avg = state.averages()
    integer_y = state.resources.copy()
    integer_f = state.flows.copy()
    sol = Solution(
        avg_flows=f_avg,
        avg_resources=y_avg,
        cost=cost,
        max_violation=violation,
        iterations_used=state.t,
        converged=False,
        frame=state.j,
        integer_flows=integer_f,
        integer_resources=integer_y,
        integer_cost=evaluate_cost(graph, integer_y),
    )
    sol.integer_report = check_solution(graph, None, None, sol.integer_assignment())
    sol.integer_feasible = sol.integer_report.feasible(1e-9) and sol.integer_report.integer_ok
    sol.converged = fixed and sol.integer_feasible
    return sol, trace
