"""Queue-length based service distribution (QNSD) for the fractional problem.

Each iteration mimics one time slot of a cloud network queueing system:

1. actual queues absorb last iteration's flows, virtual queues add a
   momentum term on top of the actual backlog change;
2. every link and every processing unit independently picks the commodity
   with the largest backlog differential (per resource unit) and, if that
   beats ``V`` times the unit cost, runs at full capacity for it;
3. decisions are averaged over frames that restart at ``t = 1, 2, 4, 8, ...``.

All decisions in one iteration read the same frozen virtual-queue snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .model import AugmentedGraph, CommodityId, Demand, EdgeKind
from .oracle import FeasibilityReport, FlowSolution

__all__ = [
    "QnsdParams",
    "QnsdState",
    "Solution",
    "Trace",
    "TraceRow",
    "advance_queues",
    "af_norm_sq",
    "compute_b_bound",
    "edge_flow_bounds",
    "init_state",
    "processing_decision",
    "processing_decisions",
    "queue_update",
    "run_qnsd",
    "solution_construct",
    "transport_decision",
    "transport_decisions",
]


@dataclass(frozen=True)
class QnsdParams:
    """Control parameters.

    ``V`` trades optimality against running time (``V = 1/eps``); ``theta``
    is the momentum weight of the virtual queues.  ``truncate=False`` keeps
    one running average from ``t = 1`` instead of restarting it every frame.
    ``tol`` and ``cost_rtol`` only decide the ``converged`` flag.
    """

    V: float
    theta: float = 0.0
    max_iters: int = 1000
    trace_every: int = 10
    truncate: bool = True
    tol: float = 1e-2
    cost_rtol: float = 1e-3

    def __post_init__(self) -> None:
        if not self.V > 0:
            raise ValueError("V must be > 0")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


@dataclass
class QnsdState:
    t: int
    Q: np.ndarray
    U_cur: np.ndarray
    U_prev: np.ndarray
    flows: np.ndarray
    resources: np.ndarray
    j: int = 0
    t_start: int = 0
    accum_flows: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    accum_resources: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    count: int = 0
    frame_costs: list[float] = field(default_factory=list)

    def averages(self) -> tuple[np.ndarray, np.ndarray]:
        if self.count == 0:
            return self.flows.copy(), self.resources.copy()
        return self.accum_flows / self.count, self.accum_resources / self.count


class TraceRow(NamedTuple):
    iteration: int
    frame: int
    cost_avg: float
    max_violation: float


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


@dataclass
class Solution:
    """Frame-averaged flows and resources of an iterative run.

    For C-QNSD runs the ``integer_*`` fields hold the per-iteration integer
    assignment the run settled on, with the oracle's verdict on it.
    """

    avg_flows: np.ndarray
    avg_resources: np.ndarray
    cost: float
    max_violation: float
    iterations_used: int
    converged: bool
    frame: int = 0
    integer_flows: np.ndarray | None = None
    integer_resources: np.ndarray | None = None
    integer_cost: float | None = None
    integer_report: FeasibilityReport | None = None
    integer_feasible: bool | None = None

    @property
    def flows(self) -> np.ndarray:
        return self.avg_flows

    @property
    def resources(self) -> np.ndarray:
        return self.avg_resources

    def integer_assignment(self) -> FlowSolution:
        if self.integer_flows is None:
            raise ValueError("no integer assignment on this solution")
        return FlowSolution("integer", self.integer_cost, self.integer_flows, self.integer_resources)


def init_state(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None = None,
    demands: Sequence[Demand] | None = None,
) -> QnsdState:
    """Zero queues and decisions; the source edges carry their constant injection."""
    n, K, E = graph.n, graph.n_commodities, graph.n_edges
    return QnsdState(
        t=0,
        Q=np.zeros((n, K)),
        U_cur=np.zeros((n, K)),
        U_prev=np.zeros((n, K)),
        flows=graph.injection.copy(),
        resources=np.zeros(E),
        accum_flows=np.zeros((E, K)),
        accum_resources=np.zeros(E),
    )


def advance_queues(
    Q: np.ndarray,
    U: np.ndarray,
    U_prev: np.ndarray,
    inflow: np.ndarray,
    outflow: np.ndarray,
    theta: float,
    pinned: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One step of the actual/virtual queue recursions.

    ``U_new = U + dQ + theta (U - U_prev)``, evaluated as
    ``Q_new + (U - Q) + theta (U - U_prev)`` so that ``theta = 0`` keeps
    ``U == Q`` bit-for-bit.
    """
    Q_new = np.maximum(Q - outflow + inflow, 0.0)
    if pinned is not None:
        Q_new[pinned] = 0.0
    dQ = Q_new - Q
    U_new = Q_new + (U - Q) + theta * (U - U_prev)
    if pinned is not None:
        U_new[pinned] = 0.0
    return Q_new, dQ, U_new


def queue_update(state: QnsdState, graph: AugmentedGraph, theta: float = 0.0):
    """Queues at iteration ``t`` from the flows of ``t - 1``; returns ``(Q, dQ, U)``."""
    inflow = graph.in_inc @ state.flows
    outflow = graph.out_inc @ state.flows
    return advance_queues(state.Q, state.U_cur, state.U_prev, inflow, outflow, theta, graph.pinned)


def _net_req(graph: AugmentedGraph) -> np.ndarray:
    return np.array([ln.transport_req for ln in graph.network.links], dtype=float)


def transport_weights(graph: AugmentedGraph, U: np.ndarray, links: np.ndarray | None = None) -> np.ndarray:
    """Backlog differential per resource unit, ``-inf`` where inadmissible."""
    links = graph.network_edges if links is None else np.asarray(links)
    W = (U[graph.net_tail[links]] - U[graph.net_head[links]]) / _net_req(graph)[links][:, None]
    return np.where(graph.admissible[links], W, -np.inf)


def processing_weights(graph: AugmentedGraph, U: np.ndarray, nodes: np.ndarray | None = None) -> np.ndarray:
    nodes = np.arange(graph.n) if nodes is None else np.asarray(nodes)
    succ = np.where(graph.succ_index >= 0, graph.succ_index, np.arange(graph.n_commodities))
    r = graph.proc_req[nodes]
    adm = graph.admissible[graph.cin_edges[nodes]]
    with np.errstate(invalid="ignore"):
        W = (U[nodes] - U[nodes][:, succ]) / np.where(adm, r, 1.0)
    return np.where(adm, W, -np.inf)


def transport_decisions(graph: AugmentedGraph, U: np.ndarray, V: float, links: np.ndarray | None = None):
    """Max-weight transport decisions for ``links`` (default: all).

    Returns ``(y, flows)`` with ``y`` of shape (L,) and ``flows`` (L x K).
    """
    links = graph.network_edges if links is None else np.asarray(links)
    W = transport_weights(graph, U, links)
    flows = np.zeros((len(links), graph.n_commodities))
    y = np.zeros(len(links))
    if graph.n_commodities == 0 or len(links) == 0:
        return y, flows
    kstar = np.argmax(W, axis=1)
    best = W[np.arange(len(links)), kstar]
    go = best - V * graph.unit_cost[links] > 0
    y[go] = graph.capacity[links][go]
    rows = np.flatnonzero(go)
    flows[rows, kstar[rows]] = y[rows] / _net_req(graph)[links][rows]
    return y, flows


def transport_decision(state: QnsdState | np.ndarray, graph: AugmentedGraph, e: int, params: QnsdParams | float):
    """Decision for the single network link ``e``: ``(y_e, flows_e)``."""
    U = state.U_cur if isinstance(state, QnsdState) else state
    V = params.V if isinstance(params, QnsdParams) else params
    if graph.edges[e].kind is not EdgeKind.NETWORK:
        raise ValueError(f"edge {e} is not a network link")
    y, f = transport_decisions(graph, U, V, np.array([e]))
    return float(y[0]), f[0]


def processing_decisions(graph: AugmentedGraph, U: np.ndarray, V: float, nodes: np.ndarray | None = None):
    """Max-weight processing decisions at ``nodes`` (0-based rows, default: all).

    Returns ``(y_in, f_in, f_out)``: cloud units on ``(u,p(u))`` and the flows
    on ``(u,p(u))`` and ``(p(u),u)``, each row one node.
    """
    nodes = np.arange(graph.n) if nodes is None else np.asarray(nodes)
    K = graph.n_commodities
    W = processing_weights(graph, U, nodes)
    y = np.zeros(len(nodes))
    f_in = np.zeros((len(nodes), K))
    f_out = np.zeros((len(nodes), K))
    if K == 0 or len(nodes) == 0:
        return y, f_in, f_out
    cin = graph.cin_edges[nodes]
    kstar = np.argmax(W, axis=1)
    best = W[np.arange(len(nodes)), kstar]
    go = best - V * graph.unit_cost[cin] > 0
    rows = np.flatnonzero(go)
    y[rows] = graph.capacity[cin][rows]
    ks = kstar[rows]
    f_in[rows, ks] = y[rows] / graph.proc_req[nodes[rows], ks]
    succ = graph.succ_index[ks]
    f_out[rows, succ] = graph.scaling[succ] * f_in[rows, ks]
    return y, f_in, f_out


def processing_decision(state: QnsdState | np.ndarray, graph: AugmentedGraph, u: int, params: QnsdParams | float):
    """Decision at physical node ``u`` (1-based): ``(y_in, y_out, f_in, f_out)``."""
    U = state.U_cur if isinstance(state, QnsdState) else state
    V = params.V if isinstance(params, QnsdParams) else params
    y, f_in, f_out = processing_decisions(graph, U, V, np.array([u - 1]))
    y_out = min(float(y[0]), float(graph.capacity[graph.compute_out(u)]))
    return float(y[0]), y_out, f_in[0], f_out[0]


def drain_sinks(graph: AugmentedGraph, flows: np.ndarray) -> None:
    """Final commodities arriving at their destination leave through ``(d,q(d))``."""
    inflow = graph.in_inc @ flows
    fin = np.flatnonzero(graph.is_final)
    d = graph.dest_index[fin]
    flows[graph.sink_edges[d], fin] = inflow[d, fin]


def decide(graph: AugmentedGraph, U: np.ndarray, V: float) -> tuple[np.ndarray, np.ndarray]:
    """All QNSD decisions of one iteration against the snapshot ``U``."""
    E, K = graph.n_edges, graph.n_commodities
    flows = graph.injection.copy()
    y = np.zeros(E)
    y_net, f_net = transport_decisions(graph, U, V)
    y[: graph.m] = y_net
    flows[: graph.m] = f_net
    y_in, f_in, f_out = processing_decisions(graph, U, V)
    y[graph.cin_edges] = y_in
    y[graph.cout_edges] = np.minimum(y_in, graph.capacity[graph.cout_edges])
    flows[graph.cin_edges] = f_in
    flows[graph.cout_edges] = f_out
    drain_sinks(graph, flows)
    return y, flows


def solution_construct(state: QnsdState, graph: AugmentedGraph | None = None, truncate: bool = True) -> None:
    """Fold the current decisions into the running frame average.

    The average restarts at ``t = 2**j`` (then ``j`` advances), so frames
    begin at ``t = 1, 2, 4, 8, ...``.  Without truncation it starts once at
    ``t = 1``.
    """
    t = state.t
    restart = t == 2**state.j if truncate else t == 1
    if restart:
        if state.count and graph is not None:
            state.frame_costs.append(float(graph.unit_cost @ state.accum_resources) / state.count)
        state.t_start = t
        state.j += 1
        state.accum_flows[...] = 0.0
        state.accum_resources[...] = 0.0
        state.count = 0
    state.accum_flows += state.flows
    state.accum_resources += state.resources
    state.count += 1


def averaged_metrics(graph: AugmentedGraph, state: QnsdState) -> tuple[float, float]:
    """Cost of the running average and its largest conservation surplus (>= 0)."""
    if state.count == 0:
        return 0.0, 0.0
    cost = float(graph.unit_cost @ state.accum_resources) / state.count
    surplus = (graph.in_inc @ state.accum_flows - graph.out_inc @ state.accum_flows) / state.count
    return cost, max(0.0, float(surplus.max(initial=0.0)))


def edge_flow_bounds(graph: AugmentedGraph) -> np.ndarray:
    """Largest total flow any single iteration can place on each edge.

    Capacity over the smallest admissible requirement on network and
    compute-in edges; the scaled processing output on compute-out edges; the
    injected rate on source edges; everything that can arrive at the node on
    sink edges.
    """
    E = graph.n_edges
    F = np.zeros(E)
    req = np.where(graph.admissible, graph.req_matrix, np.inf)
    rmin = req.min(axis=1, initial=np.inf)
    for e in list(graph.network_edges) + list(graph.cin_edges):
        F[e] = graph.capacity[e] / rmin[e] if np.isfinite(rmin[e]) else 0.0
    for u in range(graph.n):
        cin = graph.cin_edges[u]
        adm = np.flatnonzero(graph.admissible[cin])
        if adm.size:
            xi = graph.scaling[graph.succ_index[adm]]
            F[graph.cout_edges[u]] = float(np.max(xi * graph.capacity[cin] / graph.req_matrix[cin, adm]))
        F[graph.source_edges[u]] = graph.injection[graph.source_edges[u]].sum()
    for u in range(graph.n):
        sink = graph.sink_edges[u]
        if graph.admissible[sink].any():
            arriving = graph.in_inc[u].astype(bool)
            arriving[graph.source_edges[u]] = False
            F[sink] = F[arriving].sum()
    return F


def compute_b_bound(graph: AugmentedGraph, commodities: Sequence[CommodityId] | None = None) -> float:
    """Upper bound on the squared norm of one iteration's net-flow vector.

    ``B = sum_u (sum_{e into u} F_e)^2 + (sum_{e out of u} F_e)^2`` with
    ``F_e`` from :func:`edge_flow_bounds`.
    """
    F = edge_flow_bounds(graph)
    return float(np.sum((graph.in_inc @ F) ** 2 + (graph.out_inc @ F) ** 2))


def af_norm_sq(graph: AugmentedGraph, flows: np.ndarray) -> float:
    """``||A f||^2`` over the queue rows (pinned rows excluded)."""
    net = graph.in_inc @ flows - graph.out_inc @ flows
    net[graph.pinned] = 0.0
    return float(np.sum(net**2))


def _converged(state: QnsdState, cost: float, violation: float, params: QnsdParams) -> bool:
    if violation > params.tol or not state.frame_costs:
        return False
    prev = state.frame_costs[-1]
    return abs(cost - prev) <= params.cost_rtol * max(abs(prev), 1e-12)


def run_qnsd(
    graph: AugmentedGraph,
    commodities: Sequence[CommodityId] | None = None,
    demands: Sequence[Demand] | None = None,
    params: QnsdParams | None = None,
    callback: Callable[[QnsdState], None] | None = None,
) -> tuple[Solution, Trace]:
    """Run QNSD for ``params.max_iters`` iterations.

    ``callback(state)`` is invoked after every iteration with the live state
    (read-only by convention).  Non-convergence is reported through
    ``Solution.converged``, never raised.
    """
    if params is None:
        raise ValueError("params are required")
    state = init_state(graph, commodities, demands)
    trace = Trace()
    for t in range(1, params.max_iters + 1):
        state.t = t
        Q, _, U = queue_update(state, graph, params.theta)
        state.U_prev, state.U_cur, state.Q = state.U_cur, U, Q
        state.resources, state.flows = decide(graph, state.U_cur, params.V)
        solution_construct(state, graph, params.truncate)
        if t % params.trace_every == 0:
            trace.rows.append(TraceRow(t, state.j, *averaged_metrics(graph, state)))
        if callback is not None:
            callback(state)
    return _finish(graph, state, params), trace


def _finish(graph: AugmentedGraph, state: QnsdState, params: QnsdParams) -> Solution:
    cost, violation = averaged_metrics(graph, state)
    f_avg, y_avg = state.averages()
    return Solution(
        avg_flows=f_avg,
        avg_resources=y_avg,
        cost=cost,
        max_violation=violation,
        iterations_used=state.t,
        converged=_converged(state, cost, violation, params),
        frame=state.j,
    )
