"""Cloud network, service and demand model plus the cloud-augmented graph.

Every physical node ``u`` is expanded with a processing unit ``p(u)``, a
source unit ``s(u)`` and a demand unit ``q(u)``, so that VNF processing,
flow ingress and flow egress all become edges of one flow network.  The
augmented graph carries, for every edge and commodity, the resource units
consumed per flow unit (``None`` where the commodity may not use the edge).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "AugEdge",
    "AugNode",
    "AugmentedGraph",
    "CloudNetwork",
    "CommodityId",
    "Demand",
    "EdgeKind",
    "FunctionSpec",
    "LinkSpec",
    "ModelError",
    "NodeSpec",
    "ServiceSpec",
    "UNPROCESSABLE",
    "build_augmented_graph",
    "enumerate_commodities",
    "successor",
]

#: Marker returned by :meth:`AugEdge.req` when a commodity may not use an edge.
UNPROCESSABLE = None


class ModelError(ValueError):
    """An input violates a model invariant."""


@dataclass(frozen=True)
class NodeSpec:
    id: int
    cloud_unit_cost: float
    cloud_capacity: int

    def __post_init__(self) -> None:
        if self.cloud_unit_cost < 0:
            raise ModelError(f"node {self.id}: cloud_unit_cost must be >= 0")
        if self.cloud_capacity < 0 or int(self.cloud_capacity) != self.cloud_capacity:
            raise ModelError(f"node {self.id}: cloud_capacity must be a nonnegative integer")


@dataclass(frozen=True)
class LinkSpec:
    source: int
    target: int
    net_unit_cost: float
    net_capacity: int
    transport_req: float = 1.0

    def __post_init__(self) -> None:
        where = f"link {self.source}->{self.target}"
        if self.net_unit_cost < 0:
            raise ModelError(f"{where}: net_unit_cost must be >= 0")
        if self.net_capacity < 0 or int(self.net_capacity) != self.net_capacity:
            raise ModelError(f"{where}: net_capacity must be a nonnegative integer")
        if not self.transport_req > 0:
            raise ModelError(f"{where}: transport_req must be > 0")


@dataclass(frozen=True)
class CloudNetwork:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]

    def __init__(self, nodes: Iterable[NodeSpec], links: Iterable[LinkSpec]):
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "links", tuple(links))
        ids = [nd.id for nd in self.nodes]
        if ids != list(range(1, len(ids) + 1)):
            raise ModelError("node ids must be unique contiguous integers starting at 1")
        seen = set()
        for ln in self.links:
            if ln.source not in self.node_ids or ln.target not in self.node_ids:
                raise ModelError(f"link {ln.source}->{ln.target} references an unknown node")
            if ln.source == ln.target:
                raise ModelError(f"link {ln.source}->{ln.target} is a self-loop")
            if (ln.source, ln.target) in seen:
                raise ModelError(f"duplicate link {ln.source}->{ln.target}")
            seen.add((ln.source, ln.target))

    @property
    def node_ids(self) -> range:
        return range(1, len(self.nodes) + 1)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.links)

    def node(self, u: int) -> NodeSpec:
        return self.nodes[u - 1]


@dataclass(frozen=True)
class FunctionSpec:
    """One VNF of a service chain.

    ``proc_req`` maps node id to cloud resource units consumed per input flow
    unit.  ``availability`` defaults to the keys of ``proc_req``.  ``flow_scaling``
    is the number of output flow units produced per input flow unit.
    """

    proc_req: Mapping[int, float]
    availability: frozenset[int] | None = None
    flow_scaling: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "proc_req", dict(self.proc_req))
        avail = frozenset(self.proc_req) if self.availability is None else frozenset(self.availability)
        object.__setattr__(self, "availability", avail)
        missing = [u for u in avail if u not in self.proc_req]
        if missing:
            raise ModelError(f"proc_req missing for available nodes {sorted(missing)}")
        for u in avail:
            if not self.proc_req[u] > 0:
                raise ModelError(f"proc_req at node {u} must be > 0")
        if not self.flow_scaling > 0:
            raise ModelError("flow_scaling must be > 0")

    @classmethod
    def uniform(cls, req: float, nodes: Iterable[int], flow_scaling: float = 1.0) -> "FunctionSpec":
        """Same requirement at every node in ``nodes``."""
        return cls({u: req for u in nodes}, None, flow_scaling)


@dataclass(frozen=True)
class ServiceSpec:
    id: int
    functions: tuple[FunctionSpec, ...]

    def __init__(self, id: int, functions: Iterable[FunctionSpec]):
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "functions", tuple(functions))
        if not self.functions:
            raise ModelError(f"service {id} has an empty function chain")

    @property
    def length(self) -> int:
        return len(self.functions)

    def function(self, i: int) -> FunctionSpec:
        """The ``i``-th function of the chain, 1-based."""
        return self.functions[i - 1]


@dataclass(frozen=True)
class Demand:
    destination: int
    service: int
    sources: Mapping[int, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", dict(self.sources))
        if not self.sources:
            raise ModelError(f"demand ({self.destination},{self.service}) has no sources")
        for s, lam in self.sources.items():
            if not lam > 0:
                raise ModelError(f"demand ({self.destination},{self.service}): rate at {s} must be > 0")


class CommodityId(NamedTuple):
    """The output of function ``stage`` of ``service`` destined to ``destination``."""

    destination: int
    service: int
    stage: int


def _service_map(services: Sequence[ServiceSpec]) -> dict[int, ServiceSpec]:
    out: dict[int, ServiceSpec] = {}
    for svc in services:
        if svc.id in out:
            raise ModelError(f"duplicate service id {svc.id}")
        out[svc.id] = svc
    return out


def enumerate_commodities(
    services: Sequence[ServiceSpec], demands: Sequence[Demand]
) -> list[CommodityId]:
    """All ``(d, phi, i)`` triples for declared demands, sorted lexicographically.

    The ordering doubles as the tie-break order of every argmax in the solvers.
    """
    svc = _service_map(services)
    out = []
    for dem in demands:
        if dem.service not in svc:
            raise ModelError(f"demand references unknown service {dem.service}")
        for i in range(svc[dem.service].length + 1):
            out.append(CommodityId(dem.destination, dem.service, i))
    return sorted(out)


def successor(c: CommodityId, services: Sequence[ServiceSpec] | Mapping[int, int]) -> CommodityId | None:
    """Next commodity in the chain, or None for a final commodity.

    ``services`` is either the service list or a mapping service id -> chain length.
    """
    if isinstance(services, Mapping):
        length = services[c.service]
    else:
        length = _service_map(services)[c.service].length
    if c.stage < length:
        return CommodityId(c.destination, c.service, c.stage + 1)
    return None


class EdgeKind(str, Enum):
    NETWORK = "network"
    COMPUTE_IN = "compute-in"
    COMPUTE_OUT = "compute-out"
    SOURCE = "source"
    SINK = "sink"


class AugNode(NamedTuple):
    """Augmented-graph node: ``role`` is one of node/proc/source/sink."""

    role: str
    node: int

    def __str__(self) -> str:
        return str(self.node) if self.role == "node" else f"{_ROLE_PREFIX[self.role]}({self.node})"


_ROLE_PREFIX = {"proc": "p", "source": "s", "sink": "q"}


@dataclass(frozen=True)
class AugEdge:
    index: int
    kind: EdgeKind
    tail: AugNode
    head: AugNode
    capacity: float
    unit_cost: float
    reqs: Mapping[CommodityId, float] = field(repr=False)

    def req(self, c: CommodityId) -> float | None:
        """Resource units per flow unit of ``c`` on this edge, or ``UNPROCESSABLE``."""
        return self.reqs.get(c, UNPROCESSABLE)

    @property
    def node(self) -> int:
        """The physical node owning a gadget edge (tail node for network edges)."""
        return self.tail.node if self.kind is not EdgeKind.COMPUTE_OUT else self.head.node

    def label(self) -> str:
        return f"{self.tail}->{self.head}"


class AugmentedGraph:
    """The cloud-augmented graph with dense per-(edge, commodity) arrays.

    Edge order: the ``m`` network links in input order, then for each node
    ``u`` in id order the gadget edges ``(u,p(u))``, ``(p(u),u)``,
    ``(s(u),u)``, ``(u,q(u))``.  Rows of the node arrays are ``u - 1``.

    Attributes used by the solvers:

    * ``req_matrix`` (E x K): requirement, ``nan`` where inadmissible.
    * ``admissible`` (E x K): boolean mask of allowed (edge, commodity) pairs.
    * ``in_inc`` / ``out_inc`` (n x E): incidence of edges entering/leaving
      each physical node.
    * ``succ_index`` (K): index of the successor commodity, -1 for finals.
    * ``scaling`` (K): flow scaling of the function producing each commodity
      from its predecessor (1 for stage 0).
    * ``injection`` (E x K): the constant source flows.
    * ``pinned`` (n x K): final commodities at their own destination.
    """

    def __init__(
        self,
        network: CloudNetwork,
        services: Sequence[ServiceSpec],
        demands: Sequence[Demand],
        commodities: list[CommodityId],
        edges: list[AugEdge],
        cloud_max: np.ndarray,
    ):
        self.network = network
        self.services = tuple(services)
        self.demands = tuple(demands)
        self.commodities = commodities
        self.edges = edges
        self.cloud_max = cloud_max
        self.n = network.n
        self.m = network.m
        self.nodes: list[AugNode] = [AugNode("node", u) for u in network.node_ids]
        for role in ("proc", "source", "sink"):
            self.nodes.extend(AugNode(role, u) for u in network.node_ids)
        self.commodity_index = {c: k for k, c in enumerate(commodities)}
        self._build_arrays()

    # layout helpers
    def compute_in(self, u: int) -> int:
        return self.m + 4 * (u - 1)

    def compute_out(self, u: int) -> int:
        return self.m + 4 * (u - 1) + 1

    def source_edge(self, u: int) -> int:
        return self.m + 4 * (u - 1) + 2

    def sink_edge(self, u: int) -> int:
        return self.m + 4 * (u - 1) + 3

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_commodities(self) -> int:
        return len(self.commodities)

    def in_edges(self, node: AugNode) -> list[int]:
        """delta^-(node) as edge indices."""
        return [e.index for e in self.edges if e.head == node]

    def out_edges(self, node: AugNode) -> list[int]:
        """delta^+(node) as edge indices."""
        return [e.index for e in self.edges if e.tail == node]

    def req(self, e: int, c: CommodityId) -> float | None:
        return self.edges[e].req(c)

    def chain_length(self, service: int) -> int:
        for svc in self.services:
            if svc.id == service:
                return svc.length
        raise KeyError(service)

    def _build_arrays(self) -> None:
        E, K, n = self.n_edges, self.n_commodities, self.n
        req = np.full((E, K), np.nan)
        for e in self.edges:
            for c, r in e.reqs.items():
                req[e.index, self.commodity_index[c]] = r
        self.req_matrix = req
        self.admissible = ~np.isnan(req)
        self.capacity = np.array([e.capacity for e in self.edges], dtype=float)
        self.unit_cost = np.array([e.unit_cost for e in self.edges], dtype=float)
        self.kind = np.array([e.kind.value for e in self.edges])

        self.in_inc = np.zeros((n, E))
        self.out_inc = np.zeros((n, E))
        for e in self.edges:
            if e.tail.role == "node":
                self.out_inc[e.tail.node - 1, e.index] = 1.0
            if e.head.role == "node":
                self.in_inc[e.head.node - 1, e.index] = 1.0

        lengths = {svc.id: svc.length for svc in self.services}
        svc = {s.id: s for s in self.services}
        self.succ_index = np.full(K, -1, dtype=int)
        self.scaling = np.ones(K)
        self.is_final = np.zeros(K, dtype=bool)
        self.dest_index = np.zeros(K, dtype=int)
        for k, c in enumerate(self.commodities):
            nxt = successor(c, lengths)
            if nxt is None:
                self.is_final[k] = True
            else:
                self.succ_index[k] = self.commodity_index[nxt]
            if c.stage > 0:
                self.scaling[k] = svc[c.service].function(c.stage).flow_scaling
            self.dest_index[k] = c.destination - 1

        self.pinned = np.zeros((n, K), dtype=bool)
        self.pinned[self.dest_index[self.is_final], np.flatnonzero(self.is_final)] = True

        self.injection = np.zeros((E, K))
        for dem in self.demands:
            k0 = self.commodity_index[CommodityId(dem.destination, dem.service, 0)]
            for s, lam in dem.sources.items():
                self.injection[self.source_edge(s), k0] += lam

        self.network_edges = np.arange(self.m)
        self.net_tail = np.array([e.tail.node - 1 for e in self.edges[: self.m]], dtype=int)
        self.net_head = np.array([e.head.node - 1 for e in self.edges[: self.m]], dtype=int)
        self.cin_edges = np.array([self.compute_in(u) for u in self.network.node_ids], dtype=int)
        self.cout_edges = np.array([self.compute_out(u) for u in self.network.node_ids], dtype=int)
        self.sink_edges = np.array([self.sink_edge(u) for u in self.network.node_ids], dtype=int)
        self.source_edges = np.array([self.source_edge(u) for u in self.network.node_ids], dtype=int)
        # processing requirement per (node, input commodity)
        self.proc_req = req[self.cin_edges, :]


def _cloud_max(network: CloudNetwork, services: dict[int, ServiceSpec], demands: Sequence[Demand]) -> np.ndarray:
    out = np.zeros(network.n)
    for dem in demands:
        total = sum(dem.sources.values())
        for fn in services[dem.service].functions:
            for u in fn.availability:
                out[u - 1] += total * fn.proc_req[u]
    return out


def build_augmented_graph(
    network: CloudNetwork, services: Sequence[ServiceSpec], demands: Sequence[Demand]
) -> AugmentedGraph:
    """Expand ``network`` with the per-node processing/source/demand gadget.

    Raises:
        ModelError: unknown service or node in a demand, a function with an
            empty availability set, or availability outside the node set.
    """
    svc = _service_map(services)
    nodes = set(network.node_ids)
    for s in services:
        for i, fn in enumerate(s.functions, start=1):
            if not fn.availability:
                raise ModelError(f"function ({s.id},{i}) is not available at any node")
            if not fn.availability <= nodes:
                raise ModelError(f"function ({s.id},{i}) availability references unknown nodes")
    pairs = set()
    for dem in demands:
        if dem.service not in svc:
            raise ModelError(f"demand references unknown service {dem.service}")
        if dem.destination not in nodes:
            raise ModelError(f"demand references unknown destination {dem.destination}")
        for s in dem.sources:
            if s not in nodes:
                raise ModelError(f"demand ({dem.destination},{dem.service}) has unknown source {s}")
        key = (dem.destination, dem.service)
        if key in pairs:
            raise ModelError(f"duplicate demand {key}")
        pairs.add(key)

    commodities = enumerate_commodities(services, demands)
    cmax = _cloud_max(network, svc, demands)
    sources_of = {(d.destination, d.service): set(d.sources) for d in demands}

    edges: list[AugEdge] = []
    for ln in network.links:
        # a final commodity never leaves its destination: it exits there
        reqs = {
            c: ln.transport_req
            for c in commodities
            if not (c.stage == svc[c.service].length and c.destination == ln.source)
        }
        edges.append(
            AugEdge(len(edges), EdgeKind.NETWORK, AugNode("node", ln.source), AugNode("node", ln.target),
                    float(ln.net_capacity), float(ln.net_unit_cost), reqs)
        )
    for nd in network.nodes:
        u = nd.id
        here, proc = AugNode("node", u), AugNode("proc", u)
        cin: dict[CommodityId, float] = {}
        cout: dict[CommodityId, float] = {}
        for c in commodities:
            length = svc[c.service].length
            if c.stage < length:
                fn = svc[c.service].function(c.stage + 1)
                if u in fn.availability:
                    cin[c] = fn.proc_req[u]
            if c.stage >= 1 and u in svc[c.service].function(c.stage).availability:
                cout[c] = 0.0
        src = {c: 0.0 for c in commodities if c.stage == 0 and u in sources_of[(c.destination, c.service)]}
        snk = {c: 0.0 for c in commodities if c.stage == svc[c.service].length and c.destination == u}
        big = float(cmax[u - 1])
        edges.append(AugEdge(len(edges), EdgeKind.COMPUTE_IN, here, proc,
                             float(nd.cloud_capacity), float(nd.cloud_unit_cost), cin))
        edges.append(AugEdge(len(edges), EdgeKind.COMPUTE_OUT, proc, here, big, 0.0, cout))
        edges.append(AugEdge(len(edges), EdgeKind.SOURCE, AugNode("source", u), here, big, 0.0, src))
        edges.append(AugEdge(len(edges), EdgeKind.SINK, here, AugNode("sink", u), big, 0.0, snk))
    return AugmentedGraph(network, services, demands, commodities, edges, cmax)
