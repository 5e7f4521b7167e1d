"""Seeded random scenarios for property and equivalence tests."""

from __future__ import annotations

import numpy as np

from nsdp.model import CloudNetwork, Demand, FunctionSpec, LinkSpec, NodeSpec, ServiceSpec, build_augmented_graph


def random_instance(seed: int, *, max_nodes: int = 5, max_services: int = 2, max_chain: int = 2,
                    min_nodes: int = 2, capacity: tuple[int, int] = (1, 10), rates=(0.5, 1.0, 2.0),
                    scalings=(1.0, 0.5, 2.0), full_availability: bool = False):
    """Network, services and demands drawn from ``seed``; the network is strongly connected."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_nodes, max_nodes + 1))
    nodes = [
        NodeSpec(u, float(rng.integers(1, 5)), int(rng.integers(capacity[0], capacity[1] + 1)))
        for u in range(1, n + 1)
    ]
    pairs = {(u, u % n + 1) for u in range(1, n + 1)} if n > 1 else set()
    for _ in range(int(rng.integers(0, n + 1))):
        a, b = (int(x) for x in rng.choice(np.arange(1, n + 1), 2, replace=False)) if n > 1 else (1, 1)
        if a != b:
            pairs.add((a, b))
    pairs |= {(b, a) for a, b in pairs}
    links = [
        LinkSpec(a, b, float(rng.integers(1, 4)), int(rng.integers(capacity[0], capacity[1] + 1)),
                 float(rng.choice([1.0, 2.0])))
        for a, b in sorted(pairs)
    ]
    network = CloudNetwork(nodes, links)
    services = []
    for phi in range(1, int(rng.integers(1, max_services + 1)) + 1):
        fns = []
        for _ in range(int(rng.integers(1, max_chain + 1))):
            if full_availability:
                avail = list(range(1, n + 1))
            else:
                k = int(rng.integers(1, n + 1))
                avail = sorted(int(u) for u in rng.choice(np.arange(1, n + 1), k, replace=False))
            fns.append(FunctionSpec({u: float(rng.choice([1.0, 2.0, 3.0])) for u in avail}, None,
                                    float(rng.choice(scalings))))
        services.append(ServiceSpec(phi, fns))
    demands = []
    seen = set()
    for _ in range(int(rng.integers(1, 4))):
        d = int(rng.integers(1, n + 1))
        phi = int(rng.integers(1, len(services) + 1))
        if (d, phi) in seen:
            continue
        seen.add((d, phi))
        k = int(rng.integers(1, min(2, n) + 1))
        srcs = rng.choice(np.arange(1, n + 1), k, replace=False)
        demands.append(Demand(d, phi, {int(s): float(rng.choice(rates)) for s in srcs}))
    return network, services, demands


def random_graph(seed: int, **kw):
    return build_augmented_graph(*random_instance(seed, **kw))
