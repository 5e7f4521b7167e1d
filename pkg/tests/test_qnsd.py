import numpy as np
import pytest

from gen import random_graph
from nsdp.harness import build_bundled
from nsdp.model import CloudNetwork, Demand, FunctionSpec, LinkSpec, NodeSpec, ServiceSpec, build_augmented_graph
from nsdp.oracle import check_solution
from nsdp.qnsd import (
    QnsdParams,
    advance_queues,
    af_norm_sq,
    averaged_metrics,
    compute_b_bound,
    decide,
    edge_flow_bounds,
    init_state,
    processing_decision,
    run_qnsd,
    solution_construct,
    transport_decision,
)


def link_pair(w=2.0, cap=5, r_tr=1.0):
    """Two nodes, one link 1->2 and two stage-0 commodities waiting at node 1."""
    net = CloudNetwork([NodeSpec(1, 1.0, 10), NodeSpec(2, 1.0, 10)], [LinkSpec(1, 2, w, cap, r_tr)])
    services = [ServiceSpec(1, [FunctionSpec.uniform(1.0, [2])]), ServiceSpec(2, [FunctionSpec.uniform(1.0, [2])])]
    demands = [Demand(2, 1, {1: 1.0}), Demand(2, 2, {1: 1.0})]
    return build_augmented_graph(net, services, demands)


def single_node(w_u=3.0, c_u=10, r=2.0, xi=1.0, lam=1.0, dest_elsewhere=True):
    nodes = [NodeSpec(1, w_u, c_u), NodeSpec(2, 1.0, 10)]
    net = CloudNetwork(nodes, [LinkSpec(1, 2, 1.0, 10), LinkSpec(2, 1, 1.0, 10)])
    svc = ServiceSpec(1, [FunctionSpec({1: r}, None, xi)])
    return build_augmented_graph(net, [svc], [Demand(2 if dest_elsewhere else 1, 1, {1: lam})])


def two_node():
    return build_bundled("two-node").graph()


# queue recursions -----------------------------------------------------------


def test_queue_update_hand_example():
    Q, dQ, U = advance_queues(np.array([5.0]), np.array([5.0]), np.array([5.0]), np.array([2.0]), np.array([3.0]), 0.0)
    assert Q[0] == 4.0 and dQ[0] == -1.0 and U[0] == 4.0


def test_queue_update_clips_at_zero():
    Q, dQ, U = advance_queues(np.array([1.0]), np.array([1.0]), np.array([1.0]), np.array([0.0]), np.array([3.0]), 0.0)
    assert Q[0] == 0.0 and dQ[0] == -1.0


def test_virtual_queue_momentum_hand_example():
    Q, dQ, U = advance_queues(np.array([2.0]), np.array([10.0]), np.array([8.0]), np.array([1.0]), np.array([1.0]), 0.9)
    assert dQ[0] == 0.0
    assert U[0] == pytest.approx(11.8, abs=1e-12)


def test_virtual_queue_not_clipped():
    _, _, U = advance_queues(np.array([0.0]), np.array([-1.0]), np.array([0.0]), np.array([0.0]), np.array([0.0]), 0.5)
    assert U[0] == pytest.approx(-1.5)


def test_theta_zero_keeps_u_equal_q_exactly():
    g = build_bundled("abilene-fractional").graph()

    def cb(state):
        assert np.array_equal(state.Q, state.U_cur)

    run_qnsd(g, params=QnsdParams(V=40.0, theta=0.0, max_iters=400), callback=cb)


# decisions ------------------------------------------------------------------


def test_transport_picks_largest_differential():
    g = link_pair()
    U = np.zeros((2, g.n_commodities))
    k0 = g.commodity_index[(2, 1, 0)]
    k1 = g.commodity_index[(2, 2, 0)]
    U[0, k0], U[0, k1] = 10.0, 6.0
    y, f = transport_decision(U, g, 0, 1.0)
    assert y == 5.0
    assert f[k0] == 5.0 and f[k1] == 0.0


def test_transport_nothing_when_differentials_nonpositive():
    g = link_pair()
    U = np.zeros((2, g.n_commodities))
    U[1, :] = 3.0
    y, f = transport_decision(U, g, 0, 1.0)
    assert y == 0.0 and not f.any()


def test_transport_strict_threshold():
    g = link_pair(w=2.0)
    U = np.zeros((2, g.n_commodities))
    U[0, 0] = 2.0  # W - V w == 0 exactly
    y, f = transport_decision(U, g, 0, 1.0)
    assert y == 0.0 and not f.any()


def test_transport_ties_break_lexicographically():
    g = link_pair()
    U = np.zeros((2, g.n_commodities))
    U[0, :] = 7.0
    _, f = transport_decision(U, g, 0, 1.0)
    assert f[0] == 5.0 and f[1:].sum() == 0.0


def test_transport_divides_by_requirement():
    g = link_pair(w=1.0, cap=6, r_tr=3.0)
    U = np.zeros((2, g.n_commodities))
    U[0, 0] = 6.0  # W = 2 > 1
    y, f = transport_decision(U, g, 0, 1.0)
    assert y == 6.0 and f[0] == 2.0


def test_processing_hand_example():
    g = single_node()
    U = np.zeros((2, g.n_commodities))
    U[0, 0], U[0, 1] = 12.0, 2.0
    y_in, y_out, f_in, f_out = processing_decision(U, g, 1, 1.0)
    assert y_in == 10.0 and y_out == 1.0 * min(10.0, g.cloud_max[0])
    assert f_in[0] == 5.0 and f_out[1] == 5.0
    assert f_in[1:].sum() == 0.0 and f_out[0] == 0.0


def test_processing_flow_scaling():
    g = single_node(xi=2.0)
    U = np.zeros((2, g.n_commodities))
    U[0, 0], U[0, 1] = 12.0, 2.0
    _, _, f_in, f_out = processing_decision(U, g, 1, 1.0)
    assert f_in[0] == 5.0 and f_out[1] == 10.0


def test_processing_skips_final_stage():
    g = single_node()
    U = np.zeros((2, g.n_commodities))
    U[0, 1] = 100.0  # only the final commodity is backlogged
    y_in, y_out, f_in, f_out = processing_decision(U, g, 1, 1.0)
    assert y_in == 0.0 and y_out == 0.0 and not f_in.any() and not f_out.any()


# frame averaging --------------------------------------------------------------


def test_frame_resets_at_powers_of_two():
    g = two_node()
    state = init_state(g)
    starts = []
    for t in range(1, 10):
        state.t = t
        solution_construct(state, g)
        if state.t_start == t:
            starts.append(t)
    assert starts == [1, 2, 4, 8]


def test_frame_average_of_constants_and_alternation():
    g = two_node()
    state = init_state(g)
    e = g.compute_in(1)
    for t in range(1, 8):
        state.t = t
        state.resources = np.zeros(g.n_edges)
        state.resources[e] = 10.0 if t % 2 else 0.0
        solution_construct(state, g)
    _, y = state.averages()  # frame t = 4..7
    assert y[e] == 5.0
    f, _ = state.averages()
    src = g.source_edge(1)
    assert f[src, 0] == 1.0  # constant injection averages to itself


def test_no_truncation_single_frame():
    g = two_node()
    state = init_state(g)
    for t in range(1, 20):
        state.t = t
        solution_construct(state, g, truncate=False)
    assert state.t_start == 1 and state.count == 19


# initialisation and runs ------------------------------------------------------


def test_init_state():
    g = build_bundled("abilene-integer").graph()
    s = init_state(g)
    assert not s.Q.any() and not s.U_cur.any() and not s.resources.any()
    assert float(g.unit_cost @ s.resources) == 0.0
    src = g.source_edge(2)
    assert s.flows[src, g.commodity_index[(7, 1, 0)]] == 1.0
    assert s.flows.sum() == 2.0


def test_injection_reaches_queue_every_iteration():
    g = two_node()
    seen = []

    def cb(state):
        seen.append(state.flows[g.source_edge(1), 0])

    run_qnsd(g, params=QnsdParams(V=20.0, max_iters=50), callback=cb)
    assert seen == [1.0] * 50


def test_destination_pin():
    g = build_bundled("abilene-integer").graph()

    def cb(state):
        assert not state.Q[g.pinned].any() and not state.U_cur[g.pinned].any()

    run_qnsd(g, params=QnsdParams(V=1000.0, theta=0.9, max_iters=300), callback=cb)


def test_zero_demand_run():
    net = CloudNetwork([NodeSpec(1, 1.0, 10), NodeSpec(2, 3.0, 10)], [LinkSpec(1, 2, 1.0, 10)])
    g = build_augmented_graph(net, [ServiceSpec(1, [FunctionSpec.uniform(1.0, [1, 2])])], [])
    sol, trace = run_qnsd(g, params=QnsdParams(V=10.0, max_iters=50, trace_every=1))
    assert sol.cost == 0.0 and sol.max_violation == 0.0
    assert all(r.cost_avg == 0.0 and r.max_violation == 0.0 for r in trace.rows)


def test_two_node_converges_to_two():
    # 2**14 - 1 closes a full frame
    sol, _ = run_qnsd(two_node(), params=QnsdParams(V=20.0, max_iters=2**14 - 1))
    assert sol.cost == pytest.approx(2.0, rel=0.02)
    assert sol.max_violation <= 1e-2
    assert sol.converged


def test_trace_stride():
    _, trace = run_qnsd(two_node(), params=QnsdParams(V=20.0, max_iters=3, trace_every=1))
    assert [r.iteration for r in trace.rows] == [1, 2, 3]
    _, trace = run_qnsd(two_node(), params=QnsdParams(V=20.0, max_iters=100, trace_every=10))
    assert [r.iteration for r in trace.rows] == list(range(10, 101, 10))


def test_params_validation():
    with pytest.raises(ValueError):
        QnsdParams(V=0.0)
    with pytest.raises(ValueError):
        QnsdParams(V=1.0, theta=1.0)
    with pytest.raises(ValueError):
        QnsdParams(V=1.0, theta=-0.1)


def test_runs_are_bit_identical():
    g = build_bundled("abilene-fractional").graph()
    p = QnsdParams(V=40.0, theta=0.5, max_iters=500, trace_every=1)
    a, ta = run_qnsd(g, params=p)
    b, tb = run_qnsd(g, params=p)
    assert ta.rows == tb.rows
    assert np.array_equal(a.avg_flows, b.avg_flows)


@pytest.mark.parametrize(
    "name,V,theta",
    [("abilene-fractional", 300.0, 0.9), ("abilene-fractional", 40.0, 0.0), ("abilene-integer-half", 100.0, 0.9)],
)
def test_last_frame_violation_is_smallest(name, V, theta):
    # End-of-frame violation (t = 2^k - 1) need not fall at every frame, but the
    # final frame is the best one seen.
    g = build_bundled(name).graph()
    ends = []

    def cb(state):
        if (state.t + 1) & state.t == 0:
            ends.append(averaged_metrics(g, state)[1])

    run_qnsd(g, params=QnsdParams(V=V, theta=theta, max_iters=2**13 - 1), callback=cb)
    assert ends[-1] == min(ends) and ends[-1] < ends[0]


# B bound -------------------------------------------------------------------------


def test_b_bound_single_node_hand_value():
    net = CloudNetwork([NodeSpec(1, 1.0, 10)], [])
    g = build_augmented_graph(net, [ServiceSpec(1, [FunctionSpec.uniform(2.0, [1])])], [Demand(1, 1, {1: 3.0})])
    F = edge_flow_bounds(g)
    assert F[g.compute_in(1)] == 5.0 and F[g.compute_out(1)] == 5.0
    assert F[g.source_edge(1)] == 3.0 and F[g.sink_edge(1)] == 5.0
    assert compute_b_bound(g) == pytest.approx(164.0)


def test_b_bound_single_node_brute_force():
    # the worst single-iteration net flow never exceeds B on the tiny instance
    net = CloudNetwork([NodeSpec(1, 1.0, 10)], [])
    g = build_augmented_graph(net, [ServiceSpec(1, [FunctionSpec.uniform(2.0, [1])])], [Demand(1, 1, {1: 3.0})])
    B = compute_b_bound(g)
    worst = 0.0
    for f_in in np.linspace(0, 5, 11):
        for sink in np.linspace(0, 5, 11):
            flows = g.injection.copy()
            flows[g.compute_in(1), 0] = f_in
            flows[g.compute_out(1), 1] = f_in
            flows[g.sink_edge(1), 1] = sink
            worst = max(worst, af_norm_sq(g, flows))
    assert worst <= B


def test_b_bound_zero_for_empty_instance():
    net = CloudNetwork([NodeSpec(1, 1.0, 0), NodeSpec(2, 1.0, 0)], [LinkSpec(1, 2, 1.0, 0)])
    g = build_augmented_graph(net, [ServiceSpec(1, [FunctionSpec.uniform(1.0, [1])])], [])
    assert compute_b_bound(g) == 0.0


def test_b_bound_scales_quadratically():
    def inst(k):
        net = CloudNetwork(
            [NodeSpec(1, 1.0, 4 * k), NodeSpec(2, 2.0, 6 * k)],
            [LinkSpec(1, 2, 1.0, 3 * k, 2.0), LinkSpec(2, 1, 1.0, 5 * k)],
        )
        svc = ServiceSpec(1, [FunctionSpec.uniform(2.0, [1, 2]), FunctionSpec.uniform(1.0, [2])])
        return build_augmented_graph(net, [svc], [Demand(2, 1, {1: 1.5 * k})])

    assert compute_b_bound(inst(2)) == pytest.approx(4 * compute_b_bound(inst(1)))


@pytest.mark.parametrize("seed", range(10))
def test_af_norm_within_b_every_iteration(seed):
    g = random_graph(seed)
    B = compute_b_bound(g)

    def cb(state):
        assert af_norm_sq(g, state.flows) <= B * (1 + 1e-12)

    run_qnsd(g, params=QnsdParams(V=10.0, theta=0.5, max_iters=300), callback=cb)


# solution feasibility -------------------------------------------------------------------


def test_two_node_average_checks():
    g = two_node()
    sol, _ = run_qnsd(g, params=QnsdParams(V=20.0, max_iters=5000))
    rep = check_solution(g, None, None, sol)
    assert rep.chaining_ok and rep.capacity_ok and rep.source_ok and rep.sink_ok
    assert rep.max_conservation_violation <= 1e-2


def test_decide_single_commodity_per_edge():
    g = build_bundled("abilene-fractional").graph()
    rng = np.random.default_rng(0)
    for _ in range(20):
        U = rng.normal(scale=200.0, size=(g.n, g.n_commodities))
        U[g.pinned] = 0.0
        _, flows = decide(g, U, 10.0)
        costly = np.concatenate([g.network_edges, g.cin_edges])
        assert np.all((flows[costly] > 0).sum(axis=1) <= 1)
