import json

import numpy as np
import pytest
import yaml

from gen import random_instance
from nsdp.harness import (
    ABILENE_EDGES,
    BUNDLED,
    TRACE_HEADER,
    Scenario,
    ScenarioError,
    build_bundled,
    bundled_path,
    dump_scenario,
    emit_solution,
    emit_trace,
    format_number,
    load_scenario,
    parse_scenario,
    processing_allocation,
    read_trace,
    scenario_from_parts,
)
from nsdp.oracle import solve_fractional_lp
from nsdp.qnsd import QnsdParams, Trace, TraceRow, run_qnsd


@pytest.mark.parametrize("name", BUNDLED)
def test_packaged_fixture_matches_builder(name):
    assert load_scenario(name) == build_bundled(name)


def test_abilene_fractional_shape():
    sc = load_scenario("abilene-fractional")
    assert sc.network.n == 11 and sc.network.m == 28
    assert len(sc.services) == 2
    assert sum(len(d.sources) for d in sc.demands) == 18


def test_abilene_integer_shape():
    sc = load_scenario("abilene-integer")
    pairs = sorted((s, d.destination) for d in sc.demands for s in d.sources)
    assert pairs == [(1, 11), (2, 7)]
    assert len(sc.services) == 1 and sc.services[0].length == 1


@pytest.mark.parametrize("name", ["abilene-fractional", "abilene-integer", "abilene-integer-half"])
def test_abilene_encodings(name):
    sc = load_scenario(name)
    for nd in sc.network.nodes:
        assert nd.cloud_capacity == 10
        assert nd.cloud_unit_cost == (1.0 if nd.id in (5, 6) else 3.0)
    for ln in sc.network.links:
        assert (ln.net_capacity, ln.net_unit_cost, ln.transport_req) == (10, 1.0, 1.0)


def test_abilene_service_requirements():
    sc = load_scenario("abilene-fractional")
    reqs = [{fn.proc_req[u] for u in range(1, 12)} for svc in sc.services for fn in svc.functions]
    assert reqs == [{1.0}, {3.0}, {2.0}, {2.0}]


def test_topology_mapping_file():
    doc = yaml.safe_load(bundled_path("abilene-fractional").with_name("abilene-topology.yaml").read_text())
    assert doc["reconstructed"] is True
    assert [tuple(p) for p in doc["links"]] == list(ABILENE_EDGES)
    links = {(ln.source, ln.target) for ln in load_scenario("abilene-integer").network.links}
    path = [1, 2, 4, 5, 7, 10, 11]
    assert all((a, b) in links for a, b in zip(path, path[1:]))


@pytest.mark.parametrize("seed", range(15))
def test_round_trip_random(seed, tmp_path):
    net, services, demands = random_instance(seed)
    sc = scenario_from_parts(f"r{seed}", net, services, demands, QnsdParams(V=12.5, theta=0.25, max_iters=7))
    p = tmp_path / "s.yaml"
    dump_scenario(sc, p)
    assert load_scenario(p) == sc


def write(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    return p


def test_malformed_yaml_reports_position(tmp_path):
    with pytest.raises(ScenarioError, match=r"line \d+, column \d+"):
        load_scenario(write(tmp_path, "network:\n  nodes: [\n"))


def test_missing_field_is_named(tmp_path):
    doc = yaml.safe_load(dump_scenario(build_bundled("two-node")))
    del doc["network"]["links"][0]["net_capacity"]
    with pytest.raises(ScenarioError, match=r"network.links\[0\].*net_capacity"):
        load_scenario(write(tmp_path, yaml.safe_dump(doc)))


def test_validation_error_names_the_problem(tmp_path):
    doc = yaml.safe_load(dump_scenario(build_bundled("two-node")))
    doc["demands"][0]["destination"] = 9
    with pytest.raises(ScenarioError, match="9"):
        load_scenario(write(tmp_path, yaml.safe_dump(doc)))


def test_missing_file_and_unknown_name():
    with pytest.raises(ScenarioError):
        load_scenario("/nonexistent/scenario.yaml")
    with pytest.raises(ScenarioError):
        bundled_path("nope")


def test_scalar_proc_req_shorthand():
    doc = yaml.safe_load(dump_scenario(build_bundled("two-node")))
    doc["services"][0]["functions"][0] = {"proc_req": 1}
    sc = parse_scenario(doc)
    assert sc.services == build_bundled("two-node").services


# traces and solutions --------------------------------------------------------------------------


def test_format_number_nine_significant_digits():
    assert format_number(0.0) == "0"
    assert format_number(2.0) == "2"
    assert format_number(1 / 3) == "0.333333333"
    assert format_number(246.00000000012) == "246"
    assert format_number(1234567891234.0) == "1234567890000"
    assert "e" not in format_number(1e-12)


def test_trace_rows_and_header(tmp_path):
    g = build_bundled("two-node").graph()
    _, trace = run_qnsd(g, params=QnsdParams(V=20.0, max_iters=3, trace_every=1))
    p = tmp_path / "t.csv"
    emit_trace(trace, p)
    lines = p.read_text().splitlines()
    assert lines[0] == TRACE_HEADER == "iteration,frame,cost_avg,max_violation"
    assert len(lines) == 4
    assert read_trace(p).rows == [TraceRow(r.iteration, r.frame, float(format_number(r.cost_avg)),
                                            float(format_number(r.max_violation))) for r in trace.rows]


def test_empty_trace_is_header_only(tmp_path):
    g = build_bundled("two-node").graph()
    _, trace = run_qnsd(g, params=QnsdParams(V=20.0, max_iters=0))
    p = tmp_path / "t.csv"
    emit_trace(trace, p)
    assert p.read_text() == TRACE_HEADER + "\n"


def test_read_trace_rejects_other_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    with pytest.raises(ScenarioError):
        read_trace(p)


def test_solution_document(tmp_path):
    g = build_bundled("two-node").graph()
    sol, _ = run_qnsd(g, params=QnsdParams(V=20.0, max_iters=200))
    p = tmp_path / "s.json"
    emit_solution(g, sol, p, "qnsd", "two-node")
    doc = json.loads(p.read_text())
    assert doc["algorithm"] == "qnsd" and doc["scenario"] == "two-node"
    assert doc["cost"] == pytest.approx(sol.cost)
    assert {"avg_flows", "avg_resources", "processing_allocation", "max_violation"} <= set(doc)
    assert "integer" not in doc
    total = sum(e["units"] * g.unit_cost[[ed.label() for ed in g.edges].index(e["edge"])] for e in doc["avg_resources"])
    assert total == pytest.approx(sol.cost)


def test_processing_allocation_saturates_cheap_nodes():
    g = build_bundled("abilene-fractional").graph()
    lp = solve_fractional_lp(g)
    alloc = processing_allocation(g, lp.flows)
    for u in (5, 6):
        assert sum(alloc[u].values()) == pytest.approx(10.0)
    sol, _ = run_qnsd(g, params=QnsdParams(V=300.0, theta=0.9, max_iters=15000))
    alloc = processing_allocation(g, sol.avg_flows)
    for u in (5, 6):
        assert sum(alloc[u].values()) == pytest.approx(10.0, abs=0.2)


def test_scenario_is_immutable():
    sc = build_bundled("two-node")
    assert isinstance(sc, Scenario)
    with pytest.raises(AttributeError):
        sc.name = "x"  # type: ignore[misc]
