import copy
import json
from importlib import resources

import pytest

from xl5g.netmodel import eid
from xl5g.ruleengine import TOY_DOMAIN
from xl5g.scenario import (
    ScenarioError,
    build_network,
    build_simulation,
    bundled_scenario,
    end_tick,
    load_scenario,
    parse_scenario,
    validate_network,
)


def demo_dict() -> dict:
    return json.loads(resources.files("xl5g.data").joinpath("demo_scenario.json").read_text())


def rules_of(layout) -> set:
    return {v.rule for v in validate_network(build_network(layout))}


def test_bundled_scenarios_parse():
    default = bundled_scenario()
    assert default.radii_m == tuple(float(r) for r in range(200, 2001, 200))
    assert default.n_users == 10_000 and default.grid_spacing_m == 100.0
    demo = bundled_scenario("demo_scenario.json")
    assert end_tick(demo) == 300
    assert validate_network(build_network(demo.network)) == []


def test_parse_defaults_and_errors():
    sc = parse_scenario({})
    assert sc.name == "scenario" and end_tick(sc) == 1000
    for bad in ({"seed": 1}, {"grid_spacing_m": 0}, {"radii_m": []}, {"qos": {"n_users": 0}},
                {"qos": {"strategies": ["Best"]}}, {"protocols": ["NR"]}, {"region": {"origin": [1]}}, []):
        with pytest.raises(ScenarioError):
            parse_scenario(bad)
    with pytest.raises(ScenarioError):
        load_scenario("{not json")


def test_overlapping_slices_are_reported():
    layout = demo_dict()["network"]
    layout["slices"].append({"slice_id": "op-c", "controller_id": "CONTROLLER:0", "regions": [{"dst_port": 80}]})
    assert "slice-overlap" in rules_of(layout)


def test_invalid_chain_is_reported():
    layout = demo_dict()["network"]
    layout["chains"] = [{"protocol_name": "broken", "modules": ["conv-coder", "gmsk-modulator"]}]
    layout["virtual_elements"][0]["chain"] = "broken"
    problems = validate_network(build_network(layout))
    (v,) = problems
    assert (str(v.element), v.rule) == ("VBBU:0", "invalid-chain") and "position 1" in v.detail


def test_construction_problems_are_collected():
    layout = demo_dict()["network"]
    layout["vrrus"].append({"prru": "PRRU:0", "protocol": "UMTS"})
    layout["links"].append({"src": "VRRU:2", "dst": "VBSC:0"})
    layout["virtual_elements"].append({"kind": "VBBU", "cpu_units": 64, "storage_units": 1})
    layout["virtual_elements"][2]["slice_id"] = "op-a"
    layout["vrrus"][1]["slice_id"] = "op-a"
    assert {"vrru", "layering", "resources"} <= rules_of(layout)


def test_structural_errors_raise():
    with pytest.raises(ScenarioError):
        build_network({"domain": "ipv6"})
    with pytest.raises(ScenarioError):
        build_network({"processors": [{"id": "PROCESSOR:0"}]})


def test_toy_domain_network():
    net = build_network({"domain": "toy", "controllers": ["CONTROLLER:0"],
                         "slices": [{"slice_id": "a", "controller_id": "CONTROLLER:0", "regions": [{"service_tag": 1}]}]})
    assert net.domain is TOY_DOMAIN and net.slices.get("a").space.domain is TOY_DOMAIN


def test_build_simulation_sets_interference_and_preloads():
    run, net = build_simulation(bundled_scenario("demo_scenario.json"), seed=1)
    assert run.agents[eid("VRRU:0")].interference_flag is True
    assert run.agents[eid("VRRU:1")].interference_flag is None
    assert set(run.agents[eid("VRRU:1")].flow_table.rules) == {1, 2}
    assert run.pending_packets() == 8  # seven packets and one QoS event
    assert net.interference == {eid("VRRU:0")}


def test_bad_simulation_section():
    data = demo_dict()
    bad = copy.deepcopy(data)
    bad["simulation"]["packets"][0]["packet"] = {"packet_id": "x"}
    with pytest.raises(ScenarioError):
        build_simulation(parse_scenario(bad), 42)
    bad = copy.deepcopy(data)
    bad["simulation"]["miss_policy"] = "Shrug"
    with pytest.raises(ScenarioError):
        build_simulation(parse_scenario(bad), 42)
