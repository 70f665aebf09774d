"""Scenario files: one JSON document describing a sweep and/or a network.

A scenario carries the study region, grid spacing, radii and
controller thresholds for the sweeps, plus an optional ``network``
section (processors, pRRUs, slices, virtual elements, links) and a
``simulation`` section (pre-loaded rules, packets, QoS events) used by
``simulate`` and ``validate``. Unknown top-level keys are a config error.
The random seed is not part of a scenario; it comes from the caller.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from .controlplane import ControlPlane, EventLog, GlobalViewDB, QosEvent, Thresholds
from .dataplane_sim import DEFAULT_STATUS_EPOCH, SimRun
from .experiments import DEFAULT_RADII_M, STRATEGIES
from .geo_dataset import DEFAULT_GRID_SPACING_M, MANCHESTER_REGION, GeoPoint, Region
from .netmodel import (
    PRRU,
    Controller,
    ElementKind,
    PhysicalProcessor,
    PlanarPoint,
    Protocol,
    Topology,
    TopologyError,
    Violation,
    eid,
)
from .protocol_lib import (
    LibraryError,
    ModuleLibrary,
    StageKind,
    WirelessModule,
    chain_from_dict,
    default_library,
    find_chain,
    validate_chain,
)
from .resources import InsufficientResources, ResourcePool, ResourceRequest
from .ruleengine import IPV4_DOMAIN, TOY_DOMAIN, MissPolicy, Packet, RuleError, rule_from_dict
from .virtualization import (
    DuplicateProtocolOnPRRU,
    SliceError,
    SliceRegistry,
    attach_vrru,
    create_virtual_element,
    flowspace_from_dict,
)

DOMAINS = {"ipv4": IPV4_DOMAIN, "toy": TOY_DOMAIN}
TOP_LEVEL_KEYS = {
    "name", "region", "grid_spacing_m", "radii_m", "protocols", "thresholds",
    "qos", "schema", "network", "simulation",
}


class ScenarioError(Exception):
    """Malformed scenario document (a configuration error)."""


@dataclass
class Scenario:
    name: str = "scenario"
    region: Region = MANCHESTER_REGION
    grid_spacing_m: float = DEFAULT_GRID_SPACING_M
    radii_m: tuple = DEFAULT_RADII_M
    protocols: tuple = (Protocol.GSM, Protocol.UMTS)
    thresholds: Thresholds = Thresholds()
    n_users: int = 10_000
    strategies: tuple = STRATEGIES
    protocol_for_1to3: Protocol = Protocol.UMTS
    schema: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)


def _region(data: dict) -> Region:
    try:
        lat, lon = data["origin"]
        return Region(GeoPoint(float(lat), float(lon)), float(data.get("width_m", 10_000.0)),
                      float(data.get("height_m", 10_000.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad region: {exc}") from None


def parse_scenario(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    sc = Scenario()
    try:
        sc.name = str(data.get("name", sc.name))
        if "region" in data:
            sc.region = _region(data["region"])
        sc.grid_spacing_m = float(data.get("grid_spacing_m", sc.grid_spacing_m))
        if sc.grid_spacing_m <= 0:
            raise ScenarioError("grid_spacing_m must be positive")
        if "radii_m" in data:
            sc.radii_m = tuple(float(r) for r in data["radii_m"])
            if not sc.radii_m or any(r <= 0 for r in sc.radii_m):
                raise ScenarioError("radii_m must be a non-empty list of positive radii")
        if "protocols" in data:
            sc.protocols = tuple(Protocol(p) for p in data["protocols"])
        if "thresholds" in data:
            sc.thresholds = Thresholds(**{k: float(v) for k, v in data["thresholds"].items()})
        qos = data.get("qos", {})
        sc.n_users = int(qos.get("n_users", sc.n_users))
        if sc.n_users <= 0:
            raise ScenarioError("qos.n_users must be positive")
        if "strategies" in qos:
            bad = [s for s in qos["strategies"] if s not in STRATEGIES]
            if bad:
                raise ScenarioError(f"unknown strategies: {bad}")
            sc.strategies = tuple(qos["strategies"])
        sc.protocol_for_1to3 = Protocol(qos.get("protocol_for_1to3", sc.protocol_for_1to3))
        sc.schema = dict(data.get("schema", {}))
        sc.network = dict(data.get("network", {}))
        sc.simulation = dict(data.get("simulation", {}))
    except ScenarioError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ScenarioError(str(exc)) from None
    return sc


def load_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from None
    return parse_scenario(data)


def bundled_scenario(name: str = "default_scenario.json") -> Scenario:
    return load_scenario(resources.files("xl5g.data").joinpath(name).read_text())


# network construction


@dataclass
class Network:
    topology: Topology
    pool: ResourcePool
    slices: SliceRegistry
    library: ModuleLibrary
    domain: object = IPV4_DOMAIN
    interference: frozenset = frozenset()
    problems: list = field(default_factory=list)  # Violation records found while building


def build_network(layout: dict) -> Network:
    """Build a network from a scenario's ``network`` section.

    Construction errors that a validator should report (overlapping
    slices, invalid chains, exhausted processors, bad links) are
    collected as violations; structural mistakes raise ScenarioError.
    """
    try:
        domain = DOMAINS[layout.get("domain", "ipv4")]
    except KeyError:
        raise ScenarioError(f"unknown header domain {layout.get('domain')!r}") from None
    problems = []
    topo = Topology()
    library = default_library()
    try:
        for m in layout.get("modules", ()):
            library.register(WirelessModule(m["name"], StageKind[m["in_stage"]], StageKind[m["out_stage"]],
                                            dict(m.get("params", {}))))
        chains = {c["protocol_name"]: chain_from_dict(c) for c in layout.get("chains", ())}

        for p in layout.get("processors", ()):
            topo.add_element(PhysicalProcessor(eid(p["id"]), int(p["cpu_units"]), int(p["storage_units"])))
        for c in layout.get("controllers", ()):
            topo.add_element(Controller(eid(c)))
        for r in layout.get("prrus", ()):
            topo.add_element(PRRU(eid(r["id"]), PlanarPoint(float(r.get("x_m", 0.0)), float(r.get("y_m", 0.0)))))
        pool = ResourcePool.from_topology(topo)

        registry = SliceRegistry()
        for s in layout.get("slices", ()):
            space = flowspace_from_dict(s["regions"], domain)
            try:
                registry.create_slice(space, eid(s["controller_id"]), slice_id=s["slice_id"])
            except SliceError as exc:
                problems.append(Violation(eid(s["controller_id"]), "slice-overlap", f"{s['slice_id']}: {exc}"))

        for v in layout.get("vrrus", ()):
            try:
                vrru = attach_vrru(topo, eid(v["prru"]), Protocol(v["protocol"]), v.get("slice_id"))
            except (DuplicateProtocolOnPRRU, TopologyError) as exc:
                problems.append(Violation(eid(v["prru"]), "vrru", str(exc)))
                continue
            _bind(registry, vrru, problems)

        for e in layout.get("virtual_elements", ()):
            kind = ElementKind(e["kind"])
            protocol = Protocol(e["protocol"]) if e.get("protocol") else None
            request = ResourceRequest(int(e.get("cpu_units", 1)), int(e.get("storage_units", 1)))
            index = e.get("index")
            try:
                element = create_virtual_element(kind, protocol, request, topo, pool, e.get("slice_id"), index)
            except InsufficientResources as exc:
                problems.append(Violation(eid(f"{kind.value}:{index if index is not None else topo.next_index(kind)}"),
                                          "resources", str(exc)))
                continue
            if e.get("chain"):
                try:
                    chain = find_chain(e["chain"], chains)
                except LibraryError as exc:
                    problems.append(Violation(element.id, "invalid-chain", str(exc)))
                    continue
                verdict = validate_chain(library, chain)
                if not verdict:
                    problems.append(Violation(element.id, "invalid-chain",
                                              f"{chain.protocol_name} position {verdict.position}: {verdict.reason}"))
                    continue
                element = replace(element, deployed_chain=chain)
                topo.replace_element(element)
            _bind(registry, element, problems)

        for link in layout.get("links", ()):
            a, b = eid(link["src"]), eid(link["dst"])
            try:
                topo.add_link(a, b, float(link.get("capacity_mbps", 10_000.0)))
            except TopologyError as exc:
                rule = type(exc).__name__.replace("Error", "").lower()
                problems.append(Violation(a, rule, str(exc)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad network section: {exc!r}") from None

    interference = frozenset(eid(x) for x in layout.get("interference", ()))
    return Network(topo, pool, registry, library, domain, interference, problems)


def _bind(registry: SliceRegistry, element, problems: list) -> None:
    if element.slice_id is None:
        return
    try:
        registry.bind(element.slice_id, element.id)
    except SliceError as exc:
        problems.append(Violation(element.id, "slice", str(exc)))


def validate_network(net: Network) -> list:
    """Construction problems plus every topology and slice invariant violation."""
    out = list(net.problems)
    out.extend(net.topology.validate(net.library))
    for a, b in net.slices.overlaps():
        out.append(Violation(net.slices.get(a).controller_id, "slice-overlap", f"{a} and {b}"))
    return out


# simulation


def build_simulation(sc: Scenario, seed: int, log: Optional[EventLog] = None) -> tuple:
    """Return ``(run, network)`` ready to ``run_until`` the scenario's end tick."""
    net = build_network(sc.network)
    sim = sc.simulation
    try:
        miss_policy = MissPolicy(sim.get("miss_policy", MissPolicy.TO_CONTROLLER.value))
        status_epoch = int(sim.get("status_epoch", DEFAULT_STATUS_EPOCH))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    db = GlobalViewDB(net.topology, net.slices, net.library)
    controller = ControlPlane(db, sc.thresholds, log if log is not None else EventLog())
    run = SimRun(net.topology, controller, rng_seed=seed, miss_policy=miss_policy, status_epoch=status_epoch)
    for element_id in net.interference:
        if element_id in run.agents:
            run.agents[element_id].interference_flag = True
    try:
        for item in sim.get("rules", ()):
            run.install(eid(item["element"]), rule_from_dict(item["rule"], net.domain))
        for item in sim.get("packets", ()):
            run.inject_packet(eid(item["element"]), Packet.from_dict(item["packet"], net.domain),
                              int(item.get("at_tick", 0)))
        for item in sim.get("qos_events", ()):
            event = QosEvent(int(item["user_id"]), eid(item["serving_cell"]), float(item["utility"]),
                             bool(item.get("at_boundary", False)), item.get("service_tag"))
            run.schedule_qos_event(event, int(item.get("at_tick", 0)))
    except (KeyError, TypeError, ValueError, RuleError) as exc:
        raise ScenarioError(f"bad simulation section: {exc!r}") from None
    return run, net


def end_tick(sc: Scenario) -> int:
    return int(sc.simulation.get("end_tick", 1000))
