"""Logically centralized controller.

Holds the global-view database, turns QoS events into cross-layer
decisions (flow rules for the network layer, PHY rules for vBBUs) and
pushes them to data-plane agents with slice admission enforced. Every
decision and delivery is written to a line-delimited JSON event log.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Optional, Union

from .netmodel import ElementId, ElementKind, Topology, UnknownElementError, VirtualElement
from .ruleengine import (
    Beamform,
    CancelInterference,
    FlowMatch,
    FlowRule,
    Forward,
    Packet,
    PhyMatch,
    PhyRule,
    Prefix,
)
from .virtualization import Slice, SliceRegistry, admit_rule

log = logging.getLogger(__name__)

HISTORY_LIMIT = 64


class ControlError(Exception):
    pass


class NotFound(LookupError):
    pass


class TimestampRegression(ControlError):
    pass


@dataclass(frozen=True)
class StatusReport:
    element_id: ElementId
    timestamp: int
    load_pct: float = 0.0
    user_count: int = 0
    min_user_utility: Optional[float] = None
    boundary_interference_flag: Optional[bool] = None

    def __post_init__(self):
        if not 0.0 <= self.load_pct <= 100.0:
            raise ValueError(f"load_pct {self.load_pct} outside [0, 100]")
        if self.user_count < 0:
            raise ValueError("user_count must be non-negative")
        if self.min_user_utility is not None and not 0.0 <= self.min_user_utility <= 1.0:
            raise ValueError(f"min_user_utility {self.min_user_utility} outside [0, 1]")

    def to_dict(self) -> dict:
        out = {
            "element": str(self.element_id),
            "timestamp": self.timestamp,
            "load_pct": self.load_pct,
            "user_count": self.user_count,
        }
        if self.min_user_utility is not None:
            out["min_user_utility"] = self.min_user_utility
        if self.boundary_interference_flag is not None:
            out["boundary_interference_flag"] = self.boundary_interference_flag
        return out


class GlobalViewDB:
    """Static configuration plus the latest and recent status of every element."""

    def __init__(self, topology: Topology, slices: Optional[SliceRegistry] = None,
                 library=None, history_limit: int = HISTORY_LIMIT):
        self.topology = topology
        self.slices = slices if slices is not None else SliceRegistry()
        self.library = library
        self.history_limit = history_limit
        self.latest: dict = {}
        self.history: dict = {}
        self.regression_count = 0
        self.rejected_unknown = 0

    def report_status(self, report: StatusReport) -> "GlobalViewDB":
        if report.element_id not in self.topology:
            self.rejected_unknown += 1
            raise UnknownElementError(f"status report from unknown element {report.element_id}")
        prev = self.latest.get(report.element_id)
        if prev is not None and report.timestamp < prev.timestamp:
            self.regression_count += 1
            raise TimestampRegression(
                f"{report.element_id}: timestamp {report.timestamp} < {prev.timestamp}"
            )
        self.latest[report.element_id] = report
        self.history.setdefault(report.element_id, deque(maxlen=self.history_limit)).append(report)
        return self

    def query_latest(self, element_id: ElementId) -> StatusReport:
        if element_id not in self.topology:
            raise UnknownElementError(f"unknown element {element_id}")
        try:
            return self.latest[element_id]
        except KeyError:
            raise NotFound(f"no status reported by {element_id}") from None

    def load_of(self, element_id: ElementId) -> float:
        report = self.latest.get(element_id)
        return report.load_pct if report is not None else 0.0

    def slice_of(self, element_id: ElementId) -> Optional[Slice]:
        s = self.slices.slice_of_element(element_id)
        if s is not None:
            return s
        element = self.topology.elements.get(element_id)
        sid = getattr(element, "slice_id", None)
        return self.slices.slices.get(sid) if sid is not None else None


def report_status(db: GlobalViewDB, report: StatusReport) -> GlobalViewDB:
    return db.report_status(report)


def query_latest(db: GlobalViewDB, element_id: ElementId) -> StatusReport:
    return db.query_latest(element_id)


@dataclass(frozen=True)
class QosEvent:
    user_id: int
    serving_cell: ElementId
    utility: float
    at_boundary: bool = False
    service_tag: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.utility <= 1.0:
            raise ValueError(f"utility {self.utility} outside [0, 1]")

    @property
    def tag(self) -> Optional[int]:
        return self.service_tag if self.service_tag is not None else self.user_id


@dataclass(frozen=True)
class Thresholds:
    beamform: float = 0.3
    reroute: float = 0.5


@dataclass(frozen=True)
class FlowInstall:
    target: ElementId
    rule: FlowRule
    slice_id: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"target": str(self.target), "rule": self.rule.to_dict()}
        if self.slice_id is not None:
            out["slice_id"] = self.slice_id
        return out


@dataclass(frozen=True)
class PhyInstall:
    target: ElementId
    rule: PhyRule

    def to_dict(self) -> dict:
        return {"target": str(self.target), "rule": self.rule.to_dict()}


Install = Union[FlowInstall, PhyInstall]


@dataclass(frozen=True)
class JointDecision:
    flow_installs: tuple = ()
    phy_installs: tuple = ()

    def __len__(self) -> int:
        return len(self.flow_installs) + len(self.phy_installs)

    def installs(self) -> list:
        return list(self.phy_installs) + list(self.flow_installs)

    def to_dict(self) -> dict:
        return {
            "flow_installs": [i.to_dict() for i in self.flow_installs],
            "phy_installs": [i.to_dict() for i in self.phy_installs],
        }


DECISION_PRIORITY = 100
REACTIVE_PRIORITY = 10


def _serving_vbbu(topology: Topology, cell: ElementId) -> ElementId:
    if cell.kind is ElementKind.VBBU:
        return cell
    for nxt in topology.successors(cell):
        if nxt.kind is ElementKind.VBBU:
            return nxt
    raise ControlError(f"no vBBU serves {cell}")


def joint_optimize(db: GlobalViewDB, event: QosEvent, thresholds: Thresholds = Thresholds(),
                   next_rule_id: int = 0) -> JointDecision:
    """Decide PHY and flow-rule installs for one QoS event.

    Pure in (db, event, thresholds, next_rule_id); rule ids are drawn
    consecutively from ``next_rule_id``.
    """
    cell = event.serving_cell
    if cell not in db.topology:
        raise UnknownElementError(f"unknown serving cell {cell}")
    rule_ids = iter(range(next_rule_id, next_rule_id + 3))
    phy, flow = [], []

    if event.utility < thresholds.beamform:
        vbbu = _serving_vbbu(db.topology, cell)
        gain = round(min(1.0, max(0.0, 1.0 - event.utility)), 6)
        group = event.user_id if isinstance(event.user_id, int) else None
        phy.append(PhyInstall(vbbu, PhyRule(
            next(rule_ids), DECISION_PRIORITY,
            PhyMatch(cell_id=cell, user_group=group),
            (Beamform(event.user_id, gain),),
        )))

    serving_report = db.latest.get(cell)
    if event.at_boundary and serving_report is not None and serving_report.boundary_interference_flag:
        neighbours = [
            (-r.user_count, eid_)
            for eid_, r in db.latest.items()
            if eid_ != cell and eid_.kind is cell.kind
        ]
        if neighbours:
            strongest = min(neighbours)[1]
            vbbu = _serving_vbbu(db.topology, cell)
            phy.append(PhyInstall(vbbu, PhyRule(
                next(rule_ids), DECISION_PRIORITY,
                PhyMatch(cell_id=cell),
                (CancelInterference(strongest),),
            )))

    if event.utility < thresholds.reroute:
        slice_ = db.slice_of(cell)
        if slice_ is not None and event.tag is not None:
            candidates = [
                e.id for e in db.topology.of_kind(ElementKind.VBBU)
                if db.slice_of(e.id) is not None and db.slice_of(e.id).slice_id == slice_.slice_id
            ]
            if candidates:
                target_vbbu = min(candidates, key=lambda v: (db.load_of(v), v))
                match = FlowMatch(service_tag=event.tag, domain=slice_.space.domain)
                flow.append(FlowInstall(cell, FlowRule(
                    next(rule_ids), DECISION_PRIORITY, match, (Forward(target_vbbu),),
                ), slice_.slice_id))

    return JointDecision(tuple(flow), tuple(phy))


@dataclass(frozen=True)
class DeliveryEntry:
    target: ElementId
    layer: str
    rule_id: int
    accepted: bool
    reason: str = ""

    def to_dict(self) -> dict:
        out = {"target": str(self.target), "layer": self.layer, "rule_id": self.rule_id,
               "accepted": self.accepted}
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass
class DeliveryReport:
    entries: list = field(default_factory=list)

    @property
    def accepted(self) -> list:
        return [e for e in self.entries if e.accepted]

    @property
    def rejected(self) -> list:
        return [e for e in self.entries if not e.accepted]

    def __len__(self) -> int:
        return len(self.entries)


def deliver_install(install: Install, agents, registry: Optional[SliceRegistry] = None,
                    topology: Optional[Topology] = None) -> DeliveryEntry:
    """Deliver one install to its agent's table, enforcing slice admission for flow rules."""
    rule = install.rule
    layer = "flow" if isinstance(install, FlowInstall) else "phy"

    def reject(reason):
        return DeliveryEntry(install.target, layer, rule.rule_id, False, reason)

    agent = agents.get(install.target)
    if agent is None:
        return reject("no agent")
    if layer == "flow":
        if registry is not None and len(registry):
            if install.slice_id is None:
                return reject("flow rule carries no slice")
            verdict = admit_rule(registry.get(install.slice_id), rule)
            if not verdict:
                return reject(verdict.reason)
        if topology is not None:
            for a in rule.actions:
                if isinstance(a, Forward) and a.dest not in topology:
                    return reject(f"forward target {a.dest} does not exist")
        table = agent.flow_table
    else:
        table = agent.phy_table
    try:
        table.install(rule)
    except Exception as exc:
        return reject(str(exc))
    return DeliveryEntry(install.target, layer, rule.rule_id, True)


def push_decision(decision: JointDecision, agents, registry: Optional[SliceRegistry] = None,
                  topology: Optional[Topology] = None) -> DeliveryReport:
    report = DeliveryReport()
    for install in decision.installs():
        report.entries.append(deliver_install(install, agents, registry, topology))
    return report


class EventLog:
    """Structured controller log, one JSON object per line."""

    def __init__(self, stream: Optional[IO[str]] = None):
        self.records: list = []
        self.stream = stream

    def emit(self, event: str, **fields) -> dict:
        record = {"event": event, **fields}
        self.records.append(record)
        if self.stream is not None:
            self.stream.write(json.dumps(record, sort_keys=True, default=str) + "\n")
        return record

    def of(self, event: str) -> list:
        return [r for r in self.records if r["event"] == event]

    def __len__(self) -> int:
        return len(self.records)


PacketInHandler = Callable[["ControlPlane", ElementId, Packet], list]


def reactive_forwarding(cp: "ControlPlane", element_id: ElementId, packet: Packet) -> list:
    """Default packet-in app: pin the packet's (dst, tag) pair to the least-loaded next hop.

    A vRouter with no successor egresses traffic by forwarding to itself.
    """
    topo = cp.db.topology
    header = packet.header
    slice_ = cp.db.slices.slice_for_header(header) if len(cp.db.slices) else None
    if len(cp.db.slices) and slice_ is None:
        return []
    domain = header.domain
    match = FlowMatch(
        dst_ip=Prefix(header.dst_ip, domain.width("dst_ip"), domain.width("dst_ip")),
        service_tag=header.service_tag,
        domain=domain,
    )
    hops = [h for h in topo.successors(element_id) if isinstance(topo.elements.get(h), VirtualElement)]
    if slice_ is not None:
        in_slice = [h for h in hops if (s := cp.db.slice_of(h)) is not None and s.slice_id == slice_.slice_id]
        hops = in_slice or [h for h in hops if cp.db.slice_of(h) is None]
    if hops:
        dest = min(hops, key=lambda h: (cp.db.load_of(h), h))
    elif element_id.kind is ElementKind.VROUTER:
        dest = element_id
    else:
        return []
    rule = FlowRule(cp.take_rule_id(), REACTIVE_PRIORITY, match, (Forward(dest),))
    return [FlowInstall(element_id, rule, slice_.slice_id if slice_ is not None else None)]


class ControlPlane:
    """Serialized controller: one report, event or packet-in at a time."""

    def __init__(self, db: GlobalViewDB, thresholds: Thresholds = Thresholds(),
                 log: Optional[EventLog] = None, packet_in_handler: Optional[PacketInHandler] = reactive_forwarding,
                 first_rule_id: int = 1000):
        self.db = db
        self.thresholds = thresholds
        self.log = log if log is not None else EventLog()
        self.packet_in_handler = packet_in_handler
        self._next_rule_id = first_rule_id

    def take_rule_id(self) -> int:
        rid = self._next_rule_id
        self._next_rule_id += 1
        return rid

    def receive_report(self, report: StatusReport) -> bool:
        try:
            self.db.report_status(report)
        except (UnknownElementError, TimestampRegression) as exc:
            log.debug("report rejected: %s", exc)
            return False
        return True

    def decide(self, event: QosEvent) -> JointDecision:
        decision = joint_optimize(self.db, event, self.thresholds, self._next_rule_id)
        self._next_rule_id += len(decision)
        self.log.emit("joint_decision", user_id=event.user_id, serving_cell=str(event.serving_cell),
                      utility=event.utility, decision=decision.to_dict())
        return decision

    def push(self, decision: JointDecision, agents) -> DeliveryReport:
        report = push_decision(decision, agents, self.db.slices, self.db.topology)
        for entry in report.entries:
            self.log.emit("delivery", **entry.to_dict())
        return report

    def packet_in(self, element_id: ElementId, packet: Packet) -> list:
        installs = [] if self.packet_in_handler is None else list(self.packet_in_handler(self, element_id, packet))
        self.log.emit("packet_in", element=str(element_id), packet_id=packet.packet_id,
                      installs=[i.to_dict() for i in installs])
        return installs

    def deactivate(self, station_ids, **context: Any) -> dict:
        """Record a station shutdown command."""
        return self.log.emit("deactivate", stations=sorted(str(s) for s in station_ids), **context)

    def assign_access(self, user_id, station_id, **context: Any) -> dict:
        """Record an access-steering Forward decision for one user."""
        return self.log.emit("access", user_id=user_id, station=str(station_id), **context)

