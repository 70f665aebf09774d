"""Deterministic discrete-event data plane.

Every virtual forwarding element runs an :class:`SdnAgent` with a flow
table and a PHY table. Events are processed in ``(at_tick, seq)`` order;
one hop costs one tick and a tick lasts 1 ms for rate-limit arithmetic.
A table miss either drops the packet or sends a packet-in to the
controller; in the latter case the controller's installs land at
``tick + 1`` and the packet is retried once at ``tick + 2``.

Trace records are dicts ``{tick, seq, element, event, packet_id, detail}``.
Packet-terminal events are ``deliver``, ``drop``, ``rate_limited``,
``drop_on_miss`` and ``retire``.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controlplane import ControlPlane, QosEvent, StatusReport, deliver_install
from .netmodel import ElementId, ElementKind, Topology, UnknownElementError, VirtualElement
from .ruleengine import (
    IPV4_DOMAIN,
    Drop,
    FlowHeader,
    FlowRule,
    Forward,
    HeaderDomain,
    Matched,
    MissPolicy,
    Packet,
    RuleTable,
    ToController,
)

TICK_SECONDS = 1e-3
DEFAULT_STATUS_EPOCH = 100
# Packets per epoch that count as 100 % load in status reports.
EPOCH_CAPACITY = 100

TERMINAL_EVENTS = frozenset({"deliver", "drop", "rate_limited", "drop_on_miss", "retire"})


def token_budget_bytes(rate_limit_mbps: float, tick_seconds: float = TICK_SECONDS) -> float:
    return rate_limit_mbps * 1e6 * tick_seconds / 8.0


@dataclass
class SdnAgent:
    element_id: ElementId
    flow_table: RuleTable
    phy_table: RuleTable
    rate_state: dict = field(default_factory=dict)  # (rule_id, tick) -> bytes forwarded
    handled: int = 0
    users: set = field(default_factory=set)
    interference_flag: Optional[bool] = None

    @property
    def miss_policy(self) -> MissPolicy:
        return self.flow_table.miss_policy

    def status(self, tick: int) -> StatusReport:
        load = min(100.0, 100.0 * self.handled / EPOCH_CAPACITY)
        report = StatusReport(self.element_id, tick, load, len(self.users),
                              boundary_interference_flag=self.interference_flag)
        self.handled = 0
        self.users = set()
        return report


@dataclass(frozen=True)
class PacketArrival:
    element: ElementId
    packet: Packet
    retry: bool = False
    visited: tuple = ()


@dataclass(frozen=True)
class StatusEpoch:
    pass


@dataclass(frozen=True)
class ControlDelivery:
    install: object


@dataclass(frozen=True)
class QosNotice:
    event: QosEvent


@dataclass(frozen=True, order=True)
class SimEvent:
    at_tick: int
    seq: int
    payload: object = field(compare=False)


class SimError(Exception):
    pass


class SimRun:
    def __init__(self, topology: Topology, controller: Optional[ControlPlane] = None,
                 rng_seed: int = 42, miss_policy: MissPolicy = MissPolicy.DROP,
                 status_epoch: Optional[int] = DEFAULT_STATUS_EPOCH):
        self.topology = topology
        self.controller = controller
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.clock = 0
        self.queue: list = []
        self.trace: list = []
        self.outcomes: dict = {}
        self.status_epoch = status_epoch
        self._seq = 0
        self.agents = {
            e.id: SdnAgent(e.id, RuleTable(miss_policy), RuleTable(MissPolicy.DROP))
            for _, e in sorted(topology.elements.items())
            if isinstance(e, VirtualElement)
        }
        if status_epoch:
            self._push(status_epoch, StatusEpoch())

    # queue plumbing

    def _push(self, at_tick: int, payload) -> SimEvent:
        ev = SimEvent(at_tick, self._seq, payload)
        self._seq += 1
        heapq.heappush(self.queue, ev)
        return ev

    def _record(self, tick, seq, element, event, packet_id=None, **detail) -> dict:
        rec = {
            "tick": tick,
            "seq": seq,
            "element": str(element) if element is not None else None,
            "event": event,
            "packet_id": packet_id,
            "detail": detail,
        }
        self.trace.append(rec)
        if event in TERMINAL_EVENTS and packet_id is not None:
            if packet_id in self.outcomes:
                raise SimError(f"packet {packet_id} terminated twice")
            self.outcomes[packet_id] = event
        return rec

    def pending_packets(self) -> int:
        return sum(1 for ev in self.queue if not isinstance(ev.payload, StatusEpoch))

    # public API

    def inject_packet(self, element_id: ElementId, packet: Packet, at_tick: Optional[int] = None) -> "SimRun":
        at_tick = self.clock if at_tick is None else at_tick
        if element_id not in self.agents:
            raise UnknownElementError(f"no agent on element {element_id}")
        if at_tick < self.clock:
            raise SimError(f"cannot inject at tick {at_tick}, clock is {self.clock}")
        self._push(at_tick, PacketArrival(element_id, packet))
        return self

    def schedule_qos_event(self, event: QosEvent, at_tick: int) -> "SimRun":
        if at_tick < self.clock:
            raise SimError(f"cannot schedule at tick {at_tick}, clock is {self.clock}")
        self._push(at_tick, QosNotice(event))
        return self

    def install(self, element_id: ElementId, rule) -> None:
        """Pre-load a rule directly into an agent (scenario setup, not a control message)."""
        agent = self.agents[element_id]
        table = agent.flow_table if isinstance(rule, FlowRule) else agent.phy_table
        table.install(rule)

    def step(self) -> list:
        if not self.queue:
            raise SimError("event queue is empty")
        ev = heapq.heappop(self.queue)
        self.clock = ev.at_tick
        start = len(self.trace)
        payload = ev.payload
        if isinstance(payload, PacketArrival):
            self._on_packet(ev, payload)
        elif isinstance(payload, StatusEpoch):
            self._on_epoch(ev)
        elif isinstance(payload, ControlDelivery):
            self._on_delivery(ev, payload.install)
        elif isinstance(payload, QosNotice):
            self._on_qos(ev, payload.event)
        else:
            raise SimError(f"unknown event payload {payload!r}")
        return self.trace[start:]

    def run_until(self, tick: int) -> "SimRun":
        """Process every event with ``at_tick < tick``."""
        while self.queue and self.queue[0].at_tick < tick:
            self.step()
        self.clock = max(self.clock, tick)
        return self

    def run_until_idle(self, max_tick: int = 1_000_000) -> "SimRun":
        """Run until no packet, delivery or QoS events remain (status epochs alone do not count)."""
        while self.pending_packets() and self.queue[0].at_tick < max_tick:
            self.step()
        return self

    # handlers

    def _on_packet(self, ev: SimEvent, arrival: PacketArrival) -> None:
        element, packet = arrival.element, arrival.packet
        pid = packet.packet_id
        agent = self.agents[element]
        if element in arrival.visited:
            self._record(ev.at_tick, ev.seq, element, "drop", pid, reason="loop")
            return
        agent.handled += 1
        agent.users.add(packet.header.src_ip)
        result = agent.flow_table.lookup(packet.header)
        if isinstance(result, Matched):
            forwards = [a for a in result.actions if isinstance(a, Forward)]
            if forwards:
                self._forward(ev, arrival, forwards[0], result.rule_id)
            elif any(isinstance(a, Drop) for a in result.actions):
                self._record(ev.at_tick, ev.seq, element, "drop", pid, reason="rule", rule_id=result.rule_id)
            elif any(isinstance(a, ToController) for a in result.actions):
                self._packet_in(ev, arrival, f"rule {result.rule_id}")
            return
        self._record(ev.at_tick, ev.seq, element, "miss", pid, policy=result.policy.value)
        if result.policy is MissPolicy.TO_CONTROLLER and self.controller is not None:
            self._packet_in(ev, arrival, "table miss")
        elif arrival.retry:
            self._record(ev.at_tick, ev.seq, element, "retire", pid)
        else:
            self._record(ev.at_tick, ev.seq, element, "drop_on_miss", pid)

    def _forward(self, ev: SimEvent, arrival: PacketArrival, action: Forward, rule_id: int) -> None:
        element, packet = arrival.element, arrival.packet
        pid = packet.packet_id
        if action.rate_limit_mbps is not None:
            agent = self.agents[element]
            key = (rule_id, ev.at_tick)
            used = agent.rate_state.get(key, 0)
            if used + packet.size_bytes > token_budget_bytes(action.rate_limit_mbps):
                self._record(ev.at_tick, ev.seq, element, "rate_limited", pid, rule_id=rule_id)
                return
            agent.rate_state[key] = used + packet.size_bytes
        if action.dest == element:
            if element.kind is ElementKind.VROUTER:
                self._record(ev.at_tick, ev.seq, element, "deliver", pid, rule_id=rule_id)
            else:
                self._record(ev.at_tick, ev.seq, element, "drop", pid, reason="self-forward", rule_id=rule_id)
            return
        if (element, action.dest) not in self.topology.links or action.dest not in self.agents:
            self._record(ev.at_tick, ev.seq, element, "drop", pid, reason="no-route", dest=str(action.dest))
            return
        self._record(ev.at_tick, ev.seq, element, "forward", pid, dest=str(action.dest), rule_id=rule_id)
        # the retry budget is per element, so the next hop starts fresh
        self._push(ev.at_tick + 1, PacketArrival(action.dest, packet, False, arrival.visited + (element,)))

    def _packet_in(self, ev: SimEvent, arrival: PacketArrival, cause: str) -> None:
        element, packet = arrival.element, arrival.packet
        pid = packet.packet_id
        if arrival.retry:
            self._record(ev.at_tick, ev.seq, element, "retire", pid, cause=cause)
            return
        if self.controller is None:
            self._record(ev.at_tick, ev.seq, element, "drop_on_miss", pid, cause=cause)
            return
        self._record(ev.at_tick, ev.seq, element, "packet_in", pid, cause=cause, header=packet.header.to_dict())
        for install in self.controller.packet_in(element, packet):
            self._push(ev.at_tick + 1, ControlDelivery(install))
        self._push(ev.at_tick + 2, PacketArrival(element, packet, True, arrival.visited))

    def _on_delivery(self, ev: SimEvent, install) -> None:
        registry = self.controller.db.slices if self.controller is not None else None
        entry = deliver_install(install, self.agents, registry, self.topology)
        detail = entry.to_dict()
        detail["actions"] = [type(a).__name__ for a in install.rule.actions]
        detail.pop("target")
        self._record(ev.at_tick, ev.seq, install.target, "install", **detail)
        if self.controller is not None:
            self.controller.log.emit("delivery", tick=ev.at_tick, **entry.to_dict())

    def _on_epoch(self, ev: SimEvent) -> None:
        for element_id, agent in self.agents.items():
            report = agent.status(ev.at_tick)
            accepted = self.controller.receive_report(report) if self.controller is not None else False
            self._record(ev.at_tick, ev.seq, element_id, "status",
                         load_pct=report.load_pct, user_count=report.user_count, accepted=accepted)
        if self.status_epoch:
            self._push(ev.at_tick + self.status_epoch, StatusEpoch())

    def _on_qos(self, ev: SimEvent, event: QosEvent) -> None:
        if self.controller is None:
            return
        decision = self.controller.decide(event)
        self._record(ev.at_tick, ev.seq, event.serving_cell, "joint_decision",
                     user_id=event.user_id, utility=event.utility,
                     phy=len(decision.phy_installs), flow=len(decision.flow_installs))
        for install in decision.installs():
            self._push(ev.at_tick + 1, ControlDelivery(install))

    # output

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


def inject_packet(run: SimRun, element_id: ElementId, packet: Packet, at_tick: Optional[int] = None) -> SimRun:
    return run.inject_packet(element_id, packet, at_tick)


def step(run: SimRun) -> list:
    return run.step()


def run_until(run: SimRun, tick: int) -> SimRun:
    return run.run_until(tick)


def random_traffic(run: SimRun, n: int, ingress: list, start_tick: int = 0, spread: int = 10,
                   domain: HeaderDomain = IPV4_DOMAIN, first_packet_id: int = 0,
                   service_tags=(0,), size_bytes: int = 1000) -> list:
    """Inject ``n`` packets with headers drawn from the run's seeded RNG."""
    rng = run.rng
    packets = []
    for k in range(n):
        widths = domain.widths
        values = [int(rng.integers(0, 1 << w)) for w in widths]
        values[5] = int(service_tags[int(rng.integers(0, len(service_tags)))])
        header = FlowHeader(*values, domain=domain)
        packet = Packet(first_packet_id + k, header, size_bytes)
        at = start_tick + int(rng.integers(0, spread))
        element = ingress[int(rng.integers(0, len(ingress)))]
        run.inject_packet(element, packet, at)
        packets.append(packet)
    return packets

