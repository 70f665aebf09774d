"""Physical and virtual network elements and the topology connecting them.

Elements are immutable records kept in an id-indexed store. Changing an
element means replacing it by id. The forwarding hierarchy among virtual
elements is fixed to vRRU -> vBBU -> vBSC -> vRouter.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Union


class ElementKind(str, Enum):
    PRRU = "PRRU"
    VRRU = "VRRU"
    VBBU = "VBBU"
    VBSC = "VBSC"
    VROUTER = "VROUTER"
    PROCESSOR = "PROCESSOR"
    CONTROLLER = "CONTROLLER"


class Protocol(str, Enum):
    GSM = "GSM"
    UMTS = "UMTS"
    TETRA = "TETRA"
    LTE = "LTE"
    WLAN = "WLAN"


# Protocols that can appear in a base-station dataset.
DATASET_PROTOCOLS = (Protocol.GSM, Protocol.UMTS, Protocol.TETRA)

# Layer index of each forwarding kind; links must go from layer i to i + 1.
FORWARDING_LAYERS = {
    ElementKind.VRRU: 0,
    ElementKind.VBBU: 1,
    ElementKind.VBSC: 2,
    ElementKind.VROUTER: 3,
}

VIRTUAL_KINDS = frozenset(FORWARDING_LAYERS)


@dataclass(frozen=True, order=True)
class ElementId:
    kind: ElementKind
    index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ElementKind(self.kind))
        if self.index < 0:
            raise ValueError(f"negative element index {self.index}")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.index}"

    @classmethod
    def parse(cls, text: Union[str, "ElementId"]) -> "ElementId":
        if isinstance(text, ElementId):
            return text
        kind, _, index = str(text).partition(":")
        if not index:
            raise ValueError(f"bad element id {text!r}, expected KIND:INDEX")
        return cls(ElementKind(kind.upper()), int(index))


def eid(text: str) -> ElementId:
    """Shorthand: ``eid("VBBU:1")``."""
    return ElementId.parse(text)


@dataclass(frozen=True)
class PlanarPoint:
    x_m: float
    y_m: float


@dataclass(frozen=True)
class PhysicalProcessor:
    id: ElementId
    cpu_units: int
    storage_units: int

    def __post_init__(self):
        if self.id.kind is not ElementKind.PROCESSOR:
            raise ValueError(f"{self.id} is not a PROCESSOR id")
        if self.cpu_units < 0 or self.storage_units < 0:
            raise ValueError("processor capacities must be non-negative")


@dataclass(frozen=True)
class PRRU:
    id: ElementId
    location: PlanarPoint = PlanarPoint(0.0, 0.0)
    vrru_ids: frozenset = frozenset()

    def __post_init__(self):
        if self.id.kind is not ElementKind.PRRU:
            raise ValueError(f"{self.id} is not a PRRU id")
        object.__setattr__(self, "vrru_ids", frozenset(self.vrru_ids))


@dataclass(frozen=True)
class Controller:
    id: ElementId

    def __post_init__(self):
        if self.id.kind is not ElementKind.CONTROLLER:
            raise ValueError(f"{self.id} is not a CONTROLLER id")


@dataclass(frozen=True)
class VirtualElement:
    """A vRRU, vBBU, vBSC or vRouter.

    ``host`` is a PROCESSOR for cloud elements and a PRRU for vRRUs.
    ``allocation`` is a :class:`xl5g.resources.ResourceAllocation` and
    ``deployed_chain`` a :class:`xl5g.protocol_lib.ProtocolChain`.
    """

    id: ElementId
    host: ElementId
    protocol: Optional[Protocol] = None
    allocation: Any = None
    deployed_chain: Any = None
    slice_id: Optional[str] = None

    def __post_init__(self):
        if self.id.kind not in VIRTUAL_KINDS:
            raise ValueError(f"{self.id} is not a virtual element id")
        if self.protocol is not None:
            object.__setattr__(self, "protocol", Protocol(self.protocol))

    @property
    def kind(self) -> ElementKind:
        return self.id.kind

    @property
    def expected_host_kind(self) -> ElementKind:
        return ElementKind.PRRU if self.kind is ElementKind.VRRU else ElementKind.PROCESSOR


Element = Union[PhysicalProcessor, PRRU, Controller, VirtualElement]


class TopologyError(Exception):
    """Base class for rejected topology edits."""


class DuplicateElementError(TopologyError):
    pass


class DanglingReferenceError(TopologyError):
    pass


class UnknownElementError(TopologyError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class CycleError(TopologyError):
    pass


class LayeringError(TopologyError):
    pass


class ElementInUseError(TopologyError):
    pass


@dataclass(frozen=True)
class Violation:
    element: ElementId
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.element}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


@dataclass
class Topology:
    elements: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)  # (a, b) -> capacity_mbps

    def __contains__(self, element_id: ElementId) -> bool:
        return element_id in self.elements

    def __len__(self) -> int:
        return len(self.elements)

    def get(self, element_id: ElementId) -> Element:
        try:
            return self.elements[element_id]
        except KeyError:
            raise UnknownElementError(f"unknown element {element_id}") from None

    def of_kind(self, kind: ElementKind) -> list:
        return [e for k, e in sorted(self.elements.items()) if k.kind is kind]

    def next_index(self, kind: ElementKind) -> int:
        used = [k.index for k in self.elements if k.kind is kind]
        return max(used) + 1 if used else 0

    def successors(self, element_id: ElementId) -> list:
        return sorted(b for (a, b) in self.links if a == element_id)

    def predecessors(self, element_id: ElementId) -> list:
        return sorted(a for (a, b) in self.links if b == element_id)

    def copy(self) -> "Topology":
        return Topology(dict(self.elements), dict(self.links))

    # edits

    def add_element(self, element: Element) -> "Topology":
        if element.id in self.elements:
            raise DuplicateElementError(f"duplicate element id {element.id}")
        if isinstance(element, VirtualElement):
            self._check_host(element)
        if isinstance(element, PRRU):
            for vid in element.vrru_ids:
                if vid not in self.elements:
                    raise DanglingReferenceError(f"{element.id} lists unknown vRRU {vid}")
        self.elements[element.id] = element
        return self

    def replace_element(self, element: Element) -> "Topology":
        old = self.get(element.id)
        if type(old) is not type(element):
            raise TopologyError(f"cannot replace {type(old).__name__} with {type(element).__name__}")
        if isinstance(element, VirtualElement):
            self._check_host(element)
        self.elements[element.id] = element
        return self

    def remove_element(self, element_id: ElementId) -> "Topology":
        element = self.get(element_id)
        dependents = [
            e.id for e in self.elements.values()
            if isinstance(e, VirtualElement) and e.host == element_id
        ]
        if dependents:
            raise ElementInUseError(
                f"{element_id} hosts {', '.join(map(str, sorted(dependents)))}"
            )
        for key in [k for k in self.links if element_id in k]:
            del self.links[key]
        if isinstance(element, VirtualElement) and element.kind is ElementKind.VRRU:
            prru = self.elements.get(element.host)
            if isinstance(prru, PRRU):
                self.elements[prru.id] = replace(prru, vrru_ids=prru.vrru_ids - {element_id})
        del self.elements[element_id]
        return self

    def add_link(self, a: ElementId, b: ElementId, capacity_mbps: float = 10_000.0) -> "Topology":
        for end in (a, b):
            if end not in self.elements:
                raise DanglingReferenceError(f"link endpoint {end} does not exist")
        if a == b:
            raise CycleError(f"self-loop on {a}")
        if a.kind in FORWARDING_LAYERS and b.kind in FORWARDING_LAYERS:
            if self._reachable(b, a):
                raise CycleError(f"link {a}->{b} closes a forwarding cycle")
            if FORWARDING_LAYERS[b.kind] != FORWARDING_LAYERS[a.kind] + 1:
                raise LayeringError(f"link {a}->{b} breaks vRRU->vBBU->vBSC->vRouter layering")
        if capacity_mbps <= 0:
            raise ValueError("link capacity must be positive")
        self.links[(a, b)] = float(capacity_mbps)
        return self

    def _check_host(self, element: VirtualElement) -> None:
        host = self.elements.get(element.host)
        if host is None:
            raise DanglingReferenceError(f"{element.id} host {element.host} does not exist")
        if element.host.kind is not element.expected_host_kind:
            raise DanglingReferenceError(
                f"{element.id} must be hosted on a {element.expected_host_kind.value}, got {element.host}"
            )

    def _reachable(self, src: ElementId, dst: ElementId) -> bool:
        adjacency: dict = {}
        for a, b in self.links:
            adjacency.setdefault(a, []).append(b)
        stack, seen = [src], {src}
        while stack:
            node = stack.pop()
            if node == dst:
                return True
            for nxt in adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    # checks

    def validate(self, library=None) -> list:
        """Return every broken invariant; an empty list means the topology is sound.

        When a module ``library`` is given, deployed vBBU chains are
        re-validated against it as well.
        """
        out = []
        for key, element in sorted(self.elements.items()):
            if key != element.id:
                out.append(Violation(key, "id-mismatch", f"stored under {key}, record says {element.id}"))
            if isinstance(element, VirtualElement):
                host = self.elements.get(element.host)
                if host is None:
                    out.append(Violation(key, "dangling-host", str(element.host)))
                elif element.host.kind is not element.expected_host_kind:
                    out.append(Violation(key, "host-kind", str(element.host)))
                elif element.kind is ElementKind.VRRU and key not in host.vrru_ids:
                    out.append(Violation(key, "unlisted-vrru", f"not listed by {element.host}"))
                if element.deployed_chain is not None:
                    if element.kind is not ElementKind.VBBU:
                        out.append(Violation(key, "chain-on-non-vbbu"))
                    elif library is not None:
                        from .protocol_lib import validate_chain

                        verdict = validate_chain(library, element.deployed_chain)
                        if not verdict:
                            out.append(Violation(key, "invalid-chain", verdict.reason))
            if isinstance(element, PRRU):
                protocols = {}
                for vid in sorted(element.vrru_ids):
                    vrru = self.elements.get(vid)
                    if vrru is None:
                        out.append(Violation(key, "dangling-vrru", str(vid)))
                        continue
                    if not isinstance(vrru, VirtualElement) or vrru.kind is not ElementKind.VRRU:
                        out.append(Violation(key, "vrru-kind", str(vid)))
                        continue
                    if vrru.protocol is not None and vrru.protocol in protocols:
                        out.append(Violation(key, "duplicate-protocol", vrru.protocol.value))
                    protocols[vrru.protocol] = vid
        for a, b in sorted(self.links):
            for end in (a, b):
                if end not in self.elements:
                    out.append(Violation(end, "dangling-link", f"{a}->{b}"))
            if a.kind in FORWARDING_LAYERS and b.kind in FORWARDING_LAYERS:
                if FORWARDING_LAYERS[b.kind] != FORWARDING_LAYERS[a.kind] + 1:
                    out.append(Violation(a, "layering", f"{a}->{b}"))
        for node in sorted({a for a, _ in self.links}):
            if any(self._reachable(nxt, node) for nxt in self.successors(node)):
                out.append(Violation(node, "cycle"))
        return out

    # serialization

    def to_dict(self) -> dict:
        return {
            "elements": [element_to_dict(e) for _, e in sorted(self.elements.items())],
            "links": [
                {"src": str(a), "dst": str(b), "capacity_mbps": cap}
                for (a, b), cap in sorted(self.links.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, strict: bool = True) -> "Topology":
        """Build a topology from its JSON shape.

        With ``strict`` every element and link goes through the checked
        add path (so order matters: hosts first). Without it the records
        are loaded as-is and :meth:`validate` reports the damage.
        """
        topo = cls()
        elements = [element_from_dict(d) for d in data.get("elements", ())]
        if strict:
            pending = list(elements)
            # vRRUs must exist before the PRRU that lists them, but need that PRRU as host.
            prrus = {e.id: e for e in pending if isinstance(e, PRRU)}
            for e in pending:
                if isinstance(e, PRRU):
                    topo.add_element(replace(e, vrru_ids=frozenset()))
            for e in pending:
                if not isinstance(e, PRRU):
                    topo.add_element(e)
            for pid, p in prrus.items():
                topo.replace_element(p)
                for vid in p.vrru_ids:
                    topo.get(vid)
            for link in data.get("links", ()):
                topo.add_link(eid(link["src"]), eid(link["dst"]), link.get("capacity_mbps", 10_000.0))
        else:
            topo.elements = {e.id: e for e in elements}
            topo.links = {
                (eid(l["src"]), eid(l["dst"])): float(l.get("capacity_mbps", 10_000.0))
                for l in data.get("links", ())
            }
        return topo

    @classmethod
    def from_json(cls, text: str, strict: bool = True) -> "Topology":
        return cls.from_dict(json.loads(text), strict=strict)


def add_element(topology: Topology, element: Element) -> Topology:
    return topology.add_element(element)


def add_link(topology: Topology, a: ElementId, b: ElementId, capacity_mbps: float = 10_000.0) -> Topology:
    return topology.add_link(a, b, capacity_mbps)


def validate(topology: Topology, library=None) -> list:
    return topology.validate(library)


def element_to_dict(element: Element) -> dict:
    out: dict = {"id": str(element.id)}
    if isinstance(element, PhysicalProcessor):
        out.update(cpu_units=element.cpu_units, storage_units=element.storage_units)
    elif isinstance(element, PRRU):
        out.update(
            x_m=element.location.x_m,
            y_m=element.location.y_m,
            vrru_ids=sorted(str(v) for v in element.vrru_ids),
        )
    elif isinstance(element, VirtualElement):
        out["host"] = str(element.host)
        if element.protocol is not None:
            out["protocol"] = element.protocol.value
        if element.allocation is not None:
            a = element.allocation
            out["allocation"] = {
                "allocation_id": a.allocation_id,
                "processor_id": str(a.processor_id),
                "cpu_units": a.cpu_units,
                "storage_units": a.storage_units,
            }
        if element.deployed_chain is not None:
            c = element.deployed_chain
            out["chain"] = {"protocol_name": c.protocol_name, "modules": list(c.module_names)}
        if element.slice_id is not None:
            out["slice_id"] = element.slice_id
    return out


def element_from_dict(data: dict) -> Element:
    element_id = eid(data["id"])
    kind = element_id.kind
    if kind is ElementKind.PROCESSOR:
        return PhysicalProcessor(element_id, int(data["cpu_units"]), int(data["storage_units"]))
    if kind is ElementKind.PRRU:
        return PRRU(
            element_id,
            PlanarPoint(float(data.get("x_m", 0.0)), float(data.get("y_m", 0.0))),
            frozenset(eid(v) for v in data.get("vrru_ids", ())),
        )
    if kind is ElementKind.CONTROLLER:
        return Controller(element_id)
    allocation = chain = None
    if "allocation" in data:
        from .resources import ResourceAllocation

        a = data["allocation"]
        allocation = ResourceAllocation(
            a["allocation_id"], eid(a["processor_id"]), int(a["cpu_units"]), int(a["storage_units"])
        )
    if "chain" in data:
        from .protocol_lib import ProtocolChain

        chain = ProtocolChain(data["chain"]["protocol_name"], tuple(data["chain"]["modules"]))
    return VirtualElement(
        element_id,
        eid(data["host"]),
        Protocol(data["protocol"]) if data.get("protocol") else None,
        allocation,
        chain,
        data.get("slice_id"),
    )

