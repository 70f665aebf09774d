"""Flow-space slicing, cloud-level element creation and vRRU multiplexing.

Every flow-match field is a bit prefix over its width (an exact value is
a full-length prefix, a wildcard a zero-length one), so a match is a box
of prefixes. Two prefixes are either nested or disjoint, which keeps box
intersection and subtraction exact. Slice admission uses box subtraction
to decide whether a rule's match lies inside the union of the slice's
regions and, when it does not, to produce a witness header.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .netmodel import (
    PRRU,
    DanglingReferenceError,
    ElementId,
    ElementKind,
    Protocol,
    Topology,
    VirtualElement,
)
from .resources import ResourcePool, ResourceRequest
from .ruleengine import FLOW_FIELDS, FlowHeader, FlowMatch, FlowRule, HeaderDomain

# prefix algebra on (value, length, width) triples


def _prefix_contains(outer, inner) -> bool:
    v0, l0, w = outer
    v1, l1, _ = inner
    return l0 <= l1 and (v0 >> (w - l0)) == (v1 >> (w - l0))


def _prefix_intersect(a, b):
    if _prefix_contains(a, b):
        return b
    if _prefix_contains(b, a):
        return a
    return None


def _prefix_minus(a, b) -> list:
    """``a \\ b`` for ``b`` nested in ``a``, as disjoint prefixes."""
    _, la, w = a
    vb, lb, _ = b
    out = []
    for length in range(la + 1, lb + 1):
        shift = w - length
        out.append(((((vb >> shift) ^ 1) << shift), length, w))
    return out


def box_intersect(a: tuple, b: tuple) -> Optional[tuple]:
    out = []
    for pa, pb in zip(a, b):
        p = _prefix_intersect(pa, pb)
        if p is None:
            return None
        out.append(p)
    return tuple(out)


def box_minus(a: tuple, b: tuple) -> list:
    """Disjoint boxes whose union is ``a \\ b``."""
    inter = box_intersect(a, b)
    if inter is None:
        return [a]
    out = []
    for i in range(len(a)):
        for piece in _prefix_minus(a[i], inter[i]):
            out.append(inter[:i] + (piece,) + a[i + 1:])
    return out


def box_contains(outer: tuple, inner: tuple) -> bool:
    return all(_prefix_contains(o, i) for o, i in zip(outer, inner))


def box_witness(box: tuple, domain: HeaderDomain) -> FlowHeader:
    return FlowHeader(*(value for value, _, _ in box), domain=domain)


# flow space


@dataclass(frozen=True)
class FlowSpace:
    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValueError("a flow space needs at least one region")
        domains = {r.domain for r in self.regions}
        if len(domains) > 1:
            raise ValueError("flow-space regions span several header domains")

    @property
    def domain(self) -> HeaderDomain:
        return self.regions[0].domain

    def covers(self, header: FlowHeader) -> bool:
        return any(r.covers(header) for r in self.regions)

    def uncovered_part(self, match: FlowMatch) -> list:
        """Boxes of ``match`` not covered by any region."""
        remaining = [match.field_prefixes()]
        for region in self.regions:
            rbox = region.field_prefixes()
            remaining = [piece for box in remaining for piece in box_minus(box, rbox)]
            if not remaining:
                break
        return remaining

    def contains_match(self, match: FlowMatch) -> bool:
        return not self.uncovered_part(match)

    def to_dict(self) -> list:
        return [r.to_dict() for r in self.regions]


def flowspace_overlap(a: FlowSpace, b: FlowSpace) -> bool:
    return any(
        box_intersect(ra.field_prefixes(), rb.field_prefixes()) is not None
        for ra in a.regions
        for rb in b.regions
    )


def all_headers(domain: HeaderDomain) -> Iterable[FlowHeader]:
    """Every header of a (small) domain."""
    if domain.total_bits > 20:
        raise ValueError(f"domain {domain.name} has {domain.total_bits} bits; too large to enumerate")
    for values in itertools.product(*(range(1 << w) for w in domain.widths)):
        yield FlowHeader(*values, domain=domain)


# slices


class SliceError(Exception):
    pass


class OverlapWithExistingSlice(SliceError):
    def __init__(self, other_slice_id: str):
        super().__init__(f"flow space overlaps slice {other_slice_id!r}")
        self.other_slice_id = other_slice_id


@dataclass(frozen=True)
class Slice:
    slice_id: str
    space: FlowSpace
    controller_id: ElementId
    element_ids: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "controller_id": str(self.controller_id),
            "regions": self.space.to_dict(),
            "element_ids": sorted(str(e) for e in self.element_ids),
        }


@dataclass(frozen=True)
class Admitted:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Rejected:
    reason: str
    counterexample: Optional[FlowHeader] = None

    def __bool__(self) -> bool:
        return False


EXCLUSIVE_KINDS = frozenset({ElementKind.VBBU, ElementKind.VRRU})


@dataclass
class SliceRegistry:
    slices: dict = field(default_factory=dict)
    owner: dict = field(default_factory=dict)  # element id -> slice id

    def __iter__(self):
        return iter(self.slices[k] for k in sorted(self.slices))

    def __len__(self) -> int:
        return len(self.slices)

    def get(self, slice_id: str) -> Slice:
        try:
            return self.slices[slice_id]
        except KeyError:
            raise SliceError(f"unknown slice {slice_id!r}") from None

    def create_slice(self, space: FlowSpace, controller_id: ElementId,
                     slice_id: Optional[str] = None, element_ids=()) -> Slice:
        if slice_id is None:
            slice_id = f"slice-{len(self.slices)}"
            while slice_id in self.slices:
                slice_id += "'"
        if slice_id in self.slices:
            raise SliceError(f"duplicate slice id {slice_id!r}")
        for other in self:
            if flowspace_overlap(space, other.space):
                raise OverlapWithExistingSlice(other.slice_id)
        new = Slice(slice_id, space, controller_id, frozenset())
        self.slices[slice_id] = new
        for e in element_ids:
            self.bind(slice_id, e)
        return self.slices[slice_id]

    def bind(self, slice_id: str, element_id: ElementId) -> Slice:
        s = self.get(slice_id)
        holder = self.owner.get(element_id)
        # vBSCs and vRouters may carry several slices' rules; vBBUs and vRRUs belong to one slice.
        if holder is not None and holder != slice_id and element_id.kind in EXCLUSIVE_KINDS:
            raise SliceError(f"{element_id} already serves slice {holder!r}")
        self.owner.setdefault(element_id, slice_id)
        s = replace(s, element_ids=s.element_ids | {element_id})
        self.slices[slice_id] = s
        return s

    def slice_of_element(self, element_id: ElementId) -> Optional[Slice]:
        sid = self.owner.get(element_id)
        return self.slices[sid] if sid is not None else None

    def slice_for_header(self, header: FlowHeader) -> Optional[Slice]:
        for s in self:
            if s.space.covers(header):
                return s
        return None

    def overlaps(self) -> list:
        """Pairs of slice ids whose spaces intersect; empty for a sound registry."""
        ordered = list(self)
        return [
            (a.slice_id, b.slice_id)
            for a, b in itertools.combinations(ordered, 2)
            if flowspace_overlap(a.space, b.space)
        ]


def create_slice(registry: SliceRegistry, space: FlowSpace, controller_id: ElementId, **kw) -> Slice:
    return registry.create_slice(space, controller_id, **kw)


def admit_rule(slice_: Slice, rule: FlowRule):
    """Admit a rule iff every header it matches lies inside the slice's space."""
    match = rule.match
    if match.domain != slice_.space.domain:
        return Rejected(f"rule uses the {match.domain.name} domain, slice uses {slice_.space.domain.name}")
    leftover = slice_.space.uncovered_part(match)
    if not leftover:
        return Admitted()
    witness = box_witness(leftover[0], match.domain)
    return Rejected(f"rule {rule.rule_id} matches traffic outside slice {slice_.slice_id!r}", witness)


# cloud-level and spectrum-level virtualization


CLOUD_KINDS = (ElementKind.VBBU, ElementKind.VBSC, ElementKind.VROUTER)


def create_virtual_element(kind: ElementKind, protocol: Optional[Protocol], request: ResourceRequest,
                           topology: Topology, pool: ResourcePool,
                           slice_id: Optional[str] = None, index: Optional[int] = None) -> VirtualElement:
    """Allocate resources for a vBBU/vBSC/vRouter and register it on its processor."""
    kind = ElementKind(kind)
    if kind not in CLOUD_KINDS:
        raise ValueError(f"{kind.value} is not created on the cloud pool")
    alloc = pool.allocate(request)
    if index is None:
        index = topology.next_index(kind)
    element = VirtualElement(ElementId(kind, index), alloc.processor_id, protocol, alloc, None, slice_id)
    try:
        topology.add_element(element)
    except Exception:
        pool.release(alloc.allocation_id)
        raise
    return element


def destroy_virtual_element(topology: Topology, pool: ResourcePool, element_id: ElementId) -> None:
    element = topology.get(element_id)
    topology.remove_element(element_id)
    if getattr(element, "allocation", None) is not None:
        pool.release(element.allocation.allocation_id)


class DuplicateProtocolOnPRRU(Exception):
    pass


def attach_vrru(topology: Topology, prru_id: ElementId, protocol: Protocol,
                slice_id: Optional[str] = None) -> VirtualElement:
    """Host a new vRRU of ``protocol`` on a shared pRRU."""
    protocol = Protocol(protocol)
    prru = topology.elements.get(prru_id)
    if not isinstance(prru, PRRU):
        raise DanglingReferenceError(f"no pRRU {prru_id}")
    for vid in prru.vrru_ids:
        if topology.get(vid).protocol is protocol:
            raise DuplicateProtocolOnPRRU(f"{prru_id} already hosts a {protocol.value} vRRU ({vid})")
    vrru = VirtualElement(ElementId(ElementKind.VRRU, topology.next_index(ElementKind.VRRU)),
                          prru_id, protocol, slice_id=slice_id)
    topology.add_element(vrru)
    topology.replace_element(replace(prru, vrru_ids=prru.vrru_ids | {vrru.id}))
    return vrru


def flowspace_from_dict(regions: list, domain: HeaderDomain) -> FlowSpace:
    return FlowSpace(tuple(FlowMatch.from_dict(r, domain) for r in regions))


__all__ = [
    "FLOW_FIELDS", "FlowSpace", "Slice", "SliceRegistry", "Admitted", "Rejected",
    "flowspace_overlap", "create_slice", "admit_rule", "create_virtual_element",
    "destroy_virtual_element", "attach_vrru", "all_headers", "OverlapWithExistingSlice",
    "DuplicateProtocolOnPRRU", "SliceError", "flowspace_from_dict",
]
