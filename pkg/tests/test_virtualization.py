import pytest
from hypothesis import given
from hypothesis import strategies as st
from rulegen import random_match, seeded

from xl5g.netmodel import PRRU, ElementKind, PhysicalProcessor, PlanarPoint, Protocol, Topology, eid
from xl5g.resources import InsufficientResources, ResourcePool, ResourceRequest
from xl5g.ruleengine import IPV4_DOMAIN, TOY_DOMAIN, Drop, FlowHeader, FlowMatch, FlowRule
from xl5g.virtualization import (
    DuplicateProtocolOnPRRU,
    FlowSpace,
    OverlapWithExistingSlice,
    Rejected,
    SliceError,
    SliceRegistry,
    admit_rule,
    all_headers,
    attach_vrru,
    box_minus,
    create_virtual_element,
    destroy_virtual_element,
    flowspace_overlap,
)

TOY_HEADERS = list(all_headers(TOY_DOMAIN))
FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "transport_proto", "service_tag")


def covered_set(matches) -> set:
    return {h for h in TOY_HEADERS if any(m.covers(h) for m in matches)}


def toy_space(rng, max_regions=3) -> FlowSpace:
    return FlowSpace(tuple(random_match(rng, TOY_DOMAIN, 0.4) for _ in range(int(rng.integers(1, max_regions + 1)))))


def test_toy_domain_size():
    assert len(TOY_HEADERS) == 256 == len(set(TOY_HEADERS))


@given(st.integers(0, 2**32 - 1))
def test_box_minus_matches_enumeration(seed):
    rng = seeded(seed)
    a, b = random_match(rng, TOY_DOMAIN), random_match(rng, TOY_DOMAIN)
    pieces = box_minus(a.field_prefixes(), b.field_prefixes())
    want = covered_set([a]) - covered_set([b])
    got = [{h for h in TOY_HEADERS if all(((v >> (w - l)) == (getattr(h, f) >> (w - l)))
                                            for (v, l, w), f in zip(box, FIELDS))} for box in pieces]
    assert set().union(*got) == want
    assert sum(len(g) for g in got) == len(want)  # pieces are disjoint


@given(st.integers(0, 2**32 - 1))
def test_overlap_matches_enumeration(seed):
    rng = seeded(seed)
    a, b = toy_space(rng), toy_space(rng)
    brute = bool(covered_set(a.regions) & covered_set(b.regions))
    assert flowspace_overlap(a, b) == brute


@given(st.integers(0, 2**32 - 1))
def test_admission_matches_enumeration(seed):
    rng = seeded(seed)
    space = toy_space(rng)
    reg = SliceRegistry()
    sl = reg.create_slice(space, eid("CONTROLLER:0"), "s")
    rule = FlowRule(1, 0, random_match(rng, TOY_DOMAIN, 0.3), (Drop(),))
    verdict = admit_rule(sl, rule)
    outside = covered_set([rule.match]) - covered_set(space.regions)
    assert bool(verdict) == (not outside)
    if not verdict:
        assert verdict.counterexample in outside


def test_admission_across_a_union_of_regions():
    # neither half alone contains the /24 rule, their union does
    reg = SliceRegistry()
    s = reg.create_slice(FlowSpace((FlowMatch(dst_ip="10.0.0.0/25"), FlowMatch(dst_ip="10.0.0.128/25"))),
                         eid("CONTROLLER:0"), "halves")
    assert admit_rule(s, FlowRule(1, 0, FlowMatch(dst_ip="10.0.0.0/24"), (Drop(),)))
    verdict = admit_rule(s, FlowRule(2, 0, FlowMatch(dst_ip="10.0.0.0/23"), (Drop(),)))
    assert isinstance(verdict, Rejected)
    assert not s.space.covers(verdict.counterexample)


def test_admission_rejects_domain_mismatch():
    reg = SliceRegistry()
    s = reg.create_slice(FlowSpace((FlowMatch(service_tag=1),)), eid("CONTROLLER:0"), "a")
    verdict = admit_rule(s, FlowRule(1, 0, FlowMatch(domain=TOY_DOMAIN), (Drop(),)))
    assert not verdict and verdict.counterexample is None


def test_overlapping_slice_is_refused():
    reg = SliceRegistry()
    reg.create_slice(FlowSpace((FlowMatch(service_tag=1),)), eid("CONTROLLER:0"), "a")
    reg.create_slice(FlowSpace((FlowMatch(service_tag=2),)), eid("CONTROLLER:1"), "b")
    with pytest.raises(OverlapWithExistingSlice) as err:
        reg.create_slice(FlowSpace((FlowMatch(dst_port=80),)), eid("CONTROLLER:2"), "c")
    assert err.value.other_slice_id == "a"
    assert reg.overlaps() == [] and len(reg) == 2
    with pytest.raises(SliceError):
        reg.create_slice(FlowSpace((FlowMatch(service_tag=3),)), eid("CONTROLLER:0"), "a")


def test_slice_lookup_by_header_and_element():
    reg = SliceRegistry()
    reg.create_slice(FlowSpace((FlowMatch(service_tag=1),)), eid("CONTROLLER:0"), "a", [eid("VBBU:0")])
    assert reg.slice_for_header(FlowHeader.make(service_tag=1)).slice_id == "a"
    assert reg.slice_for_header(FlowHeader.make(service_tag=9)) is None
    assert reg.slice_of_element(eid("VBBU:0")).slice_id == "a"


def test_exclusive_and_shared_binding():
    reg = SliceRegistry()
    reg.create_slice(FlowSpace((FlowMatch(service_tag=1),)), eid("CONTROLLER:0"), "a", [eid("VBBU:0"), eid("VBSC:0")])
    reg.create_slice(FlowSpace((FlowMatch(service_tag=2),)), eid("CONTROLLER:1"), "b")
    reg.bind("b", eid("VBSC:0"))  # shared aggregation element
    with pytest.raises(SliceError):
        reg.bind("b", eid("VBBU:0"))
    assert eid("VBSC:0") in reg.get("b").element_ids
    with pytest.raises(SliceError):
        reg.get("missing")


def test_flowspace_domain_checks():
    with pytest.raises(ValueError):
        FlowSpace(())
    with pytest.raises(ValueError):
        FlowSpace((FlowMatch(), FlowMatch(domain=TOY_DOMAIN)))
    assert FlowSpace((FlowMatch(),)).domain is IPV4_DOMAIN
    with pytest.raises(ValueError):
        next(iter(all_headers(IPV4_DOMAIN)))


def cloud():
    t = Topology()
    t.add_element(PhysicalProcessor(eid("PROCESSOR:0"), 8, 8))
    t.add_element(PhysicalProcessor(eid("PROCESSOR:1"), 8, 8))
    t.add_element(PRRU(eid("PRRU:0"), PlanarPoint(0, 0)))
    return t, ResourcePool.from_topology(t)


def test_create_and_destroy_virtual_element():
    t, pool = cloud()
    a = create_virtual_element(ElementKind.VBBU, Protocol.UMTS, ResourceRequest(6, 6), t, pool, "op-a")
    b = create_virtual_element(ElementKind.VBBU, Protocol.GSM, ResourceRequest(6, 6), t, pool)
    assert (a.host, b.host) == (eid("PROCESSOR:0"), eid("PROCESSOR:1"))
    assert a.id != b.id and a.slice_id == "op-a"
    before = pool.state()
    with pytest.raises(InsufficientResources):
        create_virtual_element(ElementKind.VBSC, None, ResourceRequest(4, 1), t, pool)
    assert pool.state() == before
    destroy_virtual_element(t, pool, a.id)
    assert pool.free[eid("PROCESSOR:0")] == (8, 8)
    with pytest.raises(ValueError):
        create_virtual_element(ElementKind.VRRU, None, ResourceRequest(1, 1), t, pool)


def test_failed_registration_releases_allocation():
    t, pool = cloud()
    create_virtual_element(ElementKind.VBBU, None, ResourceRequest(1, 1), t, pool, index=3)
    with pytest.raises(Exception):
        create_virtual_element(ElementKind.VBBU, None, ResourceRequest(1, 1), t, pool, index=3)
    assert pool.free[eid("PROCESSOR:0")] == (7, 7)


def test_one_prru_hosts_several_protocols():
    t, _ = cloud()
    umts = attach_vrru(t, eid("PRRU:0"), Protocol.UMTS)
    wlan = attach_vrru(t, eid("PRRU:0"), Protocol.WLAN, "op-b")
    assert t.get(eid("PRRU:0")).vrru_ids == {umts.id, wlan.id}
    assert wlan.slice_id == "op-b"
    with pytest.raises(DuplicateProtocolOnPRRU):
        attach_vrru(t, eid("PRRU:0"), Protocol.UMTS)
    assert t.validate() == []
