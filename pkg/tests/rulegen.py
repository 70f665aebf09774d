"""Random rule/packet generators and brute-force oracles shared by the tests."""
import numpy as np

from xl5g.netmodel import eid
from xl5g.ruleengine import (
    FLOW_FIELDS,
    IPV4_DOMAIN,
    TOY_DOMAIN,
    Beamform,
    Drop,
    EncodingMode,
    FlowHeader,
    FlowMatch,
    FlowRule,
    Forward,
    Modulation,
    PhyContext,
    PhyMatch,
    PhyRule,
    Prefix,
    SetPower,
    ToController,
)

# Small value pools so random rules and packets overlap often.
IP_POOL = [0x0A000000, 0x0A000007, 0x0A0000FF, 0x0A010000, 0xC0A80101]
PORTS = [22, 80, 443]
PROTOS = [6, 17]
TAGS = [0, 1, 2]
CELLS = [eid("VRRU:0"), eid("VRRU:1"), eid("VRRU:2")]


def pick(rng, items):
    return items[int(rng.integers(0, len(items)))]


def random_header(rng, domain=IPV4_DOMAIN) -> FlowHeader:
    if domain is IPV4_DOMAIN:
        return FlowHeader(
            int(rng.choice(IP_POOL)), int(rng.choice(IP_POOL)), int(rng.choice(PORTS)),
            int(rng.choice(PORTS)), int(rng.choice(PROTOS)), int(rng.choice(TAGS)),
        )
    return FlowHeader(*(int(rng.integers(0, 1 << w)) for w in domain.widths), domain=domain)


def random_match(rng, domain=IPV4_DOMAIN, p_wild=0.5) -> FlowMatch:
    values = {}
    for name, width in zip(FLOW_FIELDS, domain.widths):
        if rng.random() < p_wild:
            continue
        if name in ("src_ip", "dst_ip"):
            base = int(rng.choice(IP_POOL)) if domain is IPV4_DOMAIN else int(rng.integers(0, 1 << width))
            length = int(rng.choice([8, 16, 24, 32])) if domain is IPV4_DOMAIN else int(rng.integers(1, width + 1))
            values[name] = Prefix(base, length, width)
        elif domain is IPV4_DOMAIN:
            pool = {"src_port": PORTS, "dst_port": PORTS, "transport_proto": PROTOS, "service_tag": TAGS}[name]
            values[name] = int(rng.choice(pool))
        else:
            values[name] = int(rng.integers(0, 1 << width))
    return FlowMatch(domain=domain, **values)


def random_flow_rule(rng, rule_id, domain=IPV4_DOMAIN, priorities=4) -> FlowRule:
    kind = rng.integers(0, 3)
    action = (Forward(eid(f"VBBU:{int(rng.integers(0, 3))}")), Drop(), ToController())[kind]
    return FlowRule(rule_id, int(rng.integers(0, priorities)), random_match(rng, domain), (action,))


def random_context(rng) -> PhyContext:
    return PhyContext(
        pick(rng, list(EncodingMode)), pick(rng, list(Modulation)), int(rng.integers(0, 3)),
        CELLS[int(rng.integers(0, len(CELLS)))], int(rng.integers(0, 3)),
    )


def random_phy_match(rng) -> PhyMatch:
    while True:
        m = PhyMatch(
            pick(rng, list(EncodingMode)) if rng.random() < 0.4 else None,
            pick(rng, list(Modulation)) if rng.random() < 0.4 else None,
            int(rng.integers(0, 3)) if rng.random() < 0.4 else None,
            CELLS[int(rng.integers(0, len(CELLS)))] if rng.random() < 0.4 else None,
            int(rng.integers(0, 3)) if rng.random() < 0.4 else None,
        )
        if not m.is_wildcard:
            return m


def random_phy_rule(rng, rule_id, priorities=4) -> PhyRule:
    action = SetPower(float(rng.integers(10, 40))) if rng.random() < 0.5 else Beamform(int(rng.integers(0, 9)), 0.5)
    return PhyRule(rule_id, int(rng.integers(0, priorities)), random_phy_match(rng), (action,))


def oracle_lookup(rules_in_install_order, key):
    """Winning rule id by exhaustive scan: max priority, then earliest install; None on miss."""
    best = None
    for seq, rule in enumerate(rules_in_install_order):
        if rule.match.covers(key):
            rank = (rule.priority, -seq)
            if best is None or rank > best[0]:
                best = (rank, rule.rule_id)
    return None if best is None else best[1]


def brute_covers(match: FlowMatch, header: FlowHeader) -> bool:
    """Field-by-field check written against raw bits, independent of FlowMatch.covers."""
    for name, width in zip(FLOW_FIELDS, match.domain.widths):
        pattern = getattr(match, name)
        value = getattr(header, name)
        if pattern is None:
            continue
        if isinstance(pattern, Prefix):
            mask = ((1 << pattern.length) - 1) << (width - pattern.length)
            if (value & mask) != (pattern.value & mask):
                return False
        elif pattern != value:
            return False
    return True


def seeded(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


__all__ = [
    "random_header", "random_match", "random_flow_rule", "random_context", "random_phy_rule",
    "oracle_lookup", "brute_covers", "seeded", "TOY_DOMAIN", "IPV4_DOMAIN",
]
