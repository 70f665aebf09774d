"""Prioritized match-action tables for the network layer and the PHY layer.

Both layers share one :class:`RuleTable`. A lookup returns the highest
priority rule covering the key; equal priorities resolve to the earliest
install. Flow matches live in a :class:`HeaderDomain` that fixes the bit
width of each of the six header fields, so the same code serves real IPv4
headers and the tiny domain used for exhaustive checks.
"""
from __future__ import annotations

import bisect
import ipaddress
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Union

from .netmodel import ElementId, eid

FLOW_FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "transport_proto", "service_tag")
PREFIX_FIELDS = ("src_ip", "dst_ip")


@dataclass(frozen=True)
class HeaderDomain:
    name: str
    widths: tuple  # bit width per FLOW_FIELDS entry

    def width(self, field_name: str) -> int:
        return self.widths[FLOW_FIELDS.index(field_name)]

    @property
    def total_bits(self) -> int:
        return sum(self.widths)


IPV4_DOMAIN = HeaderDomain("ipv4", (32, 32, 16, 16, 8, 16))
# 8 bits in total; small enough to enumerate every header.
TOY_DOMAIN = HeaderDomain("toy", (2, 2, 1, 1, 1, 1))


@dataclass(frozen=True, order=True)
class Prefix:
    value: int
    length: int
    bits: int = 32

    def __post_init__(self):
        if not 0 <= self.length <= self.bits:
            raise ValueError(f"prefix length {self.length} outside [0, {self.bits}]")
        if not 0 <= self.value < (1 << self.bits):
            raise ValueError(f"prefix value {self.value} does not fit in {self.bits} bits")
        shift = self.bits - self.length
        object.__setattr__(self, "value", (self.value >> shift) << shift)

    @classmethod
    def parse(cls, text: Union[str, int, "Prefix"], bits: int = 32) -> "Prefix":
        if isinstance(text, Prefix):
            return text
        if isinstance(text, int):
            return cls(text, bits, bits)
        if bits == 32:
            net = ipaddress.IPv4Network(text, strict=False)
            return cls(int(net.network_address), net.prefixlen, 32)
        value, _, length = text.partition("/")
        return cls(int(value), int(length) if length else bits, bits)

    def contains(self, value: int) -> bool:
        shift = self.bits - self.length
        return (value >> shift) == (self.value >> shift)

    def __str__(self) -> str:
        if self.bits == 32:
            return f"{ipaddress.IPv4Address(self.value)}/{self.length}"
        return f"{self.value}/{self.length}"


@dataclass(frozen=True)
class FlowHeader:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    transport_proto: int
    service_tag: int
    domain: HeaderDomain = field(default=IPV4_DOMAIN, compare=False)

    def __post_init__(self):
        for name, width in zip(FLOW_FIELDS, self.domain.widths):
            raw = getattr(self, name)
            if isinstance(raw, str):
                raw = int(ipaddress.IPv4Address(raw))
                object.__setattr__(self, name, raw)
            if not 0 <= raw < (1 << width):
                raise ValueError(f"{name}={raw} outside the {self.domain.name} domain")

    @classmethod
    def make(cls, domain: HeaderDomain = IPV4_DOMAIN, **values) -> "FlowHeader":
        full = {name: values.get(name, 0) for name in FLOW_FIELDS}
        return cls(domain=domain, **full)

    def values(self) -> tuple:
        return tuple(getattr(self, f) for f in FLOW_FIELDS)

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in FLOW_FIELDS}
        if self.domain == IPV4_DOMAIN:
            for f in PREFIX_FIELDS:
                out[f] = str(ipaddress.IPv4Address(out[f]))
        return out


@dataclass(frozen=True)
class FlowMatch:
    """Six-field flow pattern. ``None`` is a wildcard on that field."""

    src_ip: Optional[Prefix] = None
    dst_ip: Optional[Prefix] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    transport_proto: Optional[int] = None
    service_tag: Optional[int] = None
    domain: HeaderDomain = field(default=IPV4_DOMAIN, compare=False)

    def __post_init__(self):
        for name in PREFIX_FIELDS:
            raw = getattr(self, name)
            if raw is not None:
                object.__setattr__(self, name, Prefix.parse(raw, self.domain.width(name)))
        for name in FLOW_FIELDS[2:]:
            raw = getattr(self, name)
            if raw is not None and not 0 <= raw < (1 << self.domain.width(name)):
                raise ValueError(f"{name}={raw} outside the {self.domain.name} domain")

    def covers(self, header: FlowHeader) -> bool:
        for name in PREFIX_FIELDS:
            p = getattr(self, name)
            if p is not None and not p.contains(getattr(header, name)):
                return False
        for name in FLOW_FIELDS[2:]:
            v = getattr(self, name)
            if v is not None and v != getattr(header, name):
                return False
        return True

    def field_prefixes(self) -> tuple:
        """Every field as a ``(value, length, width)`` prefix; exact = full length, wildcard = 0."""
        out = []
        for name, width in zip(FLOW_FIELDS, self.domain.widths):
            raw = getattr(self, name)
            if raw is None:
                out.append((0, 0, width))
            elif isinstance(raw, Prefix):
                out.append((raw.value, raw.length, width))
            else:
                out.append((raw, width, width))
        return tuple(out)

    @classmethod
    def from_field_prefixes(cls, parts, domain: HeaderDomain) -> "FlowMatch":
        values = {}
        for name, (value, length, width) in zip(FLOW_FIELDS, parts):
            if length == 0:
                values[name] = None
            elif name in PREFIX_FIELDS:
                values[name] = Prefix(value, length, width)
            elif length == width:
                values[name] = value
            else:
                raise ValueError(f"{name} is an exact-match field, cannot hold a /{length} prefix")
        return cls(domain=domain, **values)

    def to_dict(self) -> dict:
        out = {}
        for name in FLOW_FIELDS:
            raw = getattr(self, name)
            if raw is not None:
                out[name] = str(raw) if isinstance(raw, Prefix) else raw
        return out

    @classmethod
    def from_dict(cls, data: dict, domain: HeaderDomain = IPV4_DOMAIN) -> "FlowMatch":
        unknown = set(data) - set(FLOW_FIELDS)
        if unknown:
            raise ValueError(f"unknown match fields {sorted(unknown)}")
        return cls(domain=domain, **data)


class EncodingMode(str, Enum):
    CONVOLUTIONAL = "CONVOLUTIONAL"
    TURBO = "TURBO"
    LDPC = "LDPC"
    POLAR = "POLAR"


class Modulation(str, Enum):
    GMSK = "GMSK"
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"


PHY_FIELDS = ("encoding_mode", "modulation_type", "carrier_id", "cell_id", "user_group")


@dataclass(frozen=True)
class PhyContext:
    encoding_mode: EncodingMode
    modulation_type: Modulation
    carrier_id: int
    cell_id: Any
    user_group: int

    def to_dict(self) -> dict:
        return {
            "encoding_mode": EncodingMode(self.encoding_mode).value,
            "modulation_type": Modulation(self.modulation_type).value,
            "carrier_id": self.carrier_id,
            "cell_id": _jsonable(self.cell_id),
            "user_group": self.user_group,
        }


@dataclass(frozen=True)
class PhyMatch:
    encoding_mode: Optional[EncodingMode] = None
    modulation_type: Optional[Modulation] = None
    carrier_id: Optional[int] = None
    cell_id: Any = None
    user_group: Optional[int] = None

    def __post_init__(self):
        if self.encoding_mode is not None:
            object.__setattr__(self, "encoding_mode", EncodingMode(self.encoding_mode))
        if self.modulation_type is not None:
            object.__setattr__(self, "modulation_type", Modulation(self.modulation_type))

    @property
    def is_wildcard(self) -> bool:
        return all(getattr(self, f) is None for f in PHY_FIELDS)

    def covers(self, ctx: PhyContext) -> bool:
        return all(
            getattr(self, f) is None or getattr(self, f) == getattr(ctx, f) for f in PHY_FIELDS
        )

    def to_dict(self) -> dict:
        out = {}
        for f in PHY_FIELDS:
            v = getattr(self, f)
            if v is not None:
                out[f] = _jsonable(v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PhyMatch":
        data = dict(data)
        if isinstance(data.get("cell_id"), str) and ":" in data["cell_id"]:
            data["cell_id"] = eid(data["cell_id"])
        return cls(**data)


def _jsonable(v):
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, ElementId):
        return str(v)
    return v


# actions


@dataclass(frozen=True)
class Forward:
    dest: ElementId
    rate_limit_mbps: Optional[float] = None  # None means unlimited

    def __post_init__(self):
        object.__setattr__(self, "dest", eid(self.dest))
        if self.rate_limit_mbps is not None and self.rate_limit_mbps <= 0:
            raise ValueError("rate limit must be positive")


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class ToController:
    pass


@dataclass(frozen=True)
class SetPower:
    dbm: float


@dataclass(frozen=True)
class Beamform:
    target_user: Any
    gain: float

    def __post_init__(self):
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError(f"beamforming gain {self.gain} outside [0, 1]")


@dataclass(frozen=True)
class CancelInterference:
    neighbor_cell: Any


@dataclass(frozen=True)
class SetModulation:
    modulation_type: Modulation

    def __post_init__(self):
        object.__setattr__(self, "modulation_type", Modulation(self.modulation_type))


FLOW_ACTIONS = (Forward, Drop, ToController)
PHY_ACTIONS = (SetPower, Beamform, CancelInterference, SetModulation)

_ACTION_NAMES = {
    Forward: "forward",
    Drop: "drop",
    ToController: "to_controller",
    SetPower: "set_power",
    Beamform: "beamform",
    CancelInterference: "cancel_interference",
    SetModulation: "set_modulation",
}
_ACTION_TYPES = {v: k for k, v in _ACTION_NAMES.items()}


def action_to_dict(action) -> dict:
    out = {"type": _ACTION_NAMES[type(action)]}
    for f in getattr(action, "__dataclass_fields__", {}):
        out[f] = _jsonable(getattr(action, f))
    return out


def action_from_dict(data: dict):
    data = dict(data)
    cls = _ACTION_TYPES[data.pop("type")]
    for key in ("target_user", "neighbor_cell"):
        if isinstance(data.get(key), str) and ":" in data[key]:
            data[key] = eid(data[key])
    return cls(**data)


# rules


class MissPolicy(str, Enum):
    DROP = "Drop"
    TO_CONTROLLER = "ToController"


class RuleError(Exception):
    pass


class DuplicateRuleError(RuleError):
    pass


class UnknownRuleError(RuleError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


@dataclass
class FlowRule:
    rule_id: int
    priority: int
    match: FlowMatch
    actions: tuple
    packet_count: int = 0
    install_seq: int = -1

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if not self.actions:
            raise RuleError(f"rule {self.rule_id} has no actions")
        for a in self.actions:
            if not isinstance(a, FLOW_ACTIONS):
                raise RuleError(f"rule {self.rule_id}: {type(a).__name__} is not a flow action")
        if any(isinstance(a, Drop) for a in self.actions) and len(self.actions) > 1:
            raise RuleError(f"rule {self.rule_id}: Drop must be the only action")

    def to_dict(self) -> dict:
        return {
            "layer": "flow",
            "rule_id": self.rule_id,
            "priority": self.priority,
            "match": self.match.to_dict(),
            "actions": [action_to_dict(a) for a in self.actions],
        }


@dataclass
class PhyRule:
    rule_id: int
    priority: int
    match: PhyMatch
    actions: tuple
    packet_count: int = 0
    install_seq: int = -1
    default: bool = False

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if not self.actions:
            raise RuleError(f"rule {self.rule_id} has no actions")
        for a in self.actions:
            if not isinstance(a, PHY_ACTIONS):
                raise RuleError(f"rule {self.rule_id}: {type(a).__name__} is not a PHY action")
        if self.match.is_wildcard and not self.default:
            raise RuleError(f"rule {self.rule_id}: all-wildcard PHY match is only allowed on the table default")

    def to_dict(self) -> dict:
        out = {
            "layer": "phy",
            "rule_id": self.rule_id,
            "priority": self.priority,
            "match": self.match.to_dict(),
            "actions": [action_to_dict(a) for a in self.actions],
        }
        if self.default:
            out["default"] = True
        return out


def rule_from_dict(data: dict, domain: HeaderDomain = IPV4_DOMAIN):
    actions = tuple(action_from_dict(a) for a in data["actions"])
    if data.get("layer", "flow") == "phy":
        return PhyRule(
            int(data["rule_id"]), int(data["priority"]), PhyMatch.from_dict(data["match"]), actions,
            default=bool(data.get("default", False)),
        )
    return FlowRule(int(data["rule_id"]), int(data["priority"]), FlowMatch.from_dict(data["match"], domain), actions)


@dataclass(frozen=True)
class Matched:
    rule_id: int
    actions: tuple


@dataclass(frozen=True)
class Miss:
    policy: MissPolicy


class RuleTable:
    """Rules kept sorted by (priority desc, install order asc); first cover wins."""

    def __init__(self, miss_policy: MissPolicy = MissPolicy.DROP):
        self.miss_policy = MissPolicy(miss_policy)
        self.rules: dict = {}
        self.miss_count = 0
        self._order: list = []  # (-priority, install_seq, rule_id)
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return (self.rules[k[2]] for k in self._order)

    def __contains__(self, rule_id: int) -> bool:
        return rule_id in self.rules

    def install(self, rule) -> Any:
        if rule.rule_id in self.rules:
            raise DuplicateRuleError(f"rule id {rule.rule_id} already installed")
        if self.rules:
            first = next(iter(self.rules.values()))
            if type(first) is not type(rule):
                raise RuleError(f"cannot mix {type(first).__name__} and {type(rule).__name__} in one table")
        stored = replace(rule, install_seq=self._next_seq, packet_count=0)
        self._next_seq += 1
        self.rules[stored.rule_id] = stored
        bisect.insort(self._order, (-stored.priority, stored.install_seq, stored.rule_id))
        return stored

    def remove(self, rule_id: int) -> None:
        try:
            rule = self.rules.pop(rule_id)
        except KeyError:
            raise UnknownRuleError(f"unknown rule id {rule_id}") from None
        self._order.remove((-rule.priority, rule.install_seq, rule_id))

    def lookup(self, key):
        for _, _, rule_id in self._order:
            rule = self.rules[rule_id]
            if rule.match.covers(key):
                rule.packet_count += 1
                return Matched(rule_id, rule.actions)
        self.miss_count += 1
        return Miss(self.miss_policy)

    def copy(self) -> "RuleTable":
        other = RuleTable(self.miss_policy)
        other.rules = {k: replace(r) for k, r in self.rules.items()}
        other.miss_count = self.miss_count
        other._order = list(self._order)
        other._next_seq = self._next_seq
        return other

    def to_dict(self) -> dict:
        return {"miss_policy": self.miss_policy.value, "rules": [r.to_dict() for r in self]}


def install_rule(table: RuleTable, rule) -> RuleTable:
    table.install(rule)
    return table


def remove_rule(table: RuleTable, rule_id: int) -> RuleTable:
    table.remove(rule_id)
    return table


def match_flow(table: RuleTable, packet) -> Union[Matched, Miss]:
    """Look up a packet (or bare :class:`FlowHeader`) in a flow table."""
    header = packet.header if isinstance(packet, Packet) else packet
    return table.lookup(header)


def match_phy(table: RuleTable, context: PhyContext) -> Union[Matched, Miss]:
    return table.lookup(context)


@dataclass(frozen=True)
class Packet:
    packet_id: int
    header: FlowHeader
    size_bytes: int = 1000

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("packet size must be positive")

    def to_dict(self) -> dict:
        return {"packet_id": self.packet_id, "size_bytes": self.size_bytes, "header": self.header.to_dict()}

    @classmethod
    def from_dict(cls, data: dict, domain: HeaderDomain = IPV4_DOMAIN) -> "Packet":
        return cls(int(data["packet_id"]), FlowHeader.make(domain, **data.get("header", {})), int(data.get("size_bytes", 1000)))
