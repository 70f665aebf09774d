"""Wireless module library and protocol chains deployable into vBBUs.

Modules carry metadata only: a name, the processing stage they consume and
the stage they produce. A chain is valid when it walks the five stages
contiguously from source bits to waveform.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from types import MappingProxyType
from typing import Mapping, Optional

from .netmodel import ElementKind, Topology, VirtualElement


class StageKind(IntEnum):
    SourceBits = 0
    CodedBits = 1
    InterleavedBits = 2
    Symbols = 3
    Waveform = 4


class LibraryError(Exception):
    pass


class InvalidChainError(Exception):
    def __init__(self, verdict: "Invalid"):
        super().__init__(f"invalid chain at position {verdict.position}: {verdict.reason}")
        self.verdict = verdict


@dataclass(frozen=True)
class WirelessModule:
    name: str
    in_stage: StageKind
    out_stage: StageKind
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "in_stage", StageKind(self.in_stage))
        object.__setattr__(self, "out_stage", StageKind(self.out_stage))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))


@dataclass(frozen=True)
class ProtocolChain:
    protocol_name: str
    module_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "module_names", tuple(self.module_names))


@dataclass(frozen=True)
class Valid:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Invalid:
    position: int
    reason: str

    def __bool__(self) -> bool:
        return False


class ModuleLibrary:
    def __init__(self, modules=()):
        self._modules: dict = {}
        for m in modules:
            self.register(m)

    def __contains__(self, name: str) -> bool:
        return name in self._modules

    def __getitem__(self, name: str) -> WirelessModule:
        return self._modules[name]

    def __iter__(self):
        return iter(sorted(self._modules))

    def __len__(self) -> int:
        return len(self._modules)

    def register(self, module: WirelessModule) -> "ModuleLibrary":
        if module.name in self._modules:
            raise LibraryError(f"duplicate module name {module.name!r}")
        if module.out_stage <= module.in_stage:
            raise LibraryError(
                f"module {module.name!r} maps {module.in_stage.name} to {module.out_stage.name}; "
                "output stage must come later"
            )
        self._modules[module.name] = module
        return self

    def snapshot(self) -> "ModuleLibrary":
        return ModuleLibrary(self._modules.values())

    def to_dict(self) -> list:
        return [
            {
                "name": m.name,
                "in_stage": m.in_stage.name,
                "out_stage": m.out_stage.name,
                "params": dict(m.params),
            }
            for m in (self._modules[n] for n in self)
        ]

    @classmethod
    def from_dict(cls, data: list) -> "ModuleLibrary":
        return cls(
            WirelessModule(d["name"], StageKind[d["in_stage"]], StageKind[d["out_stage"]], d.get("params", {}))
            for d in data
        )


def register_module(library: ModuleLibrary, module: WirelessModule) -> ModuleLibrary:
    return library.register(module)


def validate_chain(library: ModuleLibrary, chain: ProtocolChain):
    if not chain.module_names:
        return Invalid(0, "empty chain")
    expected = StageKind.SourceBits
    for pos, name in enumerate(chain.module_names):
        if name not in library:
            return Invalid(pos, f"unknown module {name!r}")
        module = library[name]
        if module.in_stage != expected:
            if pos == 0:
                return Invalid(pos, f"chain must start at SourceBits, {name!r} consumes {module.in_stage.name}")
            return Invalid(pos, f"{name!r} consumes {module.in_stage.name} but receives {expected.name}")
        expected = module.out_stage
    if expected != StageKind.Waveform:
        return Invalid(len(chain.module_names) - 1, f"chain ends at {expected.name}, not Waveform")
    return Valid()


def deploy_protocol(topology: Topology, vbbu_id, chain: ProtocolChain, library: ModuleLibrary) -> VirtualElement:
    """Install ``chain`` on a vBBU, replacing any previous chain."""
    vbbu = topology.get(vbbu_id)
    if not isinstance(vbbu, VirtualElement) or vbbu.kind is not ElementKind.VBBU:
        raise LibraryError(f"{vbbu_id} is not a vBBU")
    verdict = validate_chain(library, chain)
    if not verdict:
        raise InvalidChainError(verdict)
    updated = replace(vbbu, deployed_chain=chain)
    topology.replace_element(updated)
    return updated


def default_library() -> ModuleLibrary:
    """A small library covering the shipped GSM-like and UMTS-like chains."""
    S = StageKind
    return ModuleLibrary([
        WirelessModule("conv-coder", S.SourceBits, S.CodedBits, {"rate": "1/2", "constraint_length": 5}),
        WirelessModule("turbo-coder", S.SourceBits, S.CodedBits, {"rate": "1/3"}),
        WirelessModule("block-interleaver", S.CodedBits, S.InterleavedBits, {"depth": 8}),
        WirelessModule("umts-interleaver", S.CodedBits, S.InterleavedBits, {"tti_ms": 10}),
        WirelessModule("gmsk-modulator", S.InterleavedBits, S.Symbols, {"bt": 0.3}),
        WirelessModule("qpsk-spreader", S.InterleavedBits, S.Symbols, {"chip_rate_mcps": 3.84}),
        WirelessModule("gaussian-shaper", S.Symbols, S.Waveform, {}),
        WirelessModule("rrc-shaper", S.Symbols, S.Waveform, {"rolloff": 0.22}),
        WirelessModule("pass-through-interleaver", S.CodedBits, S.InterleavedBits, {}),
    ])


GSM_LIKE = ProtocolChain("gsm-like", ("conv-coder", "block-interleaver", "gmsk-modulator", "gaussian-shaper"))
UMTS_LIKE = ProtocolChain("umts-like", ("turbo-coder", "umts-interleaver", "qpsk-spreader", "rrc-shaper"))

SHIPPED_CHAINS = {c.protocol_name: c for c in (GSM_LIKE, UMTS_LIKE)}


def chain_from_dict(data: dict) -> ProtocolChain:
    return ProtocolChain(data["protocol_name"], tuple(data["modules"]))


def find_chain(name: str, extra: Optional[Mapping] = None) -> ProtocolChain:
    if extra and name in extra:
        return extra[name]
    try:
        return SHIPPED_CHAINS[name]
    except KeyError:
        raise LibraryError(f"unknown chain {name!r}") from None
