"""Compute/storage scheduler for the shared processor pool.

Single allocations are first-fit over processors in id order. Batches
are first-fit-decreasing on cpu and all-or-nothing.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Iterable

from .netmodel import ElementId, ElementKind, PhysicalProcessor


class InsufficientResources(Exception):
    pass


class UnknownAllocation(KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


@dataclass(frozen=True)
class ResourceRequest:
    cpu_units: int
    storage_units: int

    def __post_init__(self):
        if self.cpu_units <= 0 or self.storage_units <= 0:
            raise ValueError(f"resource request must be positive, got {self.cpu_units}/{self.storage_units}")


@dataclass(frozen=True)
class ResourceAllocation:
    allocation_id: int
    processor_id: ElementId
    cpu_units: int
    storage_units: int


class ResourcePool:
    """Free capacity per processor plus the ledger of live allocations."""

    def __init__(self, processors: Iterable[PhysicalProcessor]):
        self.capacity = {}
        for p in sorted(processors, key=lambda p: p.id):
            if p.id in self.capacity:
                raise ValueError(f"duplicate processor {p.id}")
            self.capacity[p.id] = (p.cpu_units, p.storage_units)
        self.free = dict(self.capacity)
        self.allocations: dict = {}
        self._next_id = 0

    @classmethod
    def from_topology(cls, topology) -> "ResourcePool":
        """Pool over the topology's processors, charged for already-allocated elements."""
        pool = cls(topology.of_kind(ElementKind.PROCESSOR))
        for element in topology.elements.values():
            alloc = getattr(element, "allocation", None)
            if alloc is not None:
                pool._charge(alloc)
                pool._next_id = max(pool._next_id, alloc.allocation_id + 1)
        return pool

    def state(self) -> tuple:
        """Comparable snapshot (free capacities and live allocations)."""
        return (tuple(sorted(self.free.items())), tuple(sorted(self.allocations.items())))

    def _fits(self, pid: ElementId, request: ResourceRequest) -> bool:
        cpu, storage = self.free[pid]
        return cpu >= request.cpu_units and storage >= request.storage_units

    def _charge(self, alloc: ResourceAllocation) -> None:
        cpu, storage = self.free[alloc.processor_id]
        cpu -= alloc.cpu_units
        storage -= alloc.storage_units
        if cpu < 0 or storage < 0:
            raise InsufficientResources(f"allocation {alloc.allocation_id} overcommits {alloc.processor_id}")
        self.free[alloc.processor_id] = (cpu, storage)
        self.allocations[alloc.allocation_id] = alloc

    def allocate(self, request: ResourceRequest) -> ResourceAllocation:
        for pid in self.free:
            if self._fits(pid, request):
                alloc = ResourceAllocation(self._next_id, pid, request.cpu_units, request.storage_units)
                self._next_id += 1
                self._charge(alloc)
                return alloc
        raise InsufficientResources(
            f"no processor has {request.cpu_units} cpu and {request.storage_units} storage free"
        )

    def release(self, allocation_id: int) -> None:
        try:
            alloc = self.allocations.pop(allocation_id)
        except KeyError:
            raise UnknownAllocation(f"unknown allocation {allocation_id}") from None
        cpu, storage = self.free[alloc.processor_id]
        self.free[alloc.processor_id] = (cpu + alloc.cpu_units, storage + alloc.storage_units)

    def place_batch(self, requests: list) -> list:
        """Allocate every request or none of them.

        Returns allocations in the caller's request order.
        """
        order = sorted(
            range(len(requests)),
            key=lambda i: (-requests[i].cpu_units, -requests[i].storage_units, i),
        )
        saved = (dict(self.free), dict(self.allocations), self._next_id)
        granted = {}
        try:
            for i in order:
                granted[i] = self.allocate(requests[i])
        except InsufficientResources:
            self.free, self.allocations, self._next_id = saved
            raise
        return [granted[i] for i in range(len(requests))]

    def copy(self) -> "ResourcePool":
        return copy.deepcopy(self)


def allocate(pool: ResourcePool, request: ResourceRequest) -> ResourceAllocation:
    return pool.allocate(request)


def release(pool: ResourcePool, allocation_id: int) -> ResourcePool:
    pool.release(allocation_id)
    return pool


def place_batch(pool: ResourcePool, requests: list) -> list:
    return pool.place_batch(requests)
