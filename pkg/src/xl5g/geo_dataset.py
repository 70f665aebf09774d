"""Base-station dataset ingestion and the planar coverage grid.

Records come from Sitefinder-style CSV exports. Coordinates are projected
with an equirectangular approximation around the study region's
south-west corner, the region is clipped half-open and the area is
discretized into a square lattice of coverage-demand points.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional

import numpy as np

from .netmodel import DATASET_PROTOCOLS, PlanarPoint, Protocol

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_GRID_SPACING_M = 100.0


@dataclass(frozen=True)
class GeoPoint:
    latitude_deg: float
    longitude_deg: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude_deg <= 90.0):
            raise ValueError(f"latitude {self.latitude_deg} outside [-90, 90]")
        if not (-180.0 <= self.longitude_deg <= 180.0):
            raise ValueError(f"longitude {self.longitude_deg} outside [-180, 180]")


@dataclass(frozen=True)
class Region:
    origin: GeoPoint
    width_m: float = 10_000.0
    height_m: float = 10_000.0

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValueError("region width and height must be positive")

    def contains(self, p: PlanarPoint) -> bool:
        return 0.0 <= p.x_m < self.width_m and 0.0 <= p.y_m < self.height_m


# South-west corner of the bundled 10 km x 10 km Manchester study area.
MANCHESTER_ORIGIN = GeoPoint(53.430000, -2.320000)
MANCHESTER_REGION = Region(MANCHESTER_ORIGIN, 10_000.0, 10_000.0)


@dataclass(frozen=True)
class BaseStationRecord:
    id: str
    operator: str
    protocol: Protocol
    location: PlanarPoint
    tx_power_dbm: Optional[float]
    raw_geo: GeoPoint


def project(p: GeoPoint, origin: GeoPoint) -> PlanarPoint:
    """Equirectangular projection, meters east/north of ``origin``."""
    dlat = math.radians(p.latitude_deg - origin.latitude_deg)
    dlon = math.radians(p.longitude_deg - origin.longitude_deg)
    return PlanarPoint(
        EARTH_RADIUS_M * dlon * math.cos(math.radians(origin.latitude_deg)),
        EARTH_RADIUS_M * dlat,
    )


def inverse_project(p: PlanarPoint, origin: GeoPoint) -> GeoPoint:
    lat = origin.latitude_deg + math.degrees(p.y_m / EARTH_RADIUS_M)
    lon = origin.longitude_deg + math.degrees(
        p.x_m / (EARTH_RADIUS_M * math.cos(math.radians(origin.latitude_deg)))
    )
    return GeoPoint(lat, lon)


# parsing


class DatasetError(Exception):
    pass


# Logical field -> column header. The defaults follow the Sitefinder export.
SITEFINDER_SCHEMA = {
    "id": "Opref",
    "operator": "Operator",
    "protocol": "Transtype",
    "latitude": "Sitelat",
    "longitude": "Sitelng",
    "power": "Maxpwrdbm",
}

REQUIRED_FIELDS = ("operator", "protocol", "latitude", "longitude")


@dataclass
class ParseReport:
    kept: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return self.kept + self.skipped

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1


def _protocol(text: str) -> Protocol:
    value = text.strip().upper()
    for p in DATASET_PROTOCOLS:
        if value == p.value:
            return p
    raise ValueError(f"protocol {text!r}")


def parse_sitefinder(raw_text, schema: Optional[Mapping[str, str]] = None,
                     origin: GeoPoint = MANCHESTER_ORIGIN) -> tuple:
    """Parse CSV text into records, projecting each onto ``origin``.

    Returns ``(records, report)``. Malformed rows are skipped and counted.
    Rows without an id column value get ``row-<n>`` ids.
    """
    schema = {**SITEFINDER_SCHEMA, **(schema or {})}
    stream = io.StringIO(raw_text) if isinstance(raw_text, str) else raw_text
    reader = csv.DictReader(stream)
    header = reader.fieldnames
    if not header:
        raise DatasetError("dataset has no header row")
    missing = [schema[f] for f in REQUIRED_FIELDS if schema[f] not in header]
    if missing:
        raise DatasetError(f"header lacks required columns: {', '.join(missing)}")

    records, report, seen = [], ParseReport(), set()
    for n, row in enumerate(reader, start=1):
        if None in row or any(v is None for v in row.values()):
            report.skip("column-count")
            continue
        try:
            protocol = _protocol(row[schema["protocol"]])
        except ValueError:
            report.skip("protocol")
            continue
        try:
            geo = GeoPoint(float(row[schema["latitude"]]), float(row[schema["longitude"]]))
        except ValueError:
            report.skip("coordinates")
            continue
        if not math.isfinite(geo.latitude_deg) or not math.isfinite(geo.longitude_deg):
            report.skip("coordinates")
            continue
        power = None
        raw_power = row.get(schema["power"], "") if schema["power"] in header else ""
        if raw_power is not None and raw_power.strip():
            try:
                power = float(raw_power)
            except ValueError:
                report.skip("power")
                continue
            if not math.isfinite(power):
                report.skip("power")
                continue
        operator = row[schema["operator"]].strip()
        if not operator:
            report.skip("operator")
            continue
        rid = (row.get(schema["id"]) or "").strip() if schema["id"] in header else ""
        rid = rid or f"row-{n}"
        if rid in seen:
            report.skip("duplicate-id")
            continue
        seen.add(rid)
        records.append(BaseStationRecord(rid, operator, protocol, project(geo, origin), power, geo))
        report.kept += 1
    return records, report


def clip_region(records: list, region: Region) -> list:
    return [r for r in records if region.contains(r.location)]


def load_fixture(region: Region = MANCHESTER_REGION) -> list:
    """The bundled Manchester-area fixture, projected and clipped."""
    text = resources.files("xl5g.data").joinpath("manchester_sitefinder.csv").read_text()
    records, _ = parse_sitefinder(text, origin=region.origin)
    return clip_region(records, region)


def by_protocol(records: list, protocol) -> list:
    protocol = Protocol(protocol)
    return [r for r in records if r.protocol is protocol]


def count_by(records: list) -> Counter:
    """Record counts keyed by ``(operator, protocol)``."""
    return Counter((r.operator, r.protocol.value) for r in records)


# coverage grid


@dataclass
class CoverageGrid:
    """Lattice of demand points plus, per point, the stations within radius.

    ``coverage`` is a boolean (n_stations, n_points) matrix aligned with
    ``station_ids``; ``cover_sets`` is the same relation as Python sets.
    """

    spacing_m: float
    radius_m: float
    points: np.ndarray  # (n_points, 2)
    station_ids: tuple
    coverage: np.ndarray

    @property
    def cover_sets(self) -> list:
        ids = self.station_ids
        return [frozenset(ids[i] for i in np.flatnonzero(col)) for col in self.coverage.T]

    def cover_set_at(self, x: float, y: float) -> frozenset:
        idx = np.flatnonzero((self.points[:, 0] == x) & (self.points[:, 1] == y))
        if not idx.size:
            raise KeyError(f"({x}, {y}) is not a lattice point")
        col = self.coverage[:, idx[0]]
        return frozenset(self.station_ids[i] for i in np.flatnonzero(col))

    def point_tuples(self) -> list:
        return [(float(x), float(y)) for x, y in self.points]


def lattice(region: Region, spacing_m: float) -> np.ndarray:
    if spacing_m <= 0:
        raise ValueError("grid spacing must be positive")
    xs = np.arange(0.0, region.width_m, spacing_m)
    ys = np.arange(0.0, region.height_m, spacing_m)
    # guard against float drift producing a point on the open boundary
    xs = xs[xs < region.width_m]
    ys = ys[ys < region.height_m]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def station_xy(stations: list) -> np.ndarray:
    return np.array([[s.location.x_m, s.location.y_m] for s in stations], dtype=float).reshape(-1, 2)


def coverage_matrix(stations_xy: np.ndarray, points: np.ndarray, radius_m: float) -> np.ndarray:
    d2 = (
        (stations_xy[:, None, 0] - points[None, :, 0]) ** 2
        + (stations_xy[:, None, 1] - points[None, :, 1]) ** 2
    )
    return d2 <= radius_m * radius_m


def build_grid(region: Region, spacing_m: float, stations: list, radius_m: float) -> CoverageGrid:
    if radius_m < 0:
        raise ValueError("radius must be non-negative")
    points = lattice(region, spacing_m)
    xy = station_xy(stations)
    return CoverageGrid(
        float(spacing_m), float(radius_m), points,
        tuple(s.id for s in stations), coverage_matrix(xy, points, radius_m),
    )


# projected CSV written by the ingest command

PROJECTED_HEADER = ("id", "operator", "protocol", "x_m", "y_m", "tx_power_dbm", "latitude", "longitude")


def write_projected(records: list, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(PROJECTED_HEADER)
    for r in records:
        w.writerow([
            r.id, r.operator, r.protocol.value, f"{r.location.x_m:.3f}", f"{r.location.y_m:.3f}",
            "" if r.tx_power_dbm is None else f"{r.tx_power_dbm:g}",
            f"{r.raw_geo.latitude_deg:.6f}", f"{r.raw_geo.longitude_deg:.6f}",
        ])


def read_projected(text: str) -> list:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        power = row["tx_power_dbm"].strip()
        out.append(BaseStationRecord(
            row["id"], row["operator"], Protocol(row["protocol"]),
            PlanarPoint(float(row["x_m"]), float(row["y_m"])),
            float(power) if power else None,
            GeoPoint(float(row["latitude"]), float(row["longitude"])),
        ))
    return out


def load_stations(text: str, region: Region = MANCHESTER_REGION, schema=None) -> tuple:
    """Load either a raw Sitefinder export or a projected CSV; returns ``(records, report)``."""
    first = text.splitlines()[0] if text.strip() else ""
    if first.strip() == ",".join(PROJECTED_HEADER):
        records = read_projected(text)
        return clip_region(records, region), ParseReport(kept=len(records))
    records, report = parse_sitefinder(text, schema, region.origin)
    return clip_region(records, region), report
