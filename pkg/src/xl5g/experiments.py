"""Energy-saving and QoS-utility experiments over a base-station dataset.

Energy: at each coverage radius the controller switches off every base
station not needed to keep the covered part of the study area covered.
IIT solves one greedy cover per operator, CIT a single pooled cover.

QoS: users are dropped uniformly over the region and bound to one
(operator, protocol) network. Each (user, station) pair gets a utility
in [0, 1) from a keyed hash, so every strategy sees identical values and
strategies only differ in which stations they may pick.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .controlplane import ControlPlane, EventLog, GlobalViewDB
from .geo_dataset import (
    DEFAULT_GRID_SPACING_M,
    MANCHESTER_REGION,
    BaseStationRecord,
    Region,
    coverage_matrix,
    lattice,
    station_xy,
)
from .netmodel import PlanarPoint, Protocol, Topology

DEFAULT_RADII_M = tuple(float(r) for r in range(200, 2001, 200))
STRATEGIES = ("Current", "IntraOPR", "InterOPR", "HeterSTRA")
ENERGY_STRATEGIES = ("IIT", "CIT")

ENERGY_HEADER = ("protocol", "strategy", "radius_m", "operator", "total", "active", "off_fraction", "energy_ratio")
QOS_HEADER = ("radius_m", "strategy", "mean_utility", "zero_coverage_fraction", "n_users")


class ExperimentError(Exception):
    pass


def _check_radii(radii) -> tuple:
    radii = tuple(float(r) for r in radii)
    if any(r <= 0 for r in radii):
        raise ExperimentError("radii must be positive")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ExperimentError("radii must be strictly increasing")
    return radii


# greedy cover


def greedy_cover_matrix(coverage: np.ndarray, demand: np.ndarray) -> list:
    """Greedy maximum-coverage over a (stations, points) boolean matrix.

    Picks the row covering most uncovered demand points, lowest row index
    on ties, until ``demand`` is exhausted. Returns row indices in pick order.
    """
    cov = np.asarray(coverage, dtype=bool)
    uncovered = np.asarray(demand, dtype=bool).copy()
    if cov.shape[0] == 0:
        if uncovered.any():
            raise ExperimentError("demand points but no stations")
        return []
    weights = cov.astype(np.int32)
    gains = weights @ uncovered.astype(np.int32)
    chosen = []
    while uncovered.any():
        best = int(np.argmax(gains))
        if gains[best] <= 0:
            raise ExperimentError(f"{int(uncovered.sum())} demand points cannot be covered")
        newly = cov[best] & uncovered
        chosen.append(best)
        uncovered &= ~newly
        gains -= weights[:, newly].sum(axis=1)
    return chosen


def greedy_cover(stations: Sequence[BaseStationRecord], demand_points: np.ndarray, radius_m: float) -> list:
    """Active station ids (lowest id wins ties) covering every demand point."""
    ordered = sorted(stations, key=lambda s: s.id)
    pts = np.asarray(demand_points, dtype=float).reshape(-1, 2)
    cov = coverage_matrix(station_xy(ordered), pts, radius_m)
    return [ordered[i].id for i in greedy_cover_matrix(cov, np.ones(len(pts), dtype=bool))]


# energy


@dataclass(frozen=True)
class EnergyConfig:
    protocol: Protocol = Protocol.UMTS
    strategy: str = "IIT"
    radii_m: tuple = DEFAULT_RADII_M
    grid_spacing_m: float = DEFAULT_GRID_SPACING_M
    seed: int = 42
    region: Region = MANCHESTER_REGION

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "radii_m", _check_radii(self.radii_m))
        if self.strategy not in ENERGY_STRATEGIES:
            raise ExperimentError(f"unknown energy strategy {self.strategy!r}")
        if self.grid_spacing_m <= 0:
            raise ExperimentError("grid spacing must be positive")


@dataclass(frozen=True)
class EnergyRow:
    protocol: str
    strategy: str
    radius_m: float
    operator: str
    total: int
    active: int
    off_fraction: float
    energy_ratio: float

    @property
    def energy_saving(self) -> float:
        return 1.0 - self.energy_ratio


@dataclass
class EnergyResult:
    rows: list = field(default_factory=list)
    # (protocol, strategy, radius_m, operator) -> active station ids; operator "ALL" is the union
    active_sets: dict = field(default_factory=dict)

    def row(self, radius_m: float, operator: str = "ALL", strategy: Optional[str] = None) -> EnergyRow:
        for r in self.rows:
            if r.radius_m == radius_m and r.operator == operator and (strategy is None or r.strategy == strategy):
                return r
        raise KeyError((radius_m, operator, strategy))

    def totals(self, strategy: Optional[str] = None) -> list:
        return [r for r in self.rows if r.operator == "ALL" and (strategy is None or r.strategy == strategy)]

    def merge(self, other: "EnergyResult") -> "EnergyResult":
        out = EnergyResult(self.rows + other.rows, {**self.active_sets, **other.active_sets})
        out.rows.sort(key=_energy_key)
        return out


def _energy_key(r: EnergyRow) -> tuple:
    return (r.protocol, r.radius_m, r.strategy, r.operator)


def station_weights(stations: Sequence[BaseStationRecord]) -> np.ndarray:
    """Linear transmit power in mW, or all ones if any station lacks a power value."""
    if not stations or any(s.tx_power_dbm is None for s in stations):
        return np.ones(len(stations))
    return np.array([10.0 ** (s.tx_power_dbm / 10.0) for s in stations])


def _energy_at_radius(stations: list, config: EnergyConfig, radius: float) -> tuple:
    points = lattice(config.region, config.grid_spacing_m)
    cov = coverage_matrix(station_xy(stations), points, radius)
    weights = station_weights(stations)
    ops = np.array([s.operator for s in stations])
    proto = config.protocol.value
    rows, active_sets = [], {}

    def group_row(operator, idx, picked):
        total = len(idx)
        active = len(picked)
        ratio = float(weights[picked].sum() / weights[idx].sum()) if total else 0.0
        return EnergyRow(proto, config.strategy, radius, operator, total, active,
                         1.0 - active / total if total else 0.0, ratio)

    if config.strategy == "IIT":
        all_picked = []
        for operator in sorted(set(ops)):
            idx = np.flatnonzero(ops == operator)
            sub = cov[idx]
            picked = idx[greedy_cover_matrix(sub, sub.any(axis=0))]
            all_picked.extend(picked.tolist())
            rows.append(group_row(operator, idx, picked))
            active_sets[(proto, config.strategy, radius, operator)] = tuple(sorted(stations[i].id for i in picked))
        picked = np.array(sorted(all_picked), dtype=int)
    else:
        picked = np.array(sorted(greedy_cover_matrix(cov, cov.any(axis=0))), dtype=int)
    everyone = np.arange(len(stations))
    rows.append(group_row("ALL", everyone, picked))
    active_sets[(proto, config.strategy, radius, "ALL")] = tuple(sorted(stations[i].id for i in picked))
    return rows, active_sets


def run_energy(config: EnergyConfig, stations: Sequence[BaseStationRecord],
               log: Optional[EventLog] = None, jobs: int = 1) -> EnergyResult:
    """Sweep the coverage radius for one protocol and one shutdown strategy."""
    chosen = sorted((s for s in stations if s.protocol is config.protocol), key=lambda s: s.id)
    if not chosen:
        raise ExperimentError(f"no {config.protocol.value} stations in the dataset")
    if jobs > 1 and len(config.radii_m) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_energy_at_radius, [chosen] * len(config.radii_m),
                                  [config] * len(config.radii_m), config.radii_m))
    else:
        parts = [_energy_at_radius(chosen, config, r) for r in config.radii_m]
    result = EnergyResult()
    for rows, active in parts:
        result.rows.extend(rows)
        result.active_sets.update(active)
    result.rows.sort(key=_energy_key)

    if log is not None:
        cp = ControlPlane(GlobalViewDB(Topology()), log=log, packet_in_handler=None)
        ids = [s.id for s in chosen]
        ops = {s.id: s.operator for s in chosen}
        for (_, strategy, radius, operator), active in sorted(result.active_sets.items()):
            if strategy == "IIT" and operator == "ALL":
                continue
            scope = [i for i in ids if operator == "ALL" or ops[i] == operator]
            keep = set(active)
            cp.deactivate([i for i in scope if i not in keep], protocol=config.protocol.value,
                          strategy=strategy, radius_m=radius, operator=operator)
    return result


def coverage_violations(result: EnergyResult, stations: Sequence[BaseStationRecord],
                        region: Region = MANCHESTER_REGION,
                        spacing_m: float = DEFAULT_GRID_SPACING_M) -> int:
    """Demand points left uncovered by the active sets; zero for a sound result."""
    by_id = {s.id: s for s in stations}
    points = lattice(region, spacing_m)
    bad = 0
    for (protocol, strategy, radius, operator), active in result.active_sets.items():
        if strategy == "IIT" and operator == "ALL":
            continue
        scope = [s for s in stations
                 if s.protocol.value == protocol and (operator == "ALL" or s.operator == operator)]
        demand = coverage_matrix(station_xy(scope), points, radius).any(axis=0)
        served = coverage_matrix(station_xy([by_id[i] for i in active]), points, radius).any(axis=0)
        bad += int((demand & ~served).sum())
    return bad


# utilities

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def station_key(station_id) -> int:
    """Stable 64-bit key for a station id (string or int)."""
    digest = hashlib.blake2b(str(station_id).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class UtilitySampler:
    """Uniform [0, 1) utility per (user, station), keyed by a seeded hash."""

    def __init__(self, seed: int = 42):
        self.seed = int(seed)
        with np.errstate(over="ignore"):
            self._seed_state = _mix64(np.uint64(self.seed & _MASK64) + _GOLDEN)

    def sample_many(self, user_ids, station_keys) -> np.ndarray:
        """Broadcasting version; ``station_keys`` come from :func:`station_key`."""
        users = np.asarray(user_ids, dtype=np.int64).astype(np.uint64)
        keys = np.asarray([k & _MASK64 for k in np.ravel(station_keys)], dtype=np.uint64).reshape(np.shape(station_keys))
        with np.errstate(over="ignore"):
            z = _mix64(self._seed_state ^ _mix64(users + _GOLDEN))
            z = _mix64(z + keys * _GOLDEN)
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def sample(self, user_id: int, bs_id) -> float:
        return float(self.sample_many(np.array([user_id]), np.array([station_key(bs_id)], dtype=object))[0])

    def matrix(self, user_ids, station_ids) -> np.ndarray:
        keys = np.array([station_key(s) for s in station_ids], dtype=object)
        return self.sample_many(np.asarray(user_ids)[:, None], keys[None, :])


def sample_utility(sampler: UtilitySampler, user_id: int, bs_id) -> float:
    return sampler.sample(user_id, bs_id)


# QoS


@dataclass(frozen=True)
class QosConfig:
    n_users: int = 10_000
    radii_m: tuple = DEFAULT_RADII_M
    strategies: tuple = STRATEGIES
    protocol_for_1to3: Protocol = Protocol.UMTS
    seed: int = 42
    region: Region = MANCHESTER_REGION

    def __post_init__(self):
        if self.n_users < 0:
            raise ExperimentError("n_users must be non-negative")
        object.__setattr__(self, "radii_m", _check_radii(self.radii_m))
        object.__setattr__(self, "protocol_for_1to3", Protocol(self.protocol_for_1to3))
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ExperimentError(f"unknown strategies {sorted(unknown)}")
        object.__setattr__(self, "strategies", tuple(s for s in STRATEGIES if s in self.strategies))


@dataclass(frozen=True)
class User:
    user_id: int
    location: PlanarPoint
    operator: str
    protocol: Protocol


def place_users(config: QosConfig, region: Optional[Region] = None,
                stations: Sequence[BaseStationRecord] = ()) -> list:
    """Uniform user drop; each user is bound to one (operator, protocol) network.

    The networks are the operators that run ``config.protocol_for_1to3`` in
    ``stations``. Without stations every user gets operator ``""``.
    """
    region = region or config.region
    rng = np.random.default_rng(config.seed)
    n = config.n_users
    xs = rng.uniform(0.0, region.width_m, n)
    ys = rng.uniform(0.0, region.height_m, n)
    networks = sorted({s.operator for s in stations if s.protocol is config.protocol_for_1to3})
    if not networks:
        networks = [""]
    picks = rng.integers(0, len(networks), n)
    return [
        User(i, PlanarPoint(float(xs[i]), float(ys[i])), networks[picks[i]], config.protocol_for_1to3)
        for i in range(n)
    ]


def evaluate_strategy(user: User, strategy: str, radius_m: float,
                      stations: Sequence[BaseStationRecord], sampler: UtilitySampler) -> float:
    """Utility one user gets under one access strategy (reference, per user)."""
    def dist(s):
        return math.hypot(s.location.x_m - user.location.x_m, s.location.y_m - user.location.y_m)

    in_range = [s for s in stations if dist(s) <= radius_m]
    if strategy in ("Current", "IntraOPR"):
        feasible = [s for s in in_range if s.operator == user.operator and s.protocol is user.protocol]
    elif strategy == "InterOPR":
        feasible = [s for s in in_range if s.protocol is user.protocol]
    elif strategy == "HeterSTRA":
        feasible = in_range
    else:
        raise ExperimentError(f"unknown strategy {strategy!r}")
    if not feasible:
        return 0.0
    if strategy == "Current":
        nearest = min(feasible, key=lambda s: (dist(s), s.id))
        return sampler.sample(user.user_id, nearest.id)
    return max(sampler.sample(user.user_id, s.id) for s in feasible)


@dataclass(frozen=True)
class QosRow:
    radius_m: float
    strategy: str
    mean_utility: float
    zero_coverage_fraction: float
    n_users: int


@dataclass
class QosResult:
    rows: list = field(default_factory=list)

    def row(self, radius_m: float, strategy: str) -> QosRow:
        for r in self.rows:
            if r.radius_m == radius_m and r.strategy == strategy:
                return r
        raise KeyError((radius_m, strategy))

    def mean(self, radius_m: float, strategy: str) -> float:
        return self.row(radius_m, strategy).mean_utility


class QosWorld:
    """Users, stations and the shared utility/distance matrices for a QoS sweep."""

    def __init__(self, config: QosConfig, stations: Sequence[BaseStationRecord], users: Optional[list] = None):
        self.config = config
        self.stations = sorted(stations, key=lambda s: s.id)
        self.users = users if users is not None else place_users(config, config.region, self.stations)
        self.sampler = UtilitySampler(config.seed)
        uxy = np.array([[u.location.x_m, u.location.y_m] for u in self.users], dtype=float).reshape(-1, 2)
        sxy = station_xy(self.stations)
        self.dist = np.sqrt(((uxy[:, None, :] - sxy[None, :, :]) ** 2).sum(axis=2))
        ids = np.array([u.user_id for u in self.users], dtype=np.int64)
        self.utility = self.sampler.matrix(ids, [s.id for s in self.stations])
        s_op = np.array([s.operator for s in self.stations])
        s_proto = np.array([s.protocol.value for s in self.stations])
        u_op = np.array([u.operator for u in self.users])
        u_proto = np.array([u.protocol.value for u in self.users])
        self.same_proto = u_proto[:, None] == s_proto[None, :]
        self.same_net = self.same_proto & (u_op[:, None] == s_op[None, :])

    def feasible(self, strategy: str, radius_m: float) -> np.ndarray:
        in_range = self.dist <= radius_m
        if strategy in ("Current", "IntraOPR"):
            return in_range & self.same_net
        if strategy == "InterOPR":
            return in_range & self.same_proto
        if strategy == "HeterSTRA":
            return in_range
        raise ExperimentError(f"unknown strategy {strategy!r}")

    def choose(self, strategy: str, radius_m: float) -> tuple:
        """``(station index or -1, utility)`` per user."""
        mask = self.feasible(strategy, radius_m)
        has = mask.any(axis=1)
        if strategy == "Current":
            # nearest; argmin picks the lowest index (= lowest id) on distance ties
            pick = np.where(mask, self.dist, np.inf).argmin(axis=1)
        else:
            pick = np.where(mask, self.utility, -1.0).argmax(axis=1)
        pick = np.where(has, pick, -1)
        util = np.where(has, self.utility[np.arange(len(self.users)), np.maximum(pick, 0)], 0.0)
        return pick, util

    def utilities(self, radius_m: float) -> dict:
        return {s: self.choose(s, radius_m)[1] for s in self.config.strategies}


def run_qos(config: QosConfig, stations: Sequence[BaseStationRecord], log: Optional[EventLog] = None,
            log_users: bool = False) -> QosResult:
    """Mean utility and no-coverage fraction per (radius, strategy).

    With a ``log``, each optimizing strategy's access plan is written as
    controller decisions: per station, the users steered to it (or just
    their count unless ``log_users``).
    """
    world = QosWorld(config, stations)
    n = len(world.users)
    cp = ControlPlane(GlobalViewDB(Topology()), log=log, packet_in_handler=None) if log is not None else None
    result = QosResult()
    for radius in config.radii_m:
        for strategy in sorted(config.strategies):
            pick, util = world.choose(strategy, radius)
            mean = float(util.mean()) if n else 0.0
            zero = float((pick < 0).mean()) if n else 0.0
            result.rows.append(QosRow(radius, strategy, mean, zero, n))
            if cp is not None and strategy != "Current":
                for j in np.unique(pick[pick >= 0]):
                    users = np.flatnonzero(pick == j)
                    extra = {"users": users.tolist()} if log_users else {"n_users": int(users.size)}
                    cp.log.emit("access", radius_m=radius, strategy=strategy,
                                station=world.stations[j].id, action="forward", **extra)
    return result


# CSV output


def _fmt(value) -> str:
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e15:
            return f"{value:.1f}"
        return repr(value)
    return str(value)


def write_results(result, path_or_stream, comment: Optional[str] = None) -> None:
    """Write an energy or QoS result as CSV with its pinned header.

    ``comment`` lines go first, each prefixed with ``#``.
    """
    if isinstance(result, EnergyResult):
        header, rows = ENERGY_HEADER, sorted(result.rows, key=_energy_key)
    elif isinstance(result, QosResult):
        header, rows = QOS_HEADER, sorted(result.rows, key=lambda r: (r.radius_m, r.strategy))
    else:
        raise TypeError(f"cannot write {type(result).__name__}")
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(getattr(r, h)) for h in header])
    text = buf.getvalue()
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        with open(path_or_stream, "w", newline="") as fh:
            fh.write(text)


def read_results(path_or_text):
    """Inverse of :func:`write_results`."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) == ENERGY_HEADER:
        return EnergyResult([
            EnergyRow(r["protocol"], r["strategy"], float(r["radius_m"]), r["operator"], int(r["total"]),
                      int(r["active"]), float(r["off_fraction"]), float(r["energy_ratio"]))
            for r in reader
        ])
    if tuple(reader.fieldnames or ()) == QOS_HEADER:
        return QosResult([
            QosRow(float(r["radius_m"]), r["strategy"], float(r["mean_utility"]),
                   float(r["zero_coverage_fraction"]), int(r["n_users"]))
            for r in reader
        ])
    raise ExperimentError(f"unrecognized results header {reader.fieldnames}")
