"""Command-line entry point: ``xl5g {ingest,energy,qos,simulate,validate}``.

Every command writes plain files under ``--out`` (created if needed) and
records the seed in each file's header. Errors go to stderr as one line
``xl5g:error:<kind>: <message>``; exit codes are 0 ok, 1 validation
failure, 2 I/O error, 3 config error. ``XL5G_LOG`` sets the log level.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .controlplane import EventLog
from .experiments import EnergyConfig, ExperimentError, QosConfig, run_energy, run_qos, write_results
from .geo_dataset import DatasetError, by_protocol, count_by, load_stations, write_projected
from .netmodel import eid
from .ruleengine import RuleError, rule_from_dict
from .scenario import (
    ScenarioError,
    Scenario,
    build_network,
    build_simulation,
    bundled_scenario,
    end_tick,
    load_scenario,
    validate_network,
)

log = logging.getLogger("xl5g")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3
DEFAULT_SEED = 42
FIXTURE_NAME = "manchester_sitefinder.csv"


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = code


def io_error(message: str) -> CliError:
    return CliError("io", EXIT_IO, message)


def config_error(message: str) -> CliError:
    return CliError("config", EXIT_CONFIG, message)


@dataclass
class CliConfig:
    subcommand: str
    dataset_path: Optional[Path]
    scenario_path: Optional[Path]
    output_dir: Path
    seed: int = DEFAULT_SEED
    jobs: int = 1
    radii_m: Optional[tuple] = None
    grid_spacing_m: Optional[float] = None
    rules_path: Optional[Path] = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        cfg = cls(
            args.command,
            Path(args.dataset) if args.dataset else None,
            Path(args.scenario) if args.scenario else None,
            Path(args.out),
            args.seed,
            args.jobs,
            args.radius_list,
            args.grid_spacing,
            Path(args.rules) if getattr(args, "rules", None) else None,
        )
        for path in (cfg.dataset_path, cfg.scenario_path, cfg.rules_path):
            if path is not None and not path.is_file():
                raise io_error(f"no such file: {path}")
        if cfg.jobs < 1:
            raise config_error("--jobs must be at least 1")
        if cfg.grid_spacing_m is not None and cfg.grid_spacing_m <= 0:
            raise config_error("--grid-spacing must be positive")
        return cfg


# helpers


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise io_error(f"cannot read {path}: {exc}") from None


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise io_error(f"cannot write {path}: {exc}") from None


def _scenario(cfg: CliConfig) -> Scenario:
    try:
        sc = load_scenario(_read(cfg.scenario_path)) if cfg.scenario_path else bundled_scenario()
    except ScenarioError as exc:
        raise config_error(f"invalid scenario: {exc}") from None
    if cfg.radii_m is not None:
        sc.radii_m = cfg.radii_m
    if cfg.grid_spacing_m is not None:
        sc.grid_spacing_m = cfg.grid_spacing_m
    return sc


def _dataset(cfg: CliConfig, sc: Scenario) -> tuple:
    if cfg.dataset_path is not None:
        text, name = _read(cfg.dataset_path), cfg.dataset_path.name
    else:
        text, name = resources.files("xl5g.data").joinpath(FIXTURE_NAME).read_text(), FIXTURE_NAME
    if not text.strip():
        raise io_error(f"dataset {name} is empty")
    try:
        records, report = load_stations(text, sc.region, sc.schema)
    except (DatasetError, KeyError, ValueError) as exc:
        raise io_error(f"cannot parse dataset {name}: {exc}") from None
    return records, report, name


def _header(cfg: CliConfig, sc: Scenario, **extra) -> str:
    lines = [f"seed={cfg.seed}", f"command={cfg.subcommand}", f"scenario={sc.name}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return "\n".join(lines)


def _log_header(cfg: CliConfig, sc: Scenario, **extra) -> str:
    head = {"command": cfg.subcommand, "scenario": sc.name, "seed": cfg.seed, **extra}
    return json.dumps({"header": head}, sort_keys=True) + "\n"


def _sink(first_line: str) -> io.StringIO:
    buf = io.StringIO()
    buf.write(first_line)
    return buf


# commands


def cmd_ingest(cfg: CliConfig) -> int:
    sc = _scenario(cfg)
    records, report, name = _dataset(cfg, sc)
    buf = io.StringIO()
    buf.write("".join(f"# {ln}\n" for ln in _header(cfg, sc, dataset=name).splitlines()))
    write_projected(records, buf)
    _write(cfg.output_dir / "stations.csv", buf.getvalue())
    counts = count_by(records)
    for (operator, protocol), n in sorted(counts.items()):
        print(f"{operator},{protocol},{n}")
    totals = {p: len(by_protocol(records, p)) for p in sorted({r.protocol.value for r in records})}
    print(",".join(["total", *(f"{p}={n}" for p, n in totals.items()), f"all={len(records)}"]))
    print(f"outside_region,{report.kept - len(records)}")
    if report.skipped:
        reasons = ",".join(f"{k}={v}" for k, v in sorted(report.reasons.items()))
        print(f"skipped,{report.skipped},{reasons}")
    if not records:
        print("xl5g:warning:empty: no stations inside the region", file=sys.stderr)
    return EXIT_OK


def cmd_energy(cfg: CliConfig) -> int:
    sc = _scenario(cfg)
    records, _, name = _dataset(cfg, sc)
    sink = _sink(_log_header(cfg, sc, dataset=name))
    event_log = EventLog(sink)
    result = None
    try:
        for protocol in sc.protocols:
            for strategy in ("IIT", "CIT"):
                config = EnergyConfig(protocol, strategy, sc.radii_m, sc.grid_spacing_m, cfg.seed, sc.region)
                part = run_energy(config, records, log=event_log, jobs=cfg.jobs)
                result = part if result is None else result.merge(part)
    except (ExperimentError, ValueError) as exc:
        raise config_error(str(exc)) from None
    buf = io.StringIO()
    write_results(result, buf, comment=_header(cfg, sc, dataset=name, grid_spacing_m=sc.grid_spacing_m))
    _write(cfg.output_dir / "energy.csv", buf.getvalue())
    _write(cfg.output_dir / "energy_log.jsonl", sink.getvalue())
    return EXIT_OK


def cmd_qos(cfg: CliConfig) -> int:
    sc = _scenario(cfg)
    records, _, name = _dataset(cfg, sc)
    sink = _sink(_log_header(cfg, sc, dataset=name))
    try:
        config = QosConfig(sc.n_users, sc.radii_m, sc.strategies, sc.protocol_for_1to3, cfg.seed, sc.region)
        result = run_qos(config, records, log=EventLog(sink))
    except (ExperimentError, ValueError) as exc:
        raise config_error(str(exc)) from None
    buf = io.StringIO()
    write_results(result, buf, comment=_header(cfg, sc, dataset=name, n_users=sc.n_users))
    _write(cfg.output_dir / "qos.csv", buf.getvalue())
    _write(cfg.output_dir / "qos_log.jsonl", sink.getvalue())
    return EXIT_OK


def cmd_simulate(cfg: CliConfig) -> int:
    sc = _scenario(cfg)
    sink = _sink(_log_header(cfg, sc))
    try:
        run, net = build_simulation(sc, cfg.seed, EventLog(sink))
        if cfg.rules_path is not None:
            items = json.loads(_read(cfg.rules_path))
            for item in items:
                run.install(eid(item["element"]), rule_from_dict(item["rule"], net.domain))
    except (ScenarioError, RuleError, KeyError, TypeError, ValueError) as exc:
        raise config_error(f"invalid scenario: {exc}") from None
    if run.agents:
        run.run_until(end_tick(sc))
    trace = _log_header(cfg, sc, end_tick=end_tick(sc)) + run.trace_jsonl()
    _write(cfg.output_dir / "trace.jsonl", trace)
    _write(cfg.output_dir / "controller_log.jsonl", sink.getvalue())
    delivered = sum(1 for v in run.outcomes.values() if v == "deliver")
    log.info("simulated %d events, %d packets delivered", len(run.trace), delivered)
    return EXIT_OK


def cmd_validate(cfg: CliConfig) -> int:
    sc = _scenario(cfg)
    try:
        net = build_network(sc.network)
    except ScenarioError as exc:
        raise config_error(f"invalid scenario: {exc}") from None
    violations = validate_network(net)
    lines = [f"# {ln}" for ln in _header(cfg, sc).splitlines()]
    lines += [f"violation,{v.element},{v.rule},{v.detail}" for v in violations]
    lines.append(f"status,{'clean' if not violations else 'invalid'},{len(violations)}")
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if cfg.output_dir is not None:
        _write(cfg.output_dir / "validation.txt", report)
    return EXIT_OK if not violations else EXIT_VALIDATION


COMMANDS = {
    "ingest": cmd_ingest,
    "energy": cmd_energy,
    "qos": cmd_qos,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


# argument parsing


def _radius_list(text: str) -> tuple:
    try:
        radii = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not radii or any(r <= 0 for r in radii):
        raise argparse.ArgumentTypeError("radii must be positive")
    return radii


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise config_error(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dataset", help="Sitefinder-style CSV (default: bundled fixture)")
    common.add_argument("--scenario", help="scenario JSON (default: bundled default scenario)")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default 42)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--radius-list", type=_radius_list, help="comma-separated radii in metres")
    common.add_argument("--grid-spacing", type=float, help="demand grid spacing in metres")

    ap = _Parser(prog="xl5g", description="Cross-layer software-defined 5G network toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="project and clip a base-station dataset")
    sub.add_parser("energy", parents=[common], help="IIT/CIT base-station shutdown sweep")
    sub.add_parser("qos", parents=[common], help="access-strategy utility sweep")
    sim = sub.add_parser("simulate", parents=[common], help="run a scenario through the data-plane simulator")
    sim.add_argument("--rules", help="JSON list of {element, rule} to pre-load")
    sub.add_parser("validate", parents=[common], help="check a scenario's topology, chains and slices")
    return ap


def _configure_logging() -> None:
    level = os.environ.get("XL5G_LOG", "WARNING").strip().upper()
    value = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=value, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = CliConfig.from_args(args)
        return COMMANDS[cfg.subcommand](cfg)
    except CliError as exc:
        msg = " ".join(str(exc).split())
        print(f"xl5g:error:{exc.kind}: {msg}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    raise SystemExit(main())
