"""nidsim command line: run scenarios, validate documents, re-extract flows."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from src.apps.servers import ServiceMismatchError
from src.attacks.bruteforce import EmptyWordlistError
from src.attacks.mitm import UnknownVictimMacError
from src.capture import load_capture
from src.config import settings
from src.flows import emit_flow_csv, extract_flows, label_flows, write_arp_summary
from src.models import FlowConfig, ScenarioKind, parse_duration
from src.netmodel.topology import ConfigConflictError
from src.scenarios import (
    SCENARIO_DESCRIPTIONS,
    ConfigParseError,
    load_config,
    run_scenario,
    scenario_schema,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

CONFIG_ERRORS = (
    ValidationError,
    ConfigParseError,
    ConfigConflictError,
    ServiceMismatchError,
    EmptyWordlistError,
    UnknownVictimMacError,
)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="[%(asctime)s] %(levelname)s:%(name)s:%(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nidsim", description="Packet-level network simulator for labelled NID datasets"
    )
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help=f"Logging level (default: {settings.log_level})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario and write pcap, labels and flows")
    run.add_argument("--scenario", choices=[k.value for k in ScenarioKind], help="Built-in scenario")
    run.add_argument("--config", help="Scenario document (JSON); flags override its values")
    run.add_argument("--seed", type=int, help="Unsigned 64-bit seed")
    run.add_argument("--duration", help="Simulated time, e.g. 3600s or 30m")
    run.add_argument("--out-pcap", help="Capture output path")
    run.add_argument("--out-labels", help="Label CSV output path")
    run.add_argument("--out-flows", help="Flow CSV output path")
    run.add_argument("--out-arp", help="ARP summary CSV output path")

    sub.add_parser("list-scenarios", help="List built-in scenarios")

    validate = sub.add_parser("validate", help="Validate a scenario document")
    validate.add_argument("--config", required=True, help="Scenario document (JSON)")

    flows = sub.add_parser("extract-flows", help="Rebuild flows from a pcap and its labels")
    flows.add_argument("--pcap", required=True)
    flows.add_argument("--labels", required=True)
    flows.add_argument("--out", required=True, help="Flow CSV output path")
    flows.add_argument("--arp-out", help="ARP summary CSV output path")
    flows.add_argument("--idle-timeout", default="120s")
    flows.add_argument("--active-timeout", default="1800s")

    sub.add_parser("schema", help="Print the scenario document JSON schema")
    return parser


def scenario_document(args: argparse.Namespace) -> dict[str, Any]:
    """Merge the config file (if any) with command-line overrides; flags win."""
    document: dict[str, Any] = {}
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParseError(e.msg, e.lineno, e.colno) from e
        if not isinstance(document, dict):
            raise ConfigParseError("top-level value must be an object", 1, 1)
    if args.scenario:
        document["scenario"] = args.scenario
    if args.seed is not None:
        document["seed"] = args.seed
    elif "seed" not in document:
        document["seed"] = settings.default_seed
    if args.duration:
        document["duration"] = args.duration
    outputs = dict(document.get("outputs") or {})
    for key, value in (
        ("pcap", args.out_pcap),
        ("labels", args.out_labels),
        ("flows", args.out_flows),
        ("arp_summary", args.out_arp),
    ):
        if value:
            outputs[key] = value
    if outputs:
        document["outputs"] = outputs
    if "scenario" not in document:
        raise ConfigParseError("no scenario given; use --scenario or a config file", 1, 1)
    return document


def report_config_error(error: Exception) -> int:
    if isinstance(error, ValidationError):
        print(f"Invalid scenario: {error.error_count()} error(s)", file=sys.stderr)
        for item in error.errors():
            location = ".".join(str(part) for part in item["loc"]) or "<document>"
            print(f"  {location}: {item['msg']}", file=sys.stderr)
    else:
        print(f"Invalid scenario: {error}", file=sys.stderr)
    return EXIT_USAGE


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(scenario_document(args))
        summary = run_scenario(config)
    except CONFIG_ERRORS as e:
        return report_config_error(e)
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


def cmd_list_scenarios(args: argparse.Namespace) -> int:
    for kind, description in SCENARIO_DESCRIPTIONS.items():
        print(f"{kind.value:<12} {description}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        config = load_config(Path(args.config).read_text(encoding="utf-8"))
    except CONFIG_ERRORS as e:
        return report_config_error(e)
    print(
        f"{args.config}: valid {config.scenario.value} scenario, "
        f"{len(config.benign_lanes)} benign lanes, {len(config.attack_phases)} attack phases"
    )
    return EXIT_OK


def cmd_extract_flows(args: argparse.Namespace) -> int:
    try:
        timeouts = FlowConfig(
            idle_timeout=parse_duration(args.idle_timeout),
            active_timeout=parse_duration(args.active_timeout),
        )
    except (ValueError, ValidationError) as e:
        print(f"Invalid timeout: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        capture = load_capture(args.pcap, args.labels)
    except ValueError as e:
        print(f"Unreadable capture: {e}", file=sys.stderr)
        return EXIT_USAGE
    extraction = extract_flows(capture, timeouts.active_timeout, timeouts.idle_timeout)
    label_flows(extraction.flows, [record.label for record in capture])
    emit_flow_csv(extraction.flows, args.out)
    if args.arp_out:
        write_arp_summary(extraction.arp_counts, args.arp_out)
    logger.info(f"Wrote {len(extraction.flows)} flows to {args.out}")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    print(json.dumps(scenario_schema(), indent=2))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "list-scenarios": cmd_list_scenarios,
    "validate": cmd_validate,
    "extract-flows": cmd_extract_flows,
    "schema": cmd_schema,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    configure_logging(args.log_level or settings.log_level)
    try:
        return COMMANDS[args.command](args)
    except Exception:
        logger.exception(f"{args.command} failed")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
