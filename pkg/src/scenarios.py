"""Built-in scenarios, scenario document loading and the run pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any

from src.apps.base import AppLog, BaseAgent
from src.apps.servers import install_services, run_benign_agent
from src.attacks.base import Attacker, AttackPhase, PhaseRunner
from src.attacks.bruteforce import brute_force
from src.attacks.floods import icmp_igmp_flood, push_ack_flood
from src.attacks.mitm import POISON_END_MARGIN, arp_poison
from src.attacks.scan import network_scan, scan_duration
from src.attacks.tcpkill import tcp_connection_killer
from src.capture import Capture, attach_capture, write_labels, write_pcap
from src.config import settings
from src.engine import NS_PER_MIN, NS_PER_SEC, RngStream, Scheduler, SimTime
from src.flows import emit_flow_csv, extract_flows, label_flows, write_arp_summary
from src.models import (
    AgentKind,
    ArpPoisonPhaseConfig,
    BenignAgentConfig,
    BruteForceConfig,
    IcmpIgmpFloodConfig,
    OutputFile,
    PhaseConfig,
    PushAckFloodConfig,
    RunSummary,
    ScanPhaseConfig,
    ScenarioConfig,
    ScenarioKind,
    TcpKillConfig,
)
from src.netmodel.topology import Topology, build_reference_topology

logger = logging.getLogger(__name__)

SCENARIO_DESCRIPTIONS = {
    ScenarioKind.MITM: "network scan, then ARP poisoning of the User LAN with relay; HTTP and NTP lanes",
    ScenarioKind.DOS: "PSH-ACK flood, ICMP/IGMP flood, then TCP connection killer; HTTP, ping and SSH lanes",
    ScenarioKind.BF: "SSH brute force, 30 min sleep, FTP brute force; HTTP, ping and SSH lanes",
    ScenarioKind.BENIGN_ONLY: "no attacker; availability baseline with every benign lane",
}

USER_HOSTS = [f"user-{i}" for i in range(1, 7)]
ADMIN_HOSTS = ["admin-win", "admin-ubuntu"]

BF_SLEEP = 30 * NS_PER_MIN
DOS_PHASE_LENGTH = 300 * NS_PER_SEC


class ConfigParseError(ValueError):
    """Raised for a scenario document that is not well-formed JSON."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# --- built-in defaults --------------------------------------------------------


def _lane(kind: AgentKind, host: str, target: str, seconds: int) -> BenignAgentConfig:
    return BenignAgentConfig(kind=kind, host=host, target=target, mean_interval=seconds * NS_PER_SEC)


def default_benign_lanes(scenario: ScenarioKind) -> list[BenignAgentConfig]:
    """Benign lanes a scenario runs when the document names none."""
    lanes: list[BenignAgentConfig] = []
    mitm_style = scenario in (ScenarioKind.MITM, ScenarioKind.BENIGN_ONLY)
    dos_style = scenario in (ScenarioKind.DOS, ScenarioKind.BF, ScenarioKind.BENIGN_ONLY)
    for i, user in enumerate(USER_HOSTS):
        lanes.append(_lane(AgentKind.HTTP_BROWSER, user, "web-server", 10))
        if mitm_style:
            lanes.append(_lane(AgentKind.NTP_CLIENT, user, "web-server", 64))
        if dos_style:
            lanes.append(_lane(AgentKind.PING, user, "web-server", 30))
            lanes.append(_lane(AgentKind.SSH_CLIENT, user, ADMIN_HOSTS[i % 2], 300))
    for admin in ADMIN_HOSTS:
        lanes.append(_lane(AgentKind.FTP_CLIENT, admin, "ftp-server", 600))
        lanes.append(_lane(AgentKind.NTP_CLIENT, admin, "web-server", 64))
    return lanes


def default_attack_phases(
    scenario: ScenarioKind, duration: SimTime, *, parallel: bool = False
) -> list[PhaseConfig]:
    """Attack phases of a built-in scenario, laid out over ``duration``."""
    if scenario is ScenarioKind.MITM:
        return [
            ScanPhaseConfig(start=min(60 * NS_PER_SEC, duration // 20)),
            ArpPoisonPhaseConfig(sleep_before=10 * NS_PER_SEC),
        ]
    if scenario is ScenarioKind.DOS:
        slot = duration // 3
        length = min(DOS_PHASE_LENGTH, slot // 2)
        offset = (slot - length) // 2
        starts = [i * slot + offset for i in range(3)]
        flood_starts = [starts[0], starts[0]] if parallel else starts[:2]
        return [
            PushAckFloodConfig(start=flood_starts[0], duration=length),
            IcmpIgmpFloodConfig(start=flood_starts[1], duration=length),
            TcpKillConfig(start=starts[2], duration=length),
        ]
    if scenario is ScenarioKind.BF:
        return [
            BruteForceConfig(
                service="ssh", target="admin-ubuntu", start=min(120 * NS_PER_SEC, duration // 30)
            ),
            BruteForceConfig(service="ftp", target="ftp-server", sleep_before=BF_SLEEP),
        ]
    return []


def nominal_length(phase: PhaseConfig, start: SimTime, duration: SimTime) -> SimTime:
    """Planned length of a phase; actual phases never run longer except brute force."""
    if isinstance(phase, ScanPhaseConfig):
        return scan_duration(phase, phase.target_subnet.num_addresses - 2)
    if isinstance(phase, ArpPoisonPhaseConfig):
        if phase.duration is not None:
            return phase.duration
        return max(0, duration - POISON_END_MARGIN - start)
    if isinstance(phase, BruteForceConfig):
        return phase.nominal_duration()
    return phase.duration


def phase_schedule(phases: list[PhaseConfig], duration: SimTime) -> list[tuple[SimTime, SimTime]]:
    """Planned (start, end) of every phase, chaining relative phases on nominal ends."""
    schedule = []
    previous_end = 0
    for phase in phases:
        start = phase.start if phase.start is not None else previous_end + phase.sleep_before
        end = start + nominal_length(phase, start, duration)
        schedule.append((start, end))
        previous_end = end
    return schedule


# --- documents ----------------------------------------------------------------


def load_config(document: str | dict[str, Any]) -> ScenarioConfig:
    """Validate a scenario document and fill every default.

    Raises:
        ConfigParseError: If the text is not well-formed JSON
        pydantic.ValidationError: If a field is missing, unknown or invalid
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ConfigParseError(e.msg, e.lineno, e.colno) from e
    return ScenarioConfig.model_validate(document)


def load_config_file(path: str | Path) -> ScenarioConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def scenario_schema() -> dict[str, Any]:
    return ScenarioConfig.model_json_schema()


# --- run ----------------------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    with open(path, "rb") as fh:
        return hashlib.file_digest(fh, "sha256").hexdigest()


def output_paths(config: ScenarioConfig) -> dict[str, Path]:
    stem = f"nidsim-{config.scenario.value}-{config.seed}"
    base = Path(settings.output_dir)
    outputs = config.outputs
    return {
        "pcap": Path(outputs.pcap) if outputs.pcap else base / f"{stem}.pcap",
        "labels": Path(outputs.labels) if outputs.labels else base / f"{stem}.labels.csv",
        "flows": Path(outputs.flows) if outputs.flows else base / f"{stem}.flows.csv",
        "arp_summary": (
            Path(outputs.arp_summary) if outputs.arp_summary else base / f"{stem}.arp.csv"
        ),
    }


class Simulation:
    """One scenario run: topology, capture, benign lanes and the attacker, on one engine."""

    def __init__(self, config: ScenarioConfig, *, record_trace: bool = False):
        self.config = config
        self.scheduler = Scheduler(
            record_trace=record_trace, max_events_per_instant=settings.max_events_per_instant
        )
        self.topology: Topology = build_reference_topology(
            config.topology, self.scheduler, config.seed
        )
        self.capture = Capture(settings.capture_spill_threshold, settings.capture_spill_dir)
        attach_capture(self.topology, capture=self.capture)
        install_services(self.topology, config.services, config.seed)
        self.log = AppLog()
        self.agents: list[BaseAgent] = []
        self.attacker: Attacker | None = None
        self.runner: PhaseRunner | None = None
        self._start_lanes()
        if config.attack_phases:
            self._arm_attacker()

    def _start_lanes(self) -> None:
        seen: dict[str, int] = {}
        for i, lane in enumerate(self.config.benign_lanes):
            agent_id = f"{lane.host}:{lane.kind.value}"
            seen[agent_id] = seen.get(agent_id, 0) + 1
            if seen[agent_id] > 1:
                agent_id = f"{agent_id}#{seen[agent_id]}"
            rng = RngStream(self.config.seed, f"lane:{i}:{agent_id}")
            self.agents.append(
                run_benign_agent(
                    lane,
                    rng,
                    topology=self.topology,
                    services=self.config.services,
                    log=self.log,
                    agent_id=agent_id,
                    stop=self.config.duration,
                )
            )

    def _arm_attacker(self) -> None:
        self.attacker = Attacker(self.topology, self.config.seed)
        self.runner = PhaseRunner(self.scheduler, self.config.duration)
        for phase_config in self.config.attack_phases:
            self.runner.add(
                self._build_phase(phase_config), phase_config.start, phase_config.sleep_before
            )
        self.attacker.set_label(self.runner.phases[0].label)
        self.runner.arm()

    def _build_phase(self, phase: PhaseConfig) -> AttackPhase:
        attacker, topology = self.attacker, self.topology
        if isinstance(phase, ScanPhaseConfig):
            return network_scan(attacker, phase)
        if isinstance(phase, ArpPoisonPhaseConfig):
            return arp_poison(attacker, phase, self.config.duration)
        if isinstance(phase, PushAckFloodConfig):
            return push_ack_flood(attacker, topology.ip_of(phase.target), phase)
        if isinstance(phase, IcmpIgmpFloodConfig):
            return icmp_igmp_flood(attacker, topology.ip_of(phase.target), phase)
        if isinstance(phase, TcpKillConfig):
            return tcp_connection_killer(attacker, phase)
        services = self.config.services
        correct = services.ssh_credentials if phase.service == "ssh" else services.ftp_credentials
        return brute_force(attacker, phase, topology.host(phase.target), correct)

    def run(self) -> None:
        logger.info(
            f"Running {self.config.scenario.value} scenario, seed {self.config.seed}, "
            f"{self.config.duration / NS_PER_SEC:g} s of simulated time"
        )
        self.scheduler.run_until(self.config.duration)
        logger.info(
            f"Simulation finished: {self.scheduler.processed} events, {len(self.capture)} frames captured"
        )

    def phase_outcomes(self):
        if self.runner is None:
            return []
        outcomes = self.runner.outcomes()
        for outcome in outcomes:
            if outcome.start_ns < 0:
                continue
            end = outcome.end_ns if outcome.end_ns is not None else self.config.duration
            outcome.details["benign_during"] = self.log.window(outcome.start_ns, end).model_dump()
        return outcomes


def run_scenario(config: ScenarioConfig) -> RunSummary:
    """Run a scenario to its end and write the pcap, labels, flows and ARP summary.

    Returns:
        Per-label packet counts, benign lane outcomes, attack phase outcomes
        and the SHA-256 of every written file
    """
    simulation = Simulation(config)
    simulation.run()
    capture = simulation.capture
    paths = output_paths(config)
    for path in paths.values():
        path.parent.mkdir(parents=True, exist_ok=True)

    try:
        write_pcap(capture, paths["pcap"])
        write_labels(capture, paths["labels"])
        extraction = extract_flows(capture, config.flows.active_timeout, config.flows.idle_timeout)
        labels = [record.label for record in capture]
        label_flows(extraction.flows, labels)
        emit_flow_csv(extraction.flows, paths["flows"])
        write_arp_summary(extraction.arp_counts, paths["arp_summary"])
    finally:
        capture.close()

    outputs = {
        name: OutputFile(path=str(path), sha256=file_sha256(path)) for name, path in paths.items()
    }
    summary = RunSummary(
        scenario=config.scenario,
        seed=config.seed,
        duration_ns=config.duration,
        events_processed=simulation.scheduler.processed,
        capture_records=len(capture),
        packets_per_label={label.value: n for label, n in sorted(capture.label_counts.items())},
        flow_count=len(extraction.flows),
        non_ip_frames=extraction.non_ip_frames,
        benign=simulation.log.stats(),
        phases=simulation.phase_outcomes(),
        outputs=outputs,
    )
    logger.info(
        f"Wrote {len(capture)} frames, {len(extraction.flows)} flows; "
        f"benign success rate {summary.benign_success_rate:.1%}"
    )
    return summary
