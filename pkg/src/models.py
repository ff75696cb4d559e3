"""Pydantic models for scenario documents and run summaries, plus shared enums."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
from typing import Annotated, Any, Literal

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    model_validator,
)

from src.engine import NS_PER_MIN, NS_PER_MS, NS_PER_SEC, NS_PER_US, SimTime


class LabelTag(str, Enum):
    """Ground-truth label attached to every captured frame."""

    BENIGN = "BENIGN"
    MITM_SCAN = "MITM_SCAN"
    MITM_ARP = "MITM_ARP"
    DOS_PSHACK = "DOS_PSHACK"
    DOS_ICMPIGMP = "DOS_ICMPIGMP"
    DOS_TCPKILL = "DOS_TCPKILL"
    BF_SSH = "BF_SSH"
    BF_FTP = "BF_FTP"


@dataclass(frozen=True, slots=True)
class Provenance:
    """Who put a frame on the wire and why. Never serialized into frame bytes."""

    agent_id: str
    label: LabelTag = LabelTag.BENIGN
    relayed: bool = False


class OsTag(str, Enum):
    WINDOWS10 = "Windows10"
    UBUNTU = "Ubuntu"
    KALI = "KaliLinux"

    @property
    def default_ttl(self) -> int:
        return 128 if self is OsTag.WINDOWS10 else 64


class HostRole(str, Enum):
    FTP_SERVER = "FtpServer"
    WEB_SERVER = "WebServer"
    ADMIN_HOST = "AdminHost"
    USER_HOST = "UserHost"
    ATTACKER = "Attacker"
    MONITOR = "Monitor"
    ROUTER = "Router"


class ServiceKind(str, Enum):
    FTP = "ftp"
    SSH = "ssh"
    HTTP = "http"
    NTP = "ntp"


class AgentKind(str, Enum):
    HTTP_BROWSER = "HttpBrowser"
    FTP_CLIENT = "FtpClient"
    SSH_CLIENT = "SshClient"
    NTP_CLIENT = "NtpClient"
    PING = "Ping"


class ScenarioKind(str, Enum):
    MITM = "mitm"
    DOS = "dos"
    BF = "bf"
    BENIGN_ONLY = "benign-only"


# --- durations ----------------------------------------------------------------

_DURATION_UNITS = {
    "ns": 1,
    "us": NS_PER_US,
    "ms": NS_PER_MS,
    "s": NS_PER_SEC,
    "m": NS_PER_MIN,
    "min": NS_PER_MIN,
    "h": 60 * NS_PER_MIN,
}
_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-z]+)\s*$")


def parse_duration(value: Any) -> SimTime:
    """Parse ``"3600s"``, ``"30m"``, ``"200us"`` or an integer nanosecond count."""
    if isinstance(value, bool):
        raise ValueError("duration must be a string with unit or integer nanoseconds")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        match = _DURATION_RE.match(value.lower())
        if match is None or match.group(2) not in _DURATION_UNITS:
            raise ValueError(
                f"invalid duration {value!r}; use a number with unit "
                f"({', '.join(_DURATION_UNITS)}), e.g. '3600s' or '30m'"
            )
        return round(float(match.group(1)) * _DURATION_UNITS[match.group(2)])
    raise ValueError(f"invalid duration {value!r}")


Duration = Annotated[int, BeforeValidator(parse_duration), Field(ge=0)]


class StrictModel(BaseModel):
    """Base model that rejects unknown keys and suggests the closest valid one."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    @model_validator(mode="before")
    @classmethod
    def reject_unknown_keys(cls, data: Any) -> Any:
        if isinstance(data, dict):
            known = set(cls.model_fields)
            for key in data:
                if key not in known:
                    close = difflib.get_close_matches(str(key), sorted(known), n=1)
                    hint = f" (did you mean '{close[0]}'?)" if close else ""
                    raise ValueError(f"unknown key '{key}'{hint}")
        return data


# --- topology and services ----------------------------------------------------


class TopologyConfig(StrictModel):
    """Overrides for the reference topology."""

    link_latency: Duration = Field(200 * NS_PER_US, description="Per-hop link latency")
    addresses: dict[str, IPv4Address] = Field(
        default_factory=dict, description="Host name -> IPv4 address overrides"
    )
    server_capacity_pps: int | None = Field(
        250, gt=0, description="Ingress packet service rate of Service-LAN servers (None = unlimited)"
    )
    server_backlog: int = Field(32, gt=0, description="Ingress queue length of Service-LAN servers")
    rst_rate_limit: int = Field(100, gt=0, description="RSTs per second a host sends to unknown connections")


class Credentials(StrictModel):
    username: str = Field(..., min_length=1)
    password: str = Field(..., min_length=1)


class ServicesConfig(StrictModel):
    ssh_credentials: Credentials = Credentials(username="sysadmin", password="Adm1n!2024")
    ftp_credentials: Credentials = Credentials(username="ftpuser", password="Tr4nsfer#9")
    max_half_open: int = Field(64, gt=0)
    max_established: int = Field(64, gt=0)


class BenignAgentConfig(StrictModel):
    """One benign traffic lane."""

    kind: AgentKind
    host: str = Field(..., description="Host running the agent")
    target: str = Field(..., description="Host offering the service")
    mean_interval: Duration = Field(..., gt=0)
    start: Duration = 0
    stop: Duration | None = None


# --- attack phases ------------------------------------------------------------

DEFAULT_SCAN_PORTS = [21, 22, 23, 25, 53, 80, 110, 123, 139, 143, 443, 445, 3306, 3389, 8080]


class PhaseBase(StrictModel):
    start: Duration | None = Field(None, description="Absolute start; None = after previous phase")
    sleep_before: Duration = Field(0, description="Gap after the previous phase's end")


class ScanPhaseConfig(PhaseBase):
    kind: Literal["network_scan"] = "network_scan"
    target_subnet: IPv4Network = IPv4Network("192.168.128.0/24")
    ports: list[int] = Field(default_factory=lambda: list(DEFAULT_SCAN_PORTS), min_length=1)
    probe_interval: Duration = 10 * NS_PER_MS
    grace: Duration = 2 * NS_PER_SEC


class ArpPoisonPhaseConfig(PhaseBase):
    kind: Literal["arp_poison"] = "arp_poison"
    victims: list[tuple[IPv4Address, IPv4Address]] | None = Field(
        None, description="Victim (ip_a, ip_b) pairs; None = each benign User-LAN host <-> router"
    )
    period: Duration = Field(2 * NS_PER_SEC, gt=0)
    duration: Duration | None = Field(None, description="None = until shortly before scenario end")
    relay: bool = True


class PushAckFloodConfig(PhaseBase):
    kind: Literal["push_ack_flood"] = "push_ack_flood"
    target: str = "web-server"
    port: int = Field(80, ge=1, le=65535)
    rate: int = Field(500, gt=0, description="Packets per second")
    duration: Duration = 300 * NS_PER_SEC
    spoof: bool = False


class IcmpIgmpFloodConfig(PhaseBase):
    kind: Literal["icmp_igmp_flood"] = "icmp_igmp_flood"
    target: str = "web-server"
    rate: int = Field(500, gt=0)
    duration: Duration = 300 * NS_PER_SEC
    icmp_fraction: float = Field(0.5, ge=0.0, le=1.0)
    spoof: bool = False


class TcpKillConfig(PhaseBase):
    kind: Literal["tcp_connection_killer"] = "tcp_connection_killer"
    duration: Duration = Field(300 * NS_PER_SEC, description="Observation window")
    poison_period: Duration = Field(2 * NS_PER_SEC, gt=0)


class BruteForceConfig(PhaseBase):
    kind: Literal["brute_force"] = "brute_force"
    service: Literal["ssh", "ftp"]
    target: str
    wordlist: list[Credentials] | None = Field(None, description="None = generated list")
    wordlist_size: int = Field(200, gt=0, le=1440)
    include_correct: bool = True
    attempt_interval: Duration = Field(2 * NS_PER_SEC, gt=0)

    def nominal_duration(self) -> SimTime:
        size = len(self.wordlist) if self.wordlist is not None else self.wordlist_size
        return size * self.attempt_interval


PhaseConfig = Annotated[
    ScanPhaseConfig
    | ArpPoisonPhaseConfig
    | PushAckFloodConfig
    | IcmpIgmpFloodConfig
    | TcpKillConfig
    | BruteForceConfig,
    Field(discriminator="kind"),
]


# --- scenario document --------------------------------------------------------


class FlowConfig(StrictModel):
    active_timeout: Duration = Field(1800 * NS_PER_SEC, gt=0)
    idle_timeout: Duration = Field(120 * NS_PER_SEC, gt=0)


class OutputPaths(StrictModel):
    pcap: str | None = None
    labels: str | None = None
    flows: str | None = None
    arp_summary: str | None = None


class ScenarioConfig(StrictModel):
    """A complete, validated scenario run description."""

    scenario: ScenarioKind
    seed: int = Field(1, ge=0, lt=2**64)
    duration: Duration = Field(3600 * NS_PER_SEC, gt=0)
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    services: ServicesConfig = Field(default_factory=ServicesConfig)
    benign_lanes: list[BenignAgentConfig] | None = None
    attack_phases: list[PhaseConfig] | None = None
    parallel_floods: bool = False
    flows: FlowConfig = Field(default_factory=FlowConfig)
    outputs: OutputPaths = Field(default_factory=OutputPaths)

    @model_validator(mode="after")
    def fill_defaults_and_check(self) -> ScenarioConfig:
        """Fill scenario defaults, then check host references and phase timing."""
        from src.netmodel.topology import REFERENCE_HOSTS
        from src.scenarios import default_attack_phases, default_benign_lanes, phase_schedule

        if self.benign_lanes is None:
            self.benign_lanes = default_benign_lanes(self.scenario)
        if self.attack_phases is None:
            self.attack_phases = default_attack_phases(
                self.scenario, self.duration, parallel=self.parallel_floods
            )
        if self.scenario == ScenarioKind.BENIGN_ONLY and self.attack_phases:
            raise ValueError("attack_phases: benign-only scenario cannot declare attack phases")

        for i, lane in enumerate(self.benign_lanes):
            for name in (lane.host, lane.target):
                if name not in REFERENCE_HOSTS:
                    raise ValueError(f"benign_lanes[{i}]: unknown host '{name}'")
            if lane.start >= self.duration:
                raise ValueError(f"benign_lanes[{i}].start: lane starts after scenario end")
        for name in self.topology.addresses:
            if name not in REFERENCE_HOSTS:
                raise ValueError(f"topology.addresses: unknown host '{name}'")
        for i, phase in enumerate(self.attack_phases):
            target = getattr(phase, "target", None)
            if target is not None and target not in REFERENCE_HOSTS:
                raise ValueError(f"attack_phases[{i}].target: unknown host '{target}'")

        for i, (start, end) in enumerate(phase_schedule(self.attack_phases, self.duration)):
            if end > self.duration:
                raise ValueError(
                    f"attack_phases[{i}]: phase ends at {end} ns, after scenario duration "
                    f"{self.duration} ns"
                )
        return self


# --- run results --------------------------------------------------------------


class LaneStats(BaseModel):
    attempted: int = 0
    succeeded: int = 0
    failed: int = 0

    @property
    def success_rate(self) -> float:
        finished = self.succeeded + self.failed
        return self.succeeded / finished if finished else 1.0


class ScannedHost(BaseModel):
    ip: IPv4Address
    mac: str | None = None
    os_guess: Literal["Windows", "Linux"] | None = None
    observed_ttl: int | None = None
    open_ports: dict[int, str] = Field(default_factory=dict)
    closed_ports: int = 0


class ScanReport(BaseModel):
    target_subnet: IPv4Network
    probes_sent: int = 0
    hosts: list[ScannedHost] = Field(default_factory=list)

    def host(self, ip: IPv4Address | str) -> ScannedHost | None:
        ip = IPv4Address(ip)
        return next((h for h in self.hosts if h.ip == ip), None)


class PhaseOutcome(BaseModel):
    label: LabelTag
    kind: str
    start_ns: int
    end_ns: int | None = None
    frames_emitted: int = 0
    details: dict[str, Any] = Field(default_factory=dict)


class OutputFile(BaseModel):
    path: str
    sha256: str


class RunSummary(BaseModel):
    scenario: ScenarioKind
    seed: int
    duration_ns: int
    events_processed: int
    capture_records: int
    packets_per_label: dict[str, int]
    flow_count: int
    non_ip_frames: int = 0
    benign: dict[str, LaneStats]
    phases: list[PhaseOutcome]
    outputs: dict[str, OutputFile]

    @property
    def benign_success_rate(self) -> float:
        succeeded = sum(s.succeeded for s in self.benign.values())
        finished = succeeded + sum(s.failed for s in self.benign.values())
        return succeeded / finished if finished else 1.0
