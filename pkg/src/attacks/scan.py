"""Ping sweep followed by a half-open SYN scan of every responsive host."""

from __future__ import annotations

import logging
from ipaddress import IPv4Address

from src.attacks.base import Attacker, AttackPhase
from src.engine import SimTime
from src.models import LabelTag, ScannedHost, ScanPhaseConfig, ScanReport
from src.netmodel.host import Interface
from src.protocols.packets import (
    EthernetFrame,
    IcmpMessage,
    IcmpType,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
)

logger = logging.getLogger(__name__)

SERVICE_NAMES = {
    21: "ftp",
    22: "ssh",
    23: "telnet",
    25: "smtp",
    53: "domain",
    80: "http",
    110: "pop3",
    123: "ntp",
    139: "netbios-ssn",
    143: "imap",
    443: "https",
    445: "microsoft-ds",
    3306: "mysql",
    3389: "ms-wbt-server",
    8080: "http-proxy",
}

SWEEP_PAYLOAD = b"\x00" * 32


def guess_os(ttl: int) -> str:
    """Windows starts at 128 and Linux at 64; routers only ever lower the value."""
    return "Windows" if ttl > 64 else "Linux"


class NetworkScan(AttackPhase):
    """ICMP echo sweep of the subnet, then SYN probes ascending by address and port.

    Open ports answer SYN|ACK, which the attacker's own stack resets because
    no connection exists. Closed ports answer RST|ACK.
    """

    label = LabelTag.MITM_SCAN
    kind = "network_scan"

    def __init__(self, attacker: Attacker, config: ScanPhaseConfig):
        super().__init__(attacker)
        self.config = config
        self.subnet = config.target_subnet
        self.ports = sorted(set(config.ports))
        self.identifier = attacker.rng.draw(2**16)
        self.source_port = 40000 + attacker.rng.draw(20000)
        self.report = ScanReport(target_subnet=self.subnet)
        self._ttl: dict[IPv4Address, int] = {}
        self._responsive: list[IPv4Address] = []
        self._probed: dict[tuple[IPv4Address, int], int] = {}
        self._open: dict[IPv4Address, dict[int, str]] = {}
        self._closed: dict[IPv4Address, set[int]] = {}

    def start(self) -> None:
        self.attacker.host.taps.append(self._observe)
        interval = self.config.probe_interval
        now = self.attacker.now
        targets = list(self.subnet.hosts())
        for i, ip in enumerate(targets):
            self.attacker.scheduler.schedule(
                now + i * interval, self._ping(ip, i + 1), note="scan:sweep"
            )
        sweep_done = now + len(targets) * interval + self.config.grace
        self.attacker.scheduler.schedule(sweep_done, self._probe_ports, note="scan:ports")

    def _ping(self, ip: IPv4Address, sequence: int):
        def send() -> None:
            message = IcmpMessage(
                IcmpType.ECHO_REQUEST, 0, self.identifier, sequence, SWEEP_PAYLOAD
            )
            self._send(self.attacker.host.make_packet(ip, IpProtocol.ICMP, message))

        return send

    def _probe_ports(self) -> None:
        self._responsive = sorted(self._ttl)
        logger.info(
            f"Sweep of {self.subnet} found {len(self._responsive)} responsive hosts"
        )
        interval = self.config.probe_interval
        now = self.attacker.now
        probes = [(ip, port) for ip in self._responsive for port in self.ports]
        for i, (ip, port) in enumerate(probes):
            self.attacker.scheduler.schedule(
                now + i * interval, self._syn(ip, port), note="scan:syn"
            )
        end = now + len(probes) * interval + self.config.grace
        self.attacker.scheduler.schedule(end, self._complete, note="scan:end")

    def _syn(self, ip: IPv4Address, port: int):
        def send() -> None:
            seq = self.attacker.rng.draw(2**32)
            self._probed[(ip, port)] = seq
            segment = TcpSegment(self.source_port, port, seq, 0, TcpFlags.SYN, window=1024)
            self._send(self.attacker.host.make_packet(ip, IpProtocol.TCP, segment))

        return send

    def _send(self, packet: Ipv4Packet) -> None:
        self.frames_emitted += 1
        self.report.probes_sent += 1
        self.attacker.send_ip(packet, self.label)

    def _observe(self, interface: Interface, frame: EthernetFrame) -> bool:
        packet = frame.payload
        if not isinstance(packet, Ipv4Packet) or packet.src not in self.subnet:
            return False
        payload = packet.payload
        if isinstance(payload, IcmpMessage):
            if payload.type == IcmpType.ECHO_REPLY and payload.identifier == self.identifier:
                self._ttl.setdefault(packet.src, packet.ttl)
        elif isinstance(payload, TcpSegment) and payload.dst_port == self.source_port:
            seq = self._probed.get((packet.src, payload.src_port))
            if seq is None or payload.ack != (seq + 1) % 2**32:
                return False
            if payload.flags & TcpFlags.SYN and payload.flags & TcpFlags.ACK:
                name = SERVICE_NAMES.get(payload.src_port, "unknown")
                self._open.setdefault(packet.src, {})[payload.src_port] = name
            elif payload.flags & TcpFlags.RST:
                self._closed.setdefault(packet.src, set()).add(payload.src_port)
        return False

    def _complete(self) -> None:
        self.attacker.host.taps.remove(self._observe)
        local = self.attacker.interface.subnet
        for ip in self._responsive:
            ttl = self._ttl[ip]
            mac = self.attacker.host.arp_table.lookup(ip) if ip in local else None
            self.report.hosts.append(
                ScannedHost(
                    ip=ip,
                    mac=str(mac) if mac is not None else None,
                    os_guess=guess_os(ttl),
                    observed_ttl=ttl,
                    open_ports=dict(sorted(self._open.get(ip, {}).items())),
                    closed_ports=len(self._closed.get(ip, ())),
                )
            )
        self.attacker.scan_report = self.report
        self.details = {
            "probes_sent": self.report.probes_sent,
            "hosts": [h.model_dump(mode="json") for h in self.report.hosts],
        }
        open_total = sum(len(h.open_ports) for h in self.report.hosts)
        logger.info(
            f"Scan of {self.subnet}: {len(self.report.hosts)} hosts, {open_total} open ports"
        )
        self.finish()


def network_scan(attacker: Attacker, config: ScanPhaseConfig) -> NetworkScan:
    return NetworkScan(attacker, config)


def scan_duration(config: ScanPhaseConfig, responsive_hosts: int) -> SimTime:
    """Length of a scan that finds ``responsive_hosts`` hosts."""
    sweep = (config.target_subnet.num_addresses - 2) * config.probe_interval
    probes = responsive_hosts * len(set(config.ports)) * config.probe_interval
    return sweep + probes + 2 * config.grace
