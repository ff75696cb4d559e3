"""PSH|ACK and ICMP/IGMP floods."""

from __future__ import annotations

import logging
from abc import abstractmethod
from collections import Counter
from ipaddress import IPv4Address

from src.attacks.base import Attacker, AttackPhase
from src.engine import NS_PER_SEC, SimTime
from src.models import IcmpIgmpFloodConfig, LabelTag, PushAckFloodConfig
from src.protocols.packets import (
    IcmpMessage,
    IcmpType,
    IgmpMessage,
    IgmpType,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
)

logger = logging.getLogger(__name__)

ICMP_FLOOD_PAYLOAD = 1400
JUNK_PAYLOAD = (16, 64)
SPOOF_RANGE = (int(IPv4Address("1.0.0.0")), int(IPv4Address("223.255.255.255")))


class Flood(AttackPhase):
    """Fixed-rate emission with +/-10% integer jitter on the spacing."""

    def __init__(self, attacker: Attacker, target: IPv4Address, rate: int, duration: SimTime, spoof: bool):
        super().__init__(attacker)
        self.target = target
        self.rate = rate
        self.duration = duration
        self.spoof = spoof
        self.base_interval = max(1, NS_PER_SEC // rate)
        self.jitter = self.base_interval // 10
        self.rng = attacker.rng.child(self.kind)
        self._end: SimTime = 0
        self.counts: Counter[str] = Counter()

    def start(self) -> None:
        self._end = self.attacker.now + self.duration
        self.attacker.scheduler.schedule(self._end, self._complete, note=f"{self.kind}:end")
        self._emit()

    def next_interval(self) -> SimTime:
        return self.base_interval - self.jitter + self.rng.draw(2 * self.jitter + 1)

    def _emit(self) -> None:
        if self.attacker.now >= self._end:
            return
        self.attacker.send_ip(self.build_packet(), self.label)
        self.frames_emitted += 1
        at = self.attacker.now + self.next_interval()
        if at < self._end:
            self.attacker.scheduler.schedule(at, self._emit, note=self.kind)

    def source(self) -> IPv4Address | None:
        if not self.spoof:
            return None
        low, high = SPOOF_RANGE
        return IPv4Address(low + self.rng.draw(high - low + 1))

    @abstractmethod
    def build_packet(self) -> Ipv4Packet:
        """The next flood packet, counted in ``counts``."""
        pass

    def _complete(self) -> None:
        self.details = {
            "target": str(self.target),
            "rate": self.rate,
            "emitted": self.frames_emitted,
            "spoofed": self.spoof,
            **dict(sorted(self.counts.items())),
        }
        logger.info(f"{self.kind} against {self.target}: {self.frames_emitted} packets")
        self.finish()


class PushAckFlood(Flood):
    label = LabelTag.DOS_PSHACK
    kind = "push_ack_flood"

    def __init__(self, attacker: Attacker, target: IPv4Address, config: PushAckFloodConfig):
        super().__init__(attacker, target, config.rate, config.duration, config.spoof)
        self.port = config.port

    def build_packet(self) -> Ipv4Packet:
        rng = self.rng
        low, high = JUNK_PAYLOAD
        segment = TcpSegment(
            1024 + rng.draw(65536 - 1024),
            self.port,
            rng.draw(2**32),
            rng.draw(2**32),
            TcpFlags.PSH | TcpFlags.ACK,
            payload=rng.bytes(low + rng.draw(high - low + 1)),
        )
        self.counts["psh_ack"] += 1
        return self.attacker.host.make_packet(self.target, IpProtocol.TCP, segment, src=self.source())


class IcmpIgmpFlood(Flood):
    """ICMP echo requests and IGMPv2 reports, picked per packet by ``icmp_fraction``."""

    label = LabelTag.DOS_ICMPIGMP
    kind = "icmp_igmp_flood"

    def __init__(self, attacker: Attacker, target: IPv4Address, config: IcmpIgmpFloodConfig):
        super().__init__(attacker, target, config.rate, config.duration, config.spoof)
        self.icmp_fraction = config.icmp_fraction
        self.identifier = self.rng.draw(2**16)
        self.payload = self.rng.bytes(ICMP_FLOOD_PAYLOAD)
        self.sequence = 0

    def build_packet(self) -> Ipv4Packet:
        host = self.attacker.host
        if self.rng.uniform() < self.icmp_fraction:
            self.sequence = (self.sequence + 1) & 0xFFFF
            message = IcmpMessage(
                IcmpType.ECHO_REQUEST, 0, self.identifier, self.sequence, self.payload
            )
            self.counts["icmp"] += 1
            return host.make_packet(self.target, IpProtocol.ICMP, message, src=self.source())
        group = IPv4Address(f"239.255.{self.rng.draw(256)}.{1 + self.rng.draw(254)}")
        report = IgmpMessage(IgmpType.V2_MEMBERSHIP_REPORT, group)
        self.counts["igmp"] += 1
        return host.make_packet(self.target, IpProtocol.IGMP, report, src=self.source(), ttl=64)


def push_ack_flood(attacker: Attacker, target: IPv4Address, config: PushAckFloodConfig) -> PushAckFlood:
    return PushAckFlood(attacker, target, config)


def icmp_igmp_flood(
    attacker: Attacker, target: IPv4Address, config: IcmpIgmpFloodConfig
) -> IcmpIgmpFlood:
    return IcmpIgmpFlood(attacker, target, config)
