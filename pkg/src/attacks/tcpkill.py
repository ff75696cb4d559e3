"""On-path TCP connection killer: forged RSTs with exact sequence numbers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from ipaddress import IPv4Address

from src.attacks.base import Attacker, AttackPhase
from src.attacks.mitm import ArpPoisoner, MitmRelay, default_victim_pairs
from src.engine import SimTime
from src.models import LabelTag, Provenance, TcpKillConfig
from src.protocols.packets import IpProtocol, Ipv4Packet, TcpFlags, TcpSegment
from src.protocols.tcp import seq_add

logger = logging.getLogger(__name__)

Endpoint = tuple[IPv4Address, int]


@dataclass(frozen=True, slots=True)
class KillRecord:
    time: SimTime
    sender: Endpoint
    receiver: Endpoint


def connection_id(packet: Ipv4Packet) -> frozenset[Endpoint]:
    seg: TcpSegment = packet.payload
    return frozenset({(packet.src, seg.src_port), (packet.dst, seg.dst_port)})


def forged_resets(packet: Ipv4Packet) -> tuple[TcpSegment, TcpSegment]:
    """RSTs that land exactly on each endpoint's next expected sequence number.

    The first goes to the receiver of ``packet`` (after it has processed it),
    the second back to its sender.
    """
    seg: TcpSegment = packet.payload
    to_receiver = TcpSegment(
        seg.src_port, seg.dst_port, seq_add(seg.seq, seg.seg_len), 0, TcpFlags.RST, window=0
    )
    to_sender = TcpSegment(seg.dst_port, seg.src_port, seg.ack, 0, TcpFlags.RST, window=0)
    return to_receiver, to_sender


class TcpConnectionKiller(AttackPhase):
    """Poisons the User LAN against the router and resets every connection it sees.

    A connection counts as observed once a relayed segment carries ACK without
    SYN or RST, which means the handshake has completed.
    """

    label = LabelTag.DOS_TCPKILL
    kind = "tcp_connection_killer"

    def __init__(self, attacker: Attacker, config: TcpKillConfig):
        super().__init__(attacker)
        self.config = config
        self.poisoner = ArpPoisoner(
            attacker, default_victim_pairs(attacker), config.poison_period, self.label
        )
        self.relay: MitmRelay | None = None
        self.killed: set[frozenset[Endpoint]] = set()
        self.kills: list[KillRecord] = []

    def start(self) -> None:
        self.relay = MitmRelay.install(self.attacker, self.label)
        self.relay.observers.append(self._observe)
        self.poisoner.start(self.attacker.now + self.config.duration, self._done)

    def _observe(self, packet: Ipv4Packet, provenance: Provenance) -> None:
        if not self.running or packet.protocol != IpProtocol.TCP:
            return
        seg = packet.payload
        if not isinstance(seg, TcpSegment):
            return
        if not seg.flags & TcpFlags.ACK or seg.flags & (TcpFlags.SYN | TcpFlags.RST):
            return
        key = connection_id(packet)
        if key in self.killed:
            return
        self.killed.add(key)
        to_receiver, to_sender = forged_resets(packet)
        host = self.attacker.host
        self.attacker.send_ip(
            host.make_packet(packet.dst, IpProtocol.TCP, to_receiver, src=packet.src), self.label
        )
        self.attacker.send_ip(
            host.make_packet(packet.src, IpProtocol.TCP, to_sender, src=packet.dst), self.label
        )
        self.frames_emitted += 2
        self.kills.append(
            KillRecord(self.attacker.now, (packet.src, seg.src_port), (packet.dst, seg.dst_port))
        )

    def _done(self) -> None:
        self.relay.observers.remove(self._observe)
        self.frames_emitted += self.poisoner.frames_emitted
        self.details = {
            "connections_killed": len(self.kills),
            "resets_sent": 2 * len(self.kills),
            "poison_rounds": self.poisoner.rounds,
            "relayed": self.relay.relayed,
        }
        if not self.kills:
            logger.info("Connection killer observed no established connections")
        self.finish()


def tcp_connection_killer(attacker: Attacker, config: TcpKillConfig) -> TcpConnectionKiller:
    return TcpConnectionKiller(attacker, config)
