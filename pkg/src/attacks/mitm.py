"""ARP poisoning and the relay that keeps poisoned victims talking."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from ipaddress import IPv4Address

from src.attacks.base import Attacker, AttackPhase
from src.engine import NS_PER_MS, NS_PER_SEC, SimTime
from src.models import ArpPoisonPhaseConfig, LabelTag, Provenance
from src.netmodel.host import Interface
from src.netmodel.topology import USER_LAN
from src.protocols.addresses import MacAddress
from src.protocols.packets import (
    ArpMessage,
    ArpOp,
    EthernetFrame,
    Ipv4Packet,
    TcpSegment,
    UdpDatagram,
)

logger = logging.getLogger(__name__)

RESOLVE_DELAY = 100 * NS_PER_MS
POISON_END_MARGIN = 5 * NS_PER_SEC


class UnknownVictimMacError(LookupError):
    """Raised when a victim's MAC is neither known nor allowed to be resolved."""


@dataclass(frozen=True, slots=True)
class LootRecord:
    time: SimTime
    protocol: int
    src: IPv4Address
    src_port: int
    dst: IPv4Address
    dst_port: int
    payload_bytes: int


RelayObserver = Callable[[Ipv4Packet, Provenance], None]


class MitmRelay:
    """Re-emits diverted frames toward their real next hop, unmodified.

    Installed once per attacker as a receive tap and left in place after the
    poisoning ends, so frames still in flight are not lost.
    """

    def __init__(self, attacker: Attacker, label: LabelTag):
        self.attacker = attacker
        self.label = label
        self.loot: list[LootRecord] = []
        self.relayed = 0
        self.loops_dropped = 0
        self.observers: list[RelayObserver] = []
        attacker.host.taps.append(self._tap)

    @classmethod
    def install(cls, attacker: Attacker, label: LabelTag) -> MitmRelay:
        if attacker.relay is None:
            attacker.relay = cls(attacker, label)
        attacker.relay.label = label
        return attacker.relay

    def _tap(self, interface: Interface, frame: EthernetFrame) -> bool:
        packet = frame.payload
        if not isinstance(packet, Ipv4Packet) or frame.dst != interface.mac:
            return False
        if self.attacker.host.owns(packet.dst):
            return False
        mitm_relay(self, packet, frame.meta)
        return True

    def relay(self, packet: Ipv4Packet, origin: Provenance | None) -> bool:
        if origin is not None and origin.relayed:
            self.loops_dropped += 1
            return False
        agent = origin.agent_id if origin is not None else "unknown"
        provenance = Provenance(agent, self.label, relayed=True)
        self.attacker.host.send_ip(packet, provenance)
        self.relayed += 1
        self.loot.append(_loot_record(self.attacker.now, packet))
        for observer in list(self.observers):
            observer(packet, provenance)
        return True


def _loot_record(now: SimTime, packet: Ipv4Packet) -> LootRecord:
    payload = packet.payload
    if isinstance(payload, TcpSegment | UdpDatagram):
        return LootRecord(
            now,
            packet.protocol,
            packet.src,
            payload.src_port,
            packet.dst,
            payload.dst_port,
            len(payload.payload),
        )
    size = len(payload.payload) if hasattr(payload, "payload") else 0
    return LootRecord(now, packet.protocol, packet.src, 0, packet.dst, 0, size)


def mitm_relay(relay: MitmRelay, packet: Ipv4Packet, origin: Provenance | None) -> bool:
    """Forward one diverted packet; False when it was dropped as a relay loop."""
    return relay.relay(packet, origin)


class ArpPoisoner:
    """Periodic forged is-at rounds for a set of victim pairs.

    Each round tells ``a`` that ``b`` is at the attacker's MAC and the other
    way round. ``stop`` sends one corrective round with the true bindings.
    """

    def __init__(
        self,
        attacker: Attacker,
        pairs: list[tuple[IPv4Address, IPv4Address]],
        period: SimTime,
        label: LabelTag,
        *,
        resolve: bool = True,
    ):
        self.attacker = attacker
        self.pairs = list(pairs)
        self.period = period
        self.label = label
        self.resolve = resolve
        self.rounds = 0
        self.forged = 0
        self.corrective = 0
        self.skipped: set[tuple[IPv4Address, IPv4Address]] = set()
        self._until: SimTime = 0
        self._on_done: Callable[[], None] | None = None
        if not resolve:
            for ip in self.victims:
                if self._mac(ip) is None:
                    raise UnknownVictimMacError(f"no MAC known for victim {ip}")

    @property
    def victims(self) -> list[IPv4Address]:
        return sorted({ip for pair in self.pairs for ip in pair})

    def _mac(self, ip: IPv4Address) -> MacAddress | None:
        return self.attacker.host.arp_table.lookup(ip)

    def start(self, until: SimTime, on_done: Callable[[], None]) -> None:
        self._until = until
        self._on_done = on_done
        if self.resolve:
            for ip in self.victims:
                if self._mac(ip) is None:
                    self.attacker.host.send_arp_request(self.attacker.interface, ip)
        first = self.attacker.now + RESOLVE_DELAY
        if first < until:
            self.attacker.scheduler.schedule(first, self._round, note="arp-poison")
        self.attacker.scheduler.schedule(max(until, first), self.stop, note="arp-poison:end")

    def _round(self) -> None:
        self.rounds += 1
        attacker_mac = self.attacker.mac
        for a, b in self.pairs:
            mac_a, mac_b = self._mac(a), self._mac(b)
            if mac_a is None or mac_b is None:
                if (a, b) not in self.skipped:
                    logger.warning(f"Skipping poison pair {a} <-> {b}: victim MAC unknown")
                    self.skipped.add((a, b))
                continue
            self.skipped.discard((a, b))
            self._is_at(mac_a, a, b, attacker_mac)
            self._is_at(mac_b, b, a, attacker_mac)
            self.forged += 2
        next_round = self.attacker.now + self.period
        if next_round < self._until:
            self.attacker.scheduler.schedule(next_round, self._round, note="arp-poison")

    def _is_at(
        self, victim_mac: MacAddress, victim_ip: IPv4Address, claimed_ip: IPv4Address, mac: MacAddress
    ) -> None:
        message = ArpMessage(ArpOp.IS_AT, mac, claimed_ip, victim_mac, victim_ip)
        self.attacker.send_arp(victim_mac, message, self.label)

    def stop(self) -> None:
        """Restore the true bindings on every poisoned pair."""
        for a, b in self.pairs:
            mac_a, mac_b = self._mac(a), self._mac(b)
            if mac_a is None or mac_b is None:
                continue
            self._is_at(mac_a, a, b, mac_b)
            self._is_at(mac_b, b, a, mac_a)
            self.corrective += 2
        if self._on_done is not None:
            on_done, self._on_done = self._on_done, None
            on_done()

    @property
    def frames_emitted(self) -> int:
        return self.forged + self.corrective


def default_victim_pairs(attacker: Attacker) -> list[tuple[IPv4Address, IPv4Address]]:
    """Every benign host on the attacker's LAN paired with the router."""
    topology = attacker.topology
    gateway = topology.router_ip(USER_LAN)
    return [
        (host.ip, gateway)
        for host in sorted(topology.hosts_in(USER_LAN), key=lambda h: h.ip)
        if host is not attacker.host
    ]


class ArpPoisonPhase(AttackPhase):
    """Poisons victim pairs for a fixed duration, or until shortly before ``end_of_run``."""

    label = LabelTag.MITM_ARP
    kind = "arp_poison"

    def __init__(self, attacker: Attacker, config: ArpPoisonPhaseConfig, end_of_run: SimTime):
        super().__init__(attacker)
        self.config = config
        self.end_of_run = end_of_run
        pairs = config.victims if config.victims is not None else default_victim_pairs(attacker)
        self.poisoner = ArpPoisoner(attacker, pairs, config.period, self.label)
        self.relay: MitmRelay | None = None

    def start(self) -> None:
        if self.config.relay:
            self.relay = MitmRelay.install(self.attacker, self.label)
        now = self.attacker.now
        if self.config.duration is not None:
            until = now + self.config.duration
        else:
            until = max(now, self.end_of_run - POISON_END_MARGIN)
        self.poisoner.start(until, self._done)

    def _done(self) -> None:
        self.frames_emitted = self.poisoner.frames_emitted
        self.details = {
            "pairs": len(self.poisoner.pairs),
            "rounds": self.poisoner.rounds,
            "forged_replies": self.poisoner.forged,
            "corrective_replies": self.poisoner.corrective,
            "skipped_pairs": sorted(f"{a}<->{b}" for a, b in self.poisoner.skipped),
        }
        if self.relay is not None:
            self.details["relayed"] = self.relay.relayed
            self.details["loot_records"] = len(self.relay.loot)
            self.details["loot_bytes"] = sum(r.payload_bytes for r in self.relay.loot)
        self.finish()


def arp_poison(
    attacker: Attacker, config: ArpPoisonPhaseConfig, end_of_run: SimTime
) -> ArpPoisonPhase:
    return ArpPoisonPhase(attacker, config, end_of_run)
