"""Central router joining the three LANs."""

from __future__ import annotations

import dataclasses
import logging
from enum import Enum
from ipaddress import IPv4Address

from src.models import Provenance
from src.netmodel.host import Host, Interface
from src.protocols.packets import (
    EthernetFrame,
    IcmpType,
    IcmpUnreachableCode,
    Ipv4Packet,
)

logger = logging.getLogger(__name__)


class ForwardAction(str, Enum):
    FORWARDED = "forwarded"
    LOCAL = "local"
    TTL_EXPIRED = "ttl-expired"
    NO_ROUTE = "no-route"


class Router(Host):
    """A host that forwards between its interfaces.

    Counters keep ``packets_in == forwarded + local + dropped_*`` for every
    packet that reached IP processing.
    """

    forwarding = True

    def handle_ip(self, interface: Interface, frame: EthernetFrame) -> None:
        self.route_packet(interface, frame.payload, frame.meta)

    def route_packet(
        self, interface: Interface, packet: Ipv4Packet, provenance: Provenance | None = None
    ) -> ForwardAction:
        """Forward ``packet`` one hop, or drop it with the matching ICMP error."""
        self.counters["packets_in"] += 1
        if self.owns(packet.dst) or packet.dst == interface.subnet.broadcast_address:
            self.counters["packets_local"] += 1
            self.deliver_local(packet)
            return ForwardAction.LOCAL
        if packet.ttl <= 1:
            self.counters["dropped_ttl"] += 1
            self.send_icmp_error(packet, IcmpType.TIME_EXCEEDED, 0, src=interface.ip)
            return ForwardAction.TTL_EXPIRED
        egress = next((i for i in self.interfaces if packet.dst in i.subnet), None)
        if egress is None:
            self.counters["dropped_no_route"] += 1
            self.send_icmp_error(
                packet, IcmpType.DEST_UNREACHABLE, IcmpUnreachableCode.NET, src=interface.ip
            )
            return ForwardAction.NO_ROUTE
        forwarded = dataclasses.replace(packet, ttl=packet.ttl - 1, checksum=None)
        self.counters["forwarded"] += 1
        self.send_ip(forwarded, provenance or self.provenance)
        return ForwardAction.FORWARDED

    def resolution_failed(
        self, next_hop: IPv4Address, queue: list[tuple[Ipv4Packet, Provenance]]
    ) -> None:
        """Queued packets for a silent neighbour bounce back as host unreachable."""
        super().resolution_failed(next_hop, queue)
        logger.debug(f"{self.name}: no ARP reply from {next_hop}, dropping {len(queue)} packets")
        for packet, _ in queue:
            self.counters["dropped_unresolved"] += 1
            ingress = self.route(packet.src)
            self.send_icmp_error(
                packet,
                IcmpType.DEST_UNREACHABLE,
                IcmpUnreachableCode.HOST,
                src=ingress[0].ip if ingress is not None else None,
            )

    def conservation_holds(self) -> bool:
        c = self.counters
        handled = (
            c["forwarded"] + c["packets_local"] + c["dropped_ttl"] + c["dropped_no_route"]
        )
        return c["packets_in"] == handled
