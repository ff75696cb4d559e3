"""ICMP echo agent."""

from __future__ import annotations

import struct

from src.apps.base import BaseAgent, Exchange
from src.models import OsTag
from src.protocols.packets import IcmpMessage, IcmpType, IpProtocol, Ipv4Packet

WINDOWS_PAYLOAD = b"abcdefghijklmnopqrstuvwabcdefghi"


def echo_payload(os_tag: OsTag, sequence: int) -> bytes:
    """32-byte alphabet on Windows, 56 bytes (sequence plus pattern) on Linux."""
    if os_tag is OsTag.WINDOWS10:
        return WINDOWS_PAYLOAD
    return struct.pack("!Q", sequence) + bytes(range(0x10, 0x40))


class Ping(BaseAgent):
    """One echo request per wakeup; success when the matching reply arrives."""

    kind = "Ping"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.identifier = self.rng.draw(0x10000)
        self.sequence = 0

    def run_exchange(self, exchange: Exchange) -> None:
        self.sequence = (self.sequence + 1) & 0xFFFF
        sequence = self.sequence

        def on_icmp(packet: Ipv4Packet) -> None:
            reply = packet.icmp
            if (
                packet.src == self.target_ip
                and reply is not None
                and reply.type == IcmpType.ECHO_REPLY
                and reply.identifier == self.identifier
                and reply.sequence == sequence
            ):
                exchange.finish(True, f"seq={sequence} ttl={packet.ttl}")

        self.host.icmp_listeners.append(on_icmp)
        exchange.context["listener"] = on_icmp
        request = IcmpMessage(
            IcmpType.ECHO_REQUEST,
            0,
            self.identifier,
            sequence,
            echo_payload(self.host.os_tag, sequence),
        )
        self.host.send_ip(
            self.host.make_packet(self.target_ip, IpProtocol.ICMP, request), self.provenance
        )

    def exchange_finished(self, exchange: Exchange, success: bool, detail: str) -> None:
        self.host.icmp_listeners.remove(exchange.context["listener"])
        super().exchange_finished(exchange, success, detail)
