"""NTP client/server over UDP 123 with 48-byte packets."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from src.apps.base import BaseAgent, Exchange
from src.engine import NS_PER_SEC, SimTime
from src.netmodel.host import Host
from src.protocols.packets import Ipv4Packet, UdpDatagram

NTP_PORT = 123
NTP_PACKET = struct.Struct("!BBbbII4sQQQQ")
NTP_LEN = NTP_PACKET.size  # 48
MODE_CLIENT = 3
MODE_SERVER = 4
VERSION = 4
STRATUM = 2
REFERENCE_ID = b"GPS\x00"


def to_timestamp(t: SimTime) -> int:
    """64-bit NTP timestamp (32.32 fixed point) for a simulation instant."""
    seconds, rest = divmod(t, NS_PER_SEC)
    return (seconds << 32) | (rest * 2**32 // NS_PER_SEC)


@dataclass(frozen=True, slots=True)
class NtpPacket:
    mode: int
    stratum: int = 0
    poll: int = 6
    precision: int = -20
    root_delay: int = 0
    root_dispersion: int = 0
    reference_id: bytes = b"\x00\x00\x00\x00"
    reference_ts: int = 0
    origin_ts: int = 0
    receive_ts: int = 0
    transmit_ts: int = 0

    def encode(self) -> bytes:
        first = (0 << 6) | (VERSION << 3) | self.mode
        return NTP_PACKET.pack(
            first,
            self.stratum,
            self.poll,
            self.precision,
            self.root_delay,
            self.root_dispersion,
            self.reference_id,
            self.reference_ts,
            self.origin_ts,
            self.receive_ts,
            self.transmit_ts,
        )

    @classmethod
    def decode(cls, data: bytes) -> NtpPacket:
        if len(data) < NTP_LEN:
            raise ValueError(f"NTP packet too short: {len(data)} bytes")
        fields = NTP_PACKET.unpack(data[:NTP_LEN])
        return cls(fields[0] & 0x07, *fields[1:])


class NtpServer:
    """Answers mode-3 requests with mode-4 responses stamped with the send instant."""

    def __init__(self, host: Host):
        self.host = host
        self.answered = 0
        host.bind_udp(NTP_PORT, self.handle)

    def handle(self, packet: Ipv4Packet, datagram: UdpDatagram) -> None:
        try:
            request = NtpPacket.decode(datagram.payload)
        except ValueError:
            return
        if request.mode != MODE_CLIENT:
            return
        now = to_timestamp(self.host.scheduler.now)
        response = NtpPacket(
            MODE_SERVER,
            stratum=STRATUM,
            root_delay=0x00000010,
            root_dispersion=0x00000020,
            reference_id=REFERENCE_ID,
            reference_ts=now,
            origin_ts=request.transmit_ts,
            receive_ts=now,
            transmit_ts=now,
        )
        self.answered += 1
        self.host.send_udp(packet.src, datagram.src_port, NTP_PORT, response.encode())


class NtpClient(BaseAgent):
    """One request/response exchange per wakeup from a fresh source port."""

    kind = "NtpClient"

    def run_exchange(self, exchange: Exchange) -> None:
        host = self.host
        port = host.ephemeral_udp_port()
        sent = to_timestamp(host.scheduler.now)

        def on_response(packet: Ipv4Packet, datagram: UdpDatagram) -> None:
            if packet.src != self.target_ip or exchange.done:
                return
            try:
                response = NtpPacket.decode(datagram.payload)
            except ValueError:
                return
            if response.mode == MODE_SERVER and response.origin_ts == sent:
                exchange.finish(True, f"stratum {response.stratum}")

        host.bind_udp(port, on_response)
        exchange.context["release"] = lambda: host.unbind_udp(port)
        request = NtpPacket(MODE_CLIENT, transmit_ts=sent)
        host.send_udp(self.target_ip, NTP_PORT, port, request.encode(), self.provenance)

    def exchange_finished(self, exchange: Exchange, success: bool, detail: str) -> None:
        exchange.context.pop("release")()
        super().exchange_finished(exchange, success, detail)

