"""Byte-exact codecs for Ethernet II, ARP, IPv4, ICMP, IGMPv2, TCP and UDP.

Packets are plain dataclasses. A ``checksum`` of ``None`` means "compute on
encode"; decoding fills it with the wire value and records whether it
verified in ``checksum_ok``. Neither field takes part in equality, so
``decode_frame(encode_frame(x)) == x`` holds whether or not checksums were
pre-filled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag
from ipaddress import IPv4Address

from src.models import Provenance
from src.protocols.addresses import MacAddress
from src.protocols.checksum import inet_checksum, verifies

ETHERNET_HEADER_LEN = 14
ETHERNET_MIN_LEN = 60  # Without FCS, which captures never store.
ARP_LEN = 28
IPV4_HEADER_LEN = 20
TCP_HEADER_LEN = 20
UDP_HEADER_LEN = 8
ICMP_HEADER_LEN = 8
IGMP_LEN = 8

TCP_WINDOW = 65535
TCP_MSS = 1460


class TruncatedFrameError(ValueError):
    """Raised when bytes are too short for the header being decoded."""


class EtherType(IntEnum):
    IPV4 = 0x0800
    ARP = 0x0806


class IpProtocol(IntEnum):
    ICMP = 1
    IGMP = 2
    TCP = 6
    UDP = 17


class ArpOp(IntEnum):
    WHO_HAS = 1
    IS_AT = 2


class TcpFlags(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20

    def short(self) -> str:
        """Compact flag string in tcpdump order, e.g. ``SA`` or ``PA``."""
        letters = (("F", TcpFlags.FIN), ("S", TcpFlags.SYN), ("R", TcpFlags.RST),
                   ("P", TcpFlags.PSH), ("A", TcpFlags.ACK), ("U", TcpFlags.URG))
        return "".join(letter for letter, flag in letters if self & flag)


class IcmpType(IntEnum):
    ECHO_REPLY = 0
    DEST_UNREACHABLE = 3
    ECHO_REQUEST = 8
    TIME_EXCEEDED = 11


class IcmpUnreachableCode(IntEnum):
    NET = 0
    HOST = 1
    PROTOCOL = 2
    PORT = 3


class IgmpType(IntEnum):
    MEMBERSHIP_QUERY = 0x11
    V2_MEMBERSHIP_REPORT = 0x16
    LEAVE_GROUP = 0x17


@dataclass(slots=True)
class ArpMessage:
    operation: ArpOp
    sender_mac: MacAddress
    sender_ip: IPv4Address
    target_mac: MacAddress
    target_ip: IPv4Address

    @property
    def is_gratuitous(self) -> bool:
        return self.sender_ip == self.target_ip


@dataclass(slots=True)
class TcpSegment:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: TcpFlags
    payload: bytes = b""
    window: int = TCP_WINDOW
    urgent: int = 0
    checksum: int | None = field(default=None, compare=False)
    checksum_ok: bool = field(default=True, compare=False)

    @property
    def seg_len(self) -> int:
        """Sequence space consumed: payload plus one each for SYN and FIN."""
        return (
            len(self.payload)
            + (1 if self.flags & TcpFlags.SYN else 0)
            + (1 if self.flags & TcpFlags.FIN else 0)
        )


@dataclass(slots=True)
class UdpDatagram:
    src_port: int
    dst_port: int
    payload: bytes = b""
    checksum: int | None = field(default=None, compare=False)
    checksum_ok: bool = field(default=True, compare=False)


@dataclass(slots=True)
class IcmpMessage:
    type: int
    code: int = 0
    identifier: int = 0
    sequence: int = 0
    payload: bytes = b""
    checksum: int | None = field(default=None, compare=False)
    checksum_ok: bool = field(default=True, compare=False)


@dataclass(slots=True)
class IgmpMessage:
    type: int
    group: IPv4Address
    max_resp_time: int = 0
    checksum: int | None = field(default=None, compare=False)
    checksum_ok: bool = field(default=True, compare=False)


Transport = TcpSegment | UdpDatagram | IcmpMessage | IgmpMessage


@dataclass(slots=True)
class Ipv4Packet:
    src: IPv4Address
    dst: IPv4Address
    protocol: int
    payload: Transport | bytes
    ttl: int = 64
    identification: int = 0
    dont_fragment: bool = True
    tos: int = 0
    checksum: int | None = field(default=None, compare=False)
    checksum_ok: bool = field(default=True, compare=False)

    @property
    def tcp(self) -> TcpSegment | None:
        return self.payload if isinstance(self.payload, TcpSegment) else None

    @property
    def udp(self) -> UdpDatagram | None:
        return self.payload if isinstance(self.payload, UdpDatagram) else None

    @property
    def icmp(self) -> IcmpMessage | None:
        return self.payload if isinstance(self.payload, IcmpMessage) else None

    def total_length(self) -> int:
        return IPV4_HEADER_LEN + len(_encode_transport(self))


@dataclass(slots=True)
class EthernetFrame:
    dst: MacAddress
    src: MacAddress
    ethertype: int
    payload: ArpMessage | Ipv4Packet | bytes
    meta: Provenance | None = field(default=None, compare=False, repr=False)

    @property
    def ip(self) -> Ipv4Packet | None:
        return self.payload if isinstance(self.payload, Ipv4Packet) else None

    @property
    def arp(self) -> ArpMessage | None:
        return self.payload if isinstance(self.payload, ArpMessage) else None


# --- encoding ---------------------------------------------------------------


def _fill(data: bytes, offset: int, checksum: int) -> bytes:
    return data[:offset] + struct.pack("!H", checksum) + data[offset + 2 :]


def _pseudo_header(src: IPv4Address, dst: IPv4Address, protocol: int, length: int) -> bytes:
    return src.packed + dst.packed + struct.pack("!BBH", 0, protocol, length)


def encode_arp(message: ArpMessage) -> bytes:
    return struct.pack(
        "!HHBBH6s4s6s4s",
        1,
        EtherType.IPV4,
        6,
        4,
        message.operation,
        message.sender_mac.octets,
        message.sender_ip.packed,
        message.target_mac.octets,
        message.target_ip.packed,
    )


def encode_tcp(segment: TcpSegment, src: IPv4Address, dst: IPv4Address) -> bytes:
    data = (
        struct.pack(
            "!HHIIBBHHH",
            segment.src_port,
            segment.dst_port,
            segment.seq & 0xFFFFFFFF,
            segment.ack & 0xFFFFFFFF,
            (TCP_HEADER_LEN // 4) << 4,
            int(segment.flags),
            segment.window,
            0,
            segment.urgent,
        )
        + segment.payload
    )
    checksum = segment.checksum
    if checksum is None:
        checksum = inet_checksum(_pseudo_header(src, dst, IpProtocol.TCP, len(data)) + data)
    return _fill(data, 16, checksum)


def encode_udp(datagram: UdpDatagram, src: IPv4Address, dst: IPv4Address) -> bytes:
    length = UDP_HEADER_LEN + len(datagram.payload)
    data = struct.pack("!HHHH", datagram.src_port, datagram.dst_port, length, 0) + datagram.payload
    checksum = datagram.checksum
    if checksum is None:
        checksum = inet_checksum(_pseudo_header(src, dst, IpProtocol.UDP, length) + data)
        # Zero means "no checksum" in UDP; a computed zero goes out as all ones.
        checksum = checksum or 0xFFFF
    return _fill(data, 6, checksum)


def encode_icmp(message: IcmpMessage) -> bytes:
    data = (
        struct.pack("!BBHHH", message.type, message.code, 0, message.identifier, message.sequence)
        + message.payload
    )
    checksum = message.checksum if message.checksum is not None else inet_checksum(data)
    return _fill(data, 2, checksum)


def encode_igmp(message: IgmpMessage) -> bytes:
    data = struct.pack("!BBH4s", message.type, message.max_resp_time, 0, message.group.packed)
    checksum = message.checksum if message.checksum is not None else inet_checksum(data)
    return _fill(data, 2, checksum)


def _encode_transport(packet: Ipv4Packet) -> bytes:
    payload = packet.payload
    if isinstance(payload, TcpSegment):
        return encode_tcp(payload, packet.src, packet.dst)
    if isinstance(payload, UdpDatagram):
        return encode_udp(payload, packet.src, packet.dst)
    if isinstance(payload, IcmpMessage):
        return encode_icmp(payload)
    if isinstance(payload, IgmpMessage):
        return encode_igmp(payload)
    return bytes(payload)


def encode_ipv4(packet: Ipv4Packet) -> bytes:
    body = _encode_transport(packet)
    header = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,
        packet.tos,
        IPV4_HEADER_LEN + len(body),
        packet.identification & 0xFFFF,
        0x4000 if packet.dont_fragment else 0,
        packet.ttl,
        packet.protocol,
        0,
        packet.src.packed,
        packet.dst.packed,
    )
    checksum = packet.checksum if packet.checksum is not None else inet_checksum(header)
    return _fill(header, 10, checksum) + body


def encode_frame(frame: EthernetFrame) -> bytes:
    """Serialize a frame to wire bytes, zero-padded to the 60-byte minimum."""
    payload = frame.payload
    if isinstance(payload, ArpMessage):
        body = encode_arp(payload)
    elif isinstance(payload, Ipv4Packet):
        body = encode_ipv4(payload)
    else:
        body = bytes(payload)
    data = frame.dst.octets + frame.src.octets + struct.pack("!H", frame.ethertype) + body
    if len(data) < ETHERNET_MIN_LEN:
        data += b"\x00" * (ETHERNET_MIN_LEN - len(data))
    return data


# --- decoding ---------------------------------------------------------------


def decode_arp(data: bytes) -> ArpMessage:
    if len(data) < ARP_LEN:
        raise TruncatedFrameError(f"ARP body needs {ARP_LEN} bytes, got {len(data)}")
    _, _, _, _, op, sha, spa, tha, tpa = struct.unpack("!HHBBH6s4s6s4s", data[:ARP_LEN])
    return ArpMessage(
        operation=ArpOp(op) if op in (1, 2) else op,
        sender_mac=MacAddress(sha),
        sender_ip=IPv4Address(spa),
        target_mac=MacAddress(tha),
        target_ip=IPv4Address(tpa),
    )


def decode_tcp(data: bytes, src: IPv4Address, dst: IPv4Address) -> TcpSegment:
    if len(data) < TCP_HEADER_LEN:
        raise TruncatedFrameError(f"TCP header needs {TCP_HEADER_LEN} bytes, got {len(data)}")
    sport, dport, seq, ack, offset, flags, window, checksum, urgent = struct.unpack(
        "!HHIIBBHHH", data[:TCP_HEADER_LEN]
    )
    header_len = (offset >> 4) * 4
    return TcpSegment(
        src_port=sport,
        dst_port=dport,
        seq=seq,
        ack=ack,
        flags=TcpFlags(flags & 0x3F),
        payload=bytes(data[header_len:]),
        window=window,
        urgent=urgent,
        checksum=checksum,
        checksum_ok=verifies(_pseudo_header(src, dst, IpProtocol.TCP, len(data)) + data),
    )


def decode_udp(data: bytes, src: IPv4Address, dst: IPv4Address) -> UdpDatagram:
    if len(data) < UDP_HEADER_LEN:
        raise TruncatedFrameError(f"UDP header needs {UDP_HEADER_LEN} bytes, got {len(data)}")
    sport, dport, length, checksum = struct.unpack("!HHHH", data[:UDP_HEADER_LEN])
    data = data[:length]
    ok = checksum == 0 or verifies(_pseudo_header(src, dst, IpProtocol.UDP, length) + data)
    return UdpDatagram(
        src_port=sport,
        dst_port=dport,
        payload=bytes(data[UDP_HEADER_LEN:]),
        checksum=checksum,
        checksum_ok=ok,
    )


def decode_icmp(data: bytes) -> IcmpMessage:
    if len(data) < ICMP_HEADER_LEN:
        raise TruncatedFrameError(f"ICMP header needs {ICMP_HEADER_LEN} bytes, got {len(data)}")
    icmp_type, code, checksum, identifier, sequence = struct.unpack("!BBHHH", data[:8])
    return IcmpMessage(
        type=icmp_type,
        code=code,
        identifier=identifier,
        sequence=sequence,
        payload=bytes(data[8:]),
        checksum=checksum,
        checksum_ok=verifies(data),
    )


def decode_igmp(data: bytes) -> IgmpMessage:
    if len(data) < IGMP_LEN:
        raise TruncatedFrameError(f"IGMP message needs {IGMP_LEN} bytes, got {len(data)}")
    igmp_type, max_resp, checksum, group = struct.unpack("!BBH4s", data[:IGMP_LEN])
    return IgmpMessage(
        type=igmp_type,
        group=IPv4Address(group),
        max_resp_time=max_resp,
        checksum=checksum,
        checksum_ok=verifies(data[:IGMP_LEN]),
    )


def decode_ipv4(data: bytes) -> Ipv4Packet:
    if len(data) < IPV4_HEADER_LEN:
        raise TruncatedFrameError(f"IPv4 header needs {IPV4_HEADER_LEN} bytes, got {len(data)}")
    ver_ihl, tos, total_length, ident, flags_frag, ttl, proto, checksum, src, dst = struct.unpack(
        "!BBHHHBBH4s4s", data[:IPV4_HEADER_LEN]
    )
    header_len = (ver_ihl & 0x0F) * 4
    if len(data) < total_length or total_length < header_len:
        raise TruncatedFrameError(
            f"IPv4 total length {total_length} exceeds {len(data)} available bytes"
        )
    src_ip, dst_ip = IPv4Address(src), IPv4Address(dst)
    body = data[header_len:total_length]
    payload: Transport | bytes
    try:
        if proto == IpProtocol.TCP:
            payload = decode_tcp(body, src_ip, dst_ip)
        elif proto == IpProtocol.UDP:
            payload = decode_udp(body, src_ip, dst_ip)
        elif proto == IpProtocol.ICMP:
            payload = decode_icmp(body)
        elif proto == IpProtocol.IGMP:
            payload = decode_igmp(body)
        else:
            payload = bytes(body)
    except TruncatedFrameError:
        payload = bytes(body)
    return Ipv4Packet(
        src=src_ip,
        dst=dst_ip,
        protocol=proto,
        payload=payload,
        ttl=ttl,
        identification=ident,
        dont_fragment=bool(flags_frag & 0x4000),
        tos=tos,
        checksum=checksum,
        checksum_ok=verifies(data[:header_len]),
    )


def decode_frame(data: bytes) -> EthernetFrame:
    """Parse wire bytes into a frame with nested protocol objects.

    Unknown ethertypes keep their raw payload. Bad checksums are flagged on
    the affected layer rather than raised.

    Raises:
        TruncatedFrameError: If the bytes are shorter than a header requires
    """
    if len(data) < ETHERNET_HEADER_LEN:
        raise TruncatedFrameError(f"Ethernet header needs 14 bytes, got {len(data)}")
    dst, src, ethertype = data[:6], data[6:12], struct.unpack("!H", data[12:14])[0]
    body = data[ETHERNET_HEADER_LEN:]
    payload: ArpMessage | Ipv4Packet | bytes
    if ethertype == EtherType.ARP:
        payload = decode_arp(body)
    elif ethertype == EtherType.IPV4:
        payload = decode_ipv4(body)
    else:
        payload = bytes(body)
    return EthernetFrame(MacAddress(bytes(dst)), MacAddress(bytes(src)), ethertype, payload)


def checksums_valid(frame: EthernetFrame) -> bool:
    """True if every checksum carried by ``frame`` verifies."""
    packet = frame.ip
    if packet is None:
        return True
    if not packet.checksum_ok:
        return False
    transport = packet.payload
    return getattr(transport, "checksum_ok", True)
