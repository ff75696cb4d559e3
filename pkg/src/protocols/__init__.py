"""Wire codecs and the TCP state machine."""

from src.protocols.addresses import BROADCAST_MAC, Cidr, Ipv4Address, MacAddress
from src.protocols.checksum import inet_checksum
from src.protocols.packets import (
    ArpMessage,
    ArpOp,
    EthernetFrame,
    EtherType,
    IcmpMessage,
    IcmpType,
    IgmpMessage,
    IgmpType,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
    TruncatedFrameError,
    UdpDatagram,
    decode_frame,
    encode_frame,
)
from src.protocols.tcp import TcpConnection, TcpState, tcp_step

__all__ = [
    "BROADCAST_MAC",
    "ArpMessage",
    "ArpOp",
    "Cidr",
    "EtherType",
    "EthernetFrame",
    "IcmpMessage",
    "IcmpType",
    "IgmpMessage",
    "IgmpType",
    "IpProtocol",
    "Ipv4Address",
    "Ipv4Packet",
    "MacAddress",
    "TcpConnection",
    "TcpFlags",
    "TcpSegment",
    "TcpState",
    "TruncatedFrameError",
    "UdpDatagram",
    "decode_frame",
    "encode_frame",
    "inet_checksum",
    "tcp_step",
]
