"""Link-layer and network-layer address types."""

from __future__ import annotations

from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network

Ipv4Address = IPv4Address
Cidr = IPv4Network


@dataclass(frozen=True, slots=True)
class MacAddress:
    """A 48-bit Ethernet address."""

    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 6:
            raise ValueError(f"MAC address needs 6 octets, got {len(self.octets)}")

    @classmethod
    def parse(cls, text: str) -> MacAddress:
        """Parse ``aa:bb:cc:dd:ee:ff`` (``-`` separators also accepted)."""
        parts = text.replace("-", ":").split(":")
        if len(parts) != 6:
            raise ValueError(f"invalid MAC address: {text!r}")
        return cls(bytes(int(part, 16) for part in parts))

    @classmethod
    def for_ip(cls, ip: IPv4Address) -> MacAddress:
        """Locally administered unicast address derived from an IPv4 address."""
        return cls(b"\x02\x00" + ip.packed)

    @property
    def is_broadcast(self) -> bool:
        return self.octets == b"\xff" * 6

    @property
    def is_multicast(self) -> bool:
        return bool(self.octets[0] & 0x01)

    @property
    def is_locally_administered(self) -> bool:
        return bool(self.octets[0] & 0x02)

    def __str__(self) -> str:
        return ":".join(f"{octet:02x}" for octet in self.octets)


BROADCAST_MAC = MacAddress(b"\xff" * 6)
ZERO_MAC = MacAddress(b"\x00" * 6)
