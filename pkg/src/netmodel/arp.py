"""ARP cache with deliberately poisonable semantics."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address

from src.engine import SimTime
from src.protocols.addresses import MacAddress
from src.protocols.packets import ArpMessage, ArpOp


class ArpOrigin(str, Enum):
    REQUEST = "Request"
    REPLY = "Reply"
    GRATUITOUS = "Gratuitous"


@dataclass(frozen=True, slots=True)
class ArpEntry:
    mac: MacAddress
    updated_at: SimTime
    origin: ArpOrigin


class ArpTable:
    """IP -> MAC bindings. Entries never expire and any ARP message overwrites them."""

    def __init__(self):
        self._entries: dict[IPv4Address, ArpEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, ip: IPv4Address) -> bool:
        return ip in self._entries

    def lookup(self, ip: IPv4Address) -> MacAddress | None:
        entry = self._entries.get(ip)
        return entry.mac if entry is not None else None

    def entry(self, ip: IPv4Address) -> ArpEntry | None:
        return self._entries.get(ip)

    def learn(self, message: ArpMessage, now: SimTime) -> None:
        """Record the sender binding of any ARP message, unconditionally."""
        if message.sender_ip == IPv4Address(0):
            return
        if message.is_gratuitous:
            origin = ArpOrigin.GRATUITOUS
        elif message.operation == ArpOp.IS_AT:
            origin = ArpOrigin.REPLY
        else:
            origin = ArpOrigin.REQUEST
        self._entries[message.sender_ip] = ArpEntry(message.sender_mac, now, origin)

    def set(self, ip: IPv4Address, mac: MacAddress, now: SimTime, origin: ArpOrigin) -> None:
        self._entries[ip] = ArpEntry(mac, now, origin)

    def items(self):
        return self._entries.items()
