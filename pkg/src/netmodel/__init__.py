"""Hosts, switches, the router and the reference topology."""

from src.netmodel.arp import ArpEntry, ArpOrigin, ArpTable
from src.netmodel.host import Host, Interface, TcpHandler, TcpSocket, arp_process
from src.netmodel.router import ForwardAction, Router
from src.netmodel.switch import Switch, switch_forward
from src.netmodel.topology import (
    REFERENCE_HOSTS,
    ConfigConflictError,
    Topology,
    build_reference_topology,
)

__all__ = [
    "REFERENCE_HOSTS",
    "ArpEntry",
    "ArpOrigin",
    "ArpTable",
    "ConfigConflictError",
    "ForwardAction",
    "Host",
    "Interface",
    "Router",
    "Switch",
    "TcpHandler",
    "TcpSocket",
    "Topology",
    "arp_process",
    "build_reference_topology",
    "switch_forward",
]
