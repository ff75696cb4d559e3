"""The reference three-LAN enterprise topology."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network

from src.engine import RngStream, Scheduler
from src.models import HostRole, OsTag, ServiceKind, TopologyConfig
from src.netmodel.host import Host, IngressQueue
from src.netmodel.router import Router
from src.netmodel.switch import Switch
from src.protocols.addresses import MacAddress

logger = logging.getLogger(__name__)

SERVICE_LAN = "service"
USER_LAN = "user"
SOC_LAN = "soc"

SUBNETS: dict[str, IPv4Network] = {
    SERVICE_LAN: IPv4Network("192.168.128.0/24"),
    USER_LAN: IPv4Network("192.168.132.0/24"),
    SOC_LAN: IPv4Network("192.168.134.0/24"),
}

SERVICE_PORTS: dict[ServiceKind, int] = {
    ServiceKind.FTP: 21,
    ServiceKind.SSH: 22,
    ServiceKind.HTTP: 80,
    ServiceKind.NTP: 123,
}

ROUTER_NAME = "router"
ATTACKER_NAME = "attacker"
MONITOR_NAME = "soc-monitor"


class ConfigConflictError(ValueError):
    """Raised when topology overrides produce duplicate or misplaced addresses."""


@dataclass(frozen=True, slots=True)
class HostSpec:
    role: HostRole
    os_tag: OsTag
    lan: str
    address: IPv4Address
    services: tuple[ServiceKind, ...] = ()


def _user(index: int, os_tag: OsTag) -> HostSpec:
    return HostSpec(HostRole.USER_HOST, os_tag, USER_LAN, IPv4Address(f"192.168.132.{9 + index}"))


REFERENCE_HOSTS: dict[str, HostSpec] = {
    "ftp-server": HostSpec(
        HostRole.FTP_SERVER, OsTag.UBUNTU, SERVICE_LAN, IPv4Address("192.168.128.10"),
        (ServiceKind.FTP,),
    ),
    "web-server": HostSpec(
        HostRole.WEB_SERVER, OsTag.UBUNTU, SERVICE_LAN, IPv4Address("192.168.128.20"),
        (ServiceKind.HTTP, ServiceKind.NTP),
    ),
    "admin-win": HostSpec(
        HostRole.ADMIN_HOST, OsTag.WINDOWS10, SERVICE_LAN, IPv4Address("192.168.128.30"),
        (ServiceKind.SSH,),
    ),
    "admin-ubuntu": HostSpec(
        HostRole.ADMIN_HOST, OsTag.UBUNTU, SERVICE_LAN, IPv4Address("192.168.128.31"),
        (ServiceKind.SSH,),
    ),
    "user-1": _user(1, OsTag.WINDOWS10),
    "user-2": _user(2, OsTag.WINDOWS10),
    "user-3": _user(3, OsTag.WINDOWS10),
    "user-4": _user(4, OsTag.UBUNTU),
    "user-5": _user(5, OsTag.UBUNTU),
    "user-6": _user(6, OsTag.UBUNTU),
    ATTACKER_NAME: HostSpec(HostRole.ATTACKER, OsTag.KALI, USER_LAN, IPv4Address("192.168.132.66")),
    MONITOR_NAME: HostSpec(HostRole.MONITOR, OsTag.KALI, SOC_LAN, IPv4Address("192.168.134.10")),
}

SERVER_ROLES = frozenset({HostRole.FTP_SERVER, HostRole.WEB_SERVER, HostRole.ADMIN_HOST})


@dataclass
class Topology:
    """The built network: one switch per LAN, one router, and the hosts."""

    scheduler: Scheduler
    subnets: dict[str, IPv4Network]
    switches: dict[str, Switch]
    router: Router
    hosts: dict[str, Host] = field(default_factory=dict)
    link_latency: int = 0

    @property
    def span_switch(self) -> Switch:
        return self.switches[SERVICE_LAN]

    @property
    def attacker(self) -> Host:
        return self.hosts[ATTACKER_NAME]

    @property
    def monitor(self) -> Host:
        return self.hosts[MONITOR_NAME]

    def host(self, name: str) -> Host:
        if name == ROUTER_NAME:
            return self.router
        return self.hosts[name]

    def ip_of(self, name: str) -> IPv4Address:
        return self.host(name).ip

    def host_by_ip(self, ip: IPv4Address) -> Host | None:
        for host in (self.router, *self.hosts.values()):
            if host.owns(ip):
                return host
        return None

    def router_ip(self, lan: str) -> IPv4Address:
        return next(i.ip for i in self.router.interfaces if i.subnet == self.subnets[lan])

    def lan_of(self, name: str) -> str:
        return REFERENCE_HOSTS[name].lan

    def services(self) -> dict[str, dict[int, ServiceKind]]:
        return {name: dict(h.services) for name, h in self.hosts.items() if h.services}

    def hosts_in(self, lan: str, role: HostRole | None = None) -> list[Host]:
        subnet = self.subnets[lan]
        return [
            h
            for h in self.hosts.values()
            if h.ip in subnet and (role is None or h.role is role)
        ]


def _resolve_addresses(config: TopologyConfig) -> dict[str, IPv4Address]:
    addresses = {name: spec.address for name, spec in REFERENCE_HOSTS.items()}
    for name, ip in config.addresses.items():
        if name not in REFERENCE_HOSTS:
            raise ConfigConflictError(f"address override for unknown host '{name}'")
        addresses[name] = ip

    taken: dict[IPv4Address, str] = {}
    for lan, subnet in SUBNETS.items():
        router_ip = subnet.network_address + 1
        taken[router_ip] = f"{ROUTER_NAME} ({lan})"
    for name, ip in addresses.items():
        subnet = SUBNETS[REFERENCE_HOSTS[name].lan]
        if ip not in subnet or ip in (subnet.network_address, subnet.broadcast_address):
            raise ConfigConflictError(f"{name}: address {ip} is not a host address of {subnet}")
        if ip in taken:
            raise ConfigConflictError(f"{name}: address {ip} already assigned to {taken[ip]}")
        taken[ip] = name
    return addresses


def build_reference_topology(
    config: TopologyConfig | None = None,
    scheduler: Scheduler | None = None,
    seed: int = 0,
) -> Topology:
    """Build the three-LAN network with router, switches and hosts.

    Args:
        config: Address and capacity overrides (defaults when None)
        scheduler: Engine to drive the network (a fresh one when None)
        seed: Root seed for every host's RNG stream

    Returns:
        The wired topology; the Service-LAN switch already has its SPAN port

    Raises:
        ConfigConflictError: If overrides duplicate or misplace an address
    """
    config = config or TopologyConfig()
    scheduler = scheduler or Scheduler()
    addresses = _resolve_addresses(config)

    switches = {lan: Switch(f"sw-{lan}", scheduler, config.link_latency) for lan in SUBNETS}
    router = Router(
        ROUTER_NAME,
        OsTag.UBUNTU,
        HostRole.ROUTER,
        scheduler,
        RngStream(seed, f"host:{ROUTER_NAME}"),
        rst_rate_limit=config.rst_rate_limit,
    )
    for lan, subnet in SUBNETS.items():
        ip = subnet.network_address + 1
        interface = router.add_interface(MacAddress.for_ip(ip), ip, subnet)
        interface.switch = switches[lan]
        interface.port = switches[lan].attach(interface)

    topology = Topology(scheduler, dict(SUBNETS), switches, router, link_latency=config.link_latency)
    for name, spec in REFERENCE_HOSTS.items():
        host = Host(
            name,
            spec.os_tag,
            spec.role,
            scheduler,
            RngStream(seed, f"host:{name}"),
            rst_rate_limit=config.rst_rate_limit,
        )
        ip = addresses[name]
        subnet = SUBNETS[spec.lan]
        interface = host.add_interface(MacAddress.for_ip(ip), ip, subnet)
        interface.switch = switches[spec.lan]
        interface.port = switches[spec.lan].attach(interface)
        if spec.role is not HostRole.MONITOR:
            host.gateway = subnet.network_address + 1
        for service in spec.services:
            host.services[SERVICE_PORTS[service]] = service
        if spec.role in SERVER_ROLES and config.server_capacity_pps is not None:
            host.ingress = IngressQueue(scheduler, config.server_capacity_pps, config.server_backlog)
        topology.hosts[name] = host

    switches[SERVICE_LAN].add_span_port(MONITOR_NAME)
    logger.debug(
        f"Built topology: {len(topology.hosts)} hosts, "
        f"{', '.join(str(s) for s in SUBNETS.values())}"
    )
    return topology
