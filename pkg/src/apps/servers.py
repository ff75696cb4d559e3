"""Service installation on Service-LAN hosts and benign agent construction."""

from __future__ import annotations

import logging

from src.apps.base import AppLog, BaseAgent
from src.apps.ftp import FtpClient, FtpServerSession
from src.apps.http import HttpBrowser, HttpServerSession
from src.apps.ntp import NtpClient, NtpServer
from src.apps.ping import Ping
from src.apps.ssh import SshClient, SshServerSession
from src.engine import RngStream
from src.models import AgentKind, BenignAgentConfig, ServiceKind, ServicesConfig
from src.netmodel.host import Host
from src.netmodel.topology import Topology

logger = logging.getLogger(__name__)

AGENT_CLASSES: dict[AgentKind, type[BaseAgent]] = {
    AgentKind.HTTP_BROWSER: HttpBrowser,
    AgentKind.FTP_CLIENT: FtpClient,
    AgentKind.SSH_CLIENT: SshClient,
    AgentKind.NTP_CLIENT: NtpClient,
    AgentKind.PING: Ping,
}

# Service each agent kind needs on its target; Ping only needs the echo responder.
REQUIRED_SERVICE: dict[AgentKind, ServiceKind | None] = {
    AgentKind.HTTP_BROWSER: ServiceKind.HTTP,
    AgentKind.FTP_CLIENT: ServiceKind.FTP,
    AgentKind.SSH_CLIENT: ServiceKind.SSH,
    AgentKind.NTP_CLIENT: ServiceKind.NTP,
    AgentKind.PING: None,
}


class ServiceMismatchError(ValueError):
    """Raised when a lane targets a host that does not offer the needed service."""


def serve(host: Host, services: ServicesConfig, rng: RngStream) -> list[ServiceKind]:
    """Start listeners for every service registered on ``host``.

    Args:
        host: Host whose ``services`` table names what to run
        services: Credentials and session limits
        rng: Stream for server-side randomness (passive ports, key-exchange cookies)

    Returns:
        The services started
    """
    limits = {
        "max_half_open": services.max_half_open,
        "max_established": services.max_established,
    }
    started = []
    for port, kind in sorted(host.services.items()):
        if kind is ServiceKind.HTTP:
            host.tcp.listen(port, lambda sock: HttpServerSession(), **limits)
        elif kind is ServiceKind.FTP:
            host.tcp.listen(
                port,
                lambda sock: FtpServerSession(host, services.ftp_credentials, rng),
                **limits,
            )
        elif kind is ServiceKind.SSH:
            host.tcp.listen(
                port,
                lambda sock: SshServerSession(host.os_tag, services.ssh_credentials, rng),
                **limits,
            )
        elif kind is ServiceKind.NTP:
            NtpServer(host)
        started.append(kind)
    logger.debug(f"{host.name}: serving {', '.join(k.value for k in started)}")
    return started


def install_services(topology: Topology, services: ServicesConfig, seed: int) -> None:
    for name, host in topology.hosts.items():
        if host.services:
            serve(host, services, RngStream(seed, f"service:{name}"))


def run_benign_agent(
    config: BenignAgentConfig,
    rng: RngStream,
    *,
    topology: Topology,
    services: ServicesConfig,
    log: AppLog,
    agent_id: str | None = None,
    stop: int | None = None,
) -> BaseAgent:
    """Build a benign lane and schedule its first wakeup.

    Args:
        config: Lane description
        rng: The lane's own stream
        topology: Network the lane runs in
        services: Credentials benign clients log in with
        log: Shared application log
        agent_id: Identifier override (defaults to ``host:kind``)
        stop: Hard stop when the lane has none of its own

    Returns:
        The started agent

    Raises:
        ServiceMismatchError: If the target does not offer the lane's service
    """
    host = topology.host(config.host)
    target = topology.host(config.target)
    needed = REQUIRED_SERVICE[config.kind]
    if needed is not None and needed not in target.services.values():
        raise ServiceMismatchError(
            f"{config.kind.value} lane on {config.host}: {config.target} does not offer {needed.value}"
        )
    cls = AGENT_CLASSES[config.kind]
    kwargs = {}
    if cls is FtpClient:
        kwargs["credentials"] = services.ftp_credentials
    elif cls is SshClient:
        kwargs["credentials"] = services.ssh_credentials
    agent = cls(
        agent_id or f"{config.host}:{config.kind.value}",
        host,
        config.target,
        target.ip,
        rng,
        log,
        mean_interval=config.mean_interval,
        start=config.start,
        stop=config.stop if config.stop is not None else stop,
        **kwargs,
    )
    agent.start()
    return agent

