"""Base abstract class for benign traffic agents."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Protocol

from src.engine import NS_PER_SEC, Event, EventKind, RngStream, SimTime
from src.models import LaneStats, Provenance
from src.netmodel.host import Host, TcpHandler, TcpSocket
from src.protocols.tcp import TcpNotice, TcpState

logger = logging.getLogger(__name__)

EXCHANGE_TIMEOUT = 10 * NS_PER_SEC


@dataclass(frozen=True, slots=True)
class ExchangeRecord:
    """One finished application exchange."""

    started_at: SimTime
    finished_at: SimTime
    agent_id: str
    kind: str
    target: str
    success: bool
    detail: str = ""


class AppLog:
    """Application log shared by every benign agent in a run."""

    def __init__(self):
        self.records: list[ExchangeRecord] = []
        self.attempted: Counter[str] = Counter()

    def __len__(self) -> int:
        return len(self.records)

    def started(self, kind: str) -> None:
        self.attempted[kind] += 1

    def record(self, record: ExchangeRecord) -> None:
        self.records.append(record)

    def for_agent(self, agent_id: str) -> list[ExchangeRecord]:
        return [r for r in self.records if r.agent_id == agent_id]

    def stats(self) -> dict[str, LaneStats]:
        """Attempt and outcome counts per agent kind."""
        stats: dict[str, LaneStats] = {}
        for kind, attempted in sorted(self.attempted.items()):
            stats[kind] = LaneStats(attempted=attempted)
        for r in self.records:
            lane = stats.setdefault(r.kind, LaneStats())
            if r.success:
                lane.succeeded += 1
            else:
                lane.failed += 1
        return stats

    def window(
        self, start: SimTime, end: SimTime, kind: str | None = None
    ) -> LaneStats:
        """Outcomes of exchanges started in ``[start, end)``."""
        lane = LaneStats()
        for r in self.records:
            if start <= r.started_at < end and (kind is None or r.kind == kind):
                lane.attempted += 1
                if r.success:
                    lane.succeeded += 1
                else:
                    lane.failed += 1
        return lane


class ExchangeOwner(Protocol):
    """Anything that runs exchanges: benign agents and the brute-forcer."""

    agent_id: str
    host: Host
    target_ip: IPv4Address
    rng: RngStream
    provenance: Provenance
    exchange_timeout: SimTime

    def exchange_finished(self, exchange: Exchange, success: bool, detail: str) -> None: ...


class Exchange:
    """One application exchange in flight: owns its timeout and its sockets."""

    def __init__(self, agent: ExchangeOwner):
        self.agent = agent
        self.started_at = agent.host.scheduler.now
        self.done = False
        self.sockets: list[TcpSocket] = []
        self.context: dict = {}
        self._timeout: Event | None = agent.host.scheduler.schedule_in(
            agent.exchange_timeout,
            lambda: self.finish(False, "timeout"),
            kind=EventKind.TIMER,
            note=f"{agent.agent_id}:timeout",
        )

    def connect(self, port: int, handler: TcpHandler) -> TcpSocket:
        agent = self.agent
        sock = agent.host.tcp.connect(
            agent.target_ip, port, handler, agent.provenance, rng=agent.rng
        )
        self.sockets.append(sock)
        return sock

    def finish(self, success: bool, detail: str = "", *, graceful: bool | None = None) -> None:
        """Record the outcome once and release whatever is still open.

        Open sockets are closed with FIN when ``graceful`` (default: on success)
        and reset otherwise.
        """
        graceful = success if graceful is None else graceful
        if self.done:
            return
        self.done = True
        scheduler = self.agent.host.scheduler
        scheduler.cancel(self._timeout)
        for sock in self.sockets:
            if sock.state not in (TcpState.CLOSED, TcpState.TIME_WAIT):
                if graceful:
                    sock.close()
                else:
                    sock.abort()
        self.agent.exchange_finished(self, success, detail)


class ExchangeHandler(TcpHandler):
    """TCP callbacks bound to an exchange; a connect failure ends it."""

    def __init__(self, exchange: Exchange):
        self.exchange = exchange

    def on_closed(self, sock: TcpSocket, notice: TcpNotice) -> None:
        if notice is TcpNotice.FAILED:
            self.exchange.finish(False, "service unavailable")
        elif notice is TcpNotice.RESET:
            self.exchange.finish(False, "connection reset")
        else:
            self.exchange.finish(False, "closed before completion")


class BaseAgent(ABC):
    """A benign lane: wakes at exponential intervals and runs one exchange per wakeup."""

    kind: str = "agent"

    def __init__(
        self,
        agent_id: str,
        host: Host,
        target_name: str,
        target_ip: IPv4Address,
        rng: RngStream,
        log: AppLog,
        *,
        mean_interval: SimTime,
        start: SimTime = 0,
        stop: SimTime | None = None,
    ):
        """Initialize the agent.

        Args:
            agent_id: Identifier stamped into frame provenance and the app log
            host: Host the agent runs on
            target_name: Name of the host offering the service
            target_ip: Address of that host
            rng: The agent's own stream
            log: Shared application log
            mean_interval: Mean of the exponential inter-arrival law
            start: First instant a wakeup may happen
            stop: No exchange starts at or after this instant
        """
        if mean_interval <= 0:
            raise ValueError(f"{agent_id}: mean interval must be positive")
        self.agent_id = agent_id
        self.host = host
        self.target_name = target_name
        self.target_ip = target_ip
        self.rng = rng
        self.log = log
        self.mean_interval = mean_interval
        self.start_at = start
        self.stop_at = stop
        self.exchange_timeout = EXCHANGE_TIMEOUT
        self.provenance = Provenance(agent_id)
        self.wakeups = 0
        self._failing = False

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.agent_id!r} -> {self.target_name})"

    def start(self) -> None:
        self._schedule_next(self.start_at)

    def _schedule_next(self, after: SimTime) -> None:
        at = after + self.rng.exponential_ns(self.mean_interval)
        if self.stop_at is not None and at >= self.stop_at:
            return
        self.host.scheduler.schedule(
            at, self._wakeup, kind=EventKind.AGENT_WAKEUP, note=self.agent_id
        )

    def _wakeup(self) -> None:
        self.wakeups += 1
        self._schedule_next(self.host.scheduler.now)
        self.log.started(self.kind)
        self.run_exchange(Exchange(self))

    @abstractmethod
    def run_exchange(self, exchange: Exchange) -> None:
        """Start one complete application exchange; it must end in ``exchange.finish``."""
        pass

    def exchange_finished(self, exchange: Exchange, success: bool, detail: str) -> None:
        now = self.host.scheduler.now
        self.log.record(
            ExchangeRecord(
                exchange.started_at, now, self.agent_id, self.kind, self.target_name, success, detail
            )
        )
        if not success and not self._failing:
            logger.warning(f"{self.agent_id}: {self.kind} to {self.target_name} failed ({detail})")
        elif success and self._failing:
            logger.info(f"{self.agent_id}: {self.kind} to {self.target_name} recovered")
        else:
            logger.debug(f"{self.agent_id}: {self.kind} success={success} {detail}")
        self._failing = not success
