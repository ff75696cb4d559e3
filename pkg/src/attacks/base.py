"""The attacker host and the phase machinery every attack runs on."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable
from ipaddress import IPv4Address

from src.engine import RngStream, Scheduler, SimTime
from src.models import LabelTag, PhaseOutcome, Provenance
from src.netmodel.host import Host, Interface
from src.netmodel.topology import Topology
from src.protocols.addresses import MacAddress
from src.protocols.packets import ArpMessage, EtherType, Ipv4Packet

logger = logging.getLogger(__name__)


class Attacker:
    """The Kali host on the User LAN plus the state attacks share.

    Frames the attacker's own stack emits (ARP answers, RSTs to stray
    SYN|ACKs) carry the label of the phase that began last.
    """

    def __init__(self, topology: Topology, seed: int, initial_label: LabelTag = LabelTag.BENIGN):
        self.topology = topology
        self.host: Host = topology.attacker
        self.scheduler: Scheduler = topology.scheduler
        self.rng = RngStream(seed, f"attacker:{self.host.name}")
        self.interface: Interface = self.host.interfaces[0]
        self.relay = None
        self.scan_report = None
        self.label = initial_label
        self.set_label(initial_label)

    @property
    def ip(self) -> IPv4Address:
        return self.interface.ip

    @property
    def mac(self) -> MacAddress:
        return self.interface.mac

    @property
    def now(self) -> SimTime:
        return self.scheduler.now

    def set_label(self, label: LabelTag) -> None:
        self.label = label
        self.host.provenance = Provenance(self.host.name, label)

    def provenance(self, label: LabelTag | None = None) -> Provenance:
        return Provenance(self.host.name, label or self.label)

    def send_ip(self, packet: Ipv4Packet, label: LabelTag) -> bool:
        return self.host.send_ip(packet, self.provenance(label))

    def send_arp(self, dst: MacAddress, message: ArpMessage, label: LabelTag) -> None:
        self.host.send_frame(self.interface, dst, EtherType.ARP, message, self.provenance(label))


class AttackPhase(ABC):
    """One labelled stretch of attacker activity.

    Subclasses emit traffic between ``begin`` and ``finish``; the runner
    chains the next phase from the instant ``finish`` is called.
    """

    label: LabelTag
    kind: str

    def __init__(self, attacker: Attacker):
        self.attacker = attacker
        self.started_at: SimTime | None = None
        self.ended_at: SimTime | None = None
        self.frames_emitted = 0
        self.details: dict = {}
        self._on_end: list[Callable[[AttackPhase], None]] = []

    def __repr__(self) -> str:
        return f"{type(self).__name__}(label={self.label.value}, start={self.started_at})"

    @property
    def running(self) -> bool:
        return self.started_at is not None and self.ended_at is None

    def on_end(self, callback: Callable[[AttackPhase], None]) -> None:
        self._on_end.append(callback)

    def begin(self) -> None:
        self.started_at = self.attacker.now
        self.attacker.set_label(self.label)
        logger.info(f"Phase {self.label.value} ({self.kind}) started at {self.started_at} ns")
        self.start()

    @abstractmethod
    def start(self) -> None:
        """Schedule the phase's traffic from the current instant."""
        pass

    def finish(self) -> None:
        if self.ended_at is not None:
            return
        self.ended_at = self.attacker.now
        logger.info(
            f"Phase {self.label.value} ended at {self.ended_at} ns, "
            f"{self.frames_emitted} frames emitted"
        )
        for callback in self._on_end:
            callback(self)

    def outcome(self) -> PhaseOutcome:
        return PhaseOutcome(
            label=self.label,
            kind=self.kind,
            start_ns=self.started_at if self.started_at is not None else -1,
            end_ns=self.ended_at,
            frames_emitted=self.frames_emitted,
            details=dict(self.details),
        )


class PhaseRunner:
    """Starts phases at absolute instants or after the previous phase ends.

    ``plan`` holds (phase, absolute start or None, sleep after previous end).
    """

    def __init__(self, scheduler: Scheduler, end_of_run: SimTime):
        self.scheduler = scheduler
        self.end_of_run = end_of_run
        self.phases: list[AttackPhase] = []
        self._plan: list[tuple[AttackPhase, SimTime | None, SimTime]] = []

    def add(self, phase: AttackPhase, start: SimTime | None, sleep_before: SimTime = 0) -> None:
        self.phases.append(phase)
        self._plan.append((phase, start, sleep_before))

    def arm(self) -> None:
        previous: AttackPhase | None = None
        for phase, start, sleep_before in self._plan:
            if start is not None:
                self._schedule(phase, start)
            elif previous is None:
                self._schedule(phase, sleep_before)
            else:
                previous.on_end(self._chain(phase, sleep_before))
            previous = phase

    def _chain(self, phase: AttackPhase, sleep_before: SimTime) -> Callable[[AttackPhase], None]:
        def start_after(ended: AttackPhase) -> None:
            self._schedule(phase, ended.ended_at + sleep_before)

        return start_after

    def _schedule(self, phase: AttackPhase, at: SimTime) -> None:
        if at >= self.end_of_run:
            logger.warning(f"Phase {phase.label.value} would start at {at} ns, after the run ends")
            return
        self.scheduler.schedule(
            max(at, self.scheduler.now), phase.begin, note=f"phase:{phase.label.value}"
        )

    def outcomes(self) -> list[PhaseOutcome]:
        return [phase.outcome() for phase in self.phases]
