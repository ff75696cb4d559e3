"""Learning Ethernet switch with an optional SPAN (mirror) port."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

from src.engine import EventKind, Scheduler, SimTime
from src.protocols.addresses import MacAddress
from src.protocols.packets import EthernetFrame

if TYPE_CHECKING:
    from src.netmodel.host import Interface

logger = logging.getLogger(__name__)

SpanSink = Callable[[EthernetFrame, SimTime], None]


@dataclass(slots=True)
class Port:
    index: int
    interface: Interface | None = None


def switch_forward(
    switch: Switch, ingress_port: int, frame: EthernetFrame
) -> list[tuple[int, EthernetFrame]]:
    """Decide where ``frame`` goes and update the learning table.

    Known unicast goes to its port, anything else floods to every port but
    the ingress. Every forwarded frame also yields one identical copy for the
    SPAN port. Frames entering on the SPAN port are dropped without learning.
    """
    if ingress_port == switch.span_port:
        return []
    if not frame.src.is_multicast:
        switch.mac_table[frame.src] = ingress_port

    egress = switch.mac_table.get(frame.dst) if not frame.dst.is_multicast else None
    if egress is not None:
        if egress == ingress_port:
            return []
        deliveries = [(egress, frame)]
    else:
        deliveries = [
            (port.index, frame)
            for port in switch.ports
            if port.index != ingress_port and port.index != switch.span_port
        ]
    if switch.span_port is not None:
        deliveries.append((switch.span_port, frame))
    return deliveries


class Switch:
    """One LAN's switch. The SPAN port is egress-only."""

    def __init__(self, name: str, scheduler: Scheduler, latency: SimTime):
        self.name = name
        self.scheduler = scheduler
        self.latency = latency
        self.ports: list[Port] = []
        self.mac_table: dict[MacAddress, int] = {}
        self.span_port: int | None = None
        self.span_consumer: str | None = None
        self._span_sinks: list[SpanSink] = []
        self.frames_switched = 0
        self.span_copies = 0

    def __repr__(self) -> str:
        return f"Switch({self.name!r}, ports={len(self.ports)}, span={self.span_port})"

    def attach(self, interface: Interface) -> int:
        port = Port(len(self.ports), interface)
        self.ports.append(port)
        return port.index

    def add_span_port(self, consumer: str | None = None) -> int:
        """Add the egress-only mirror port; ``consumer`` names the host cabled to it."""
        port = Port(len(self.ports))
        self.ports.append(port)
        self.span_port = port.index
        self.span_consumer = consumer
        return port.index

    def add_span_sink(self, sink: SpanSink) -> None:
        self._span_sinks.append(sink)

    def receive(self, ingress_port: int, frame: EthernetFrame) -> None:
        """Handle a frame arriving on ``ingress_port`` at the current instant."""
        deliveries = switch_forward(self, ingress_port, frame)
        if not deliveries:
            return
        self.frames_switched += 1
        now = self.scheduler.now
        for port_index, out in deliveries:
            if port_index == self.span_port:
                self.span_copies += 1
                for sink in self._span_sinks:
                    sink(out, now)
                continue
            interface = self.ports[port_index].interface
            if interface is not None:
                self.scheduler.schedule(
                    now + self.latency,
                    _deliver(interface, out),
                    kind=EventKind.FRAME_DELIVERY,
                )


def _deliver(interface: Interface, frame: EthernetFrame) -> Callable[[], None]:
    return lambda: interface.host.receive_frame(interface, frame)
