"""Simulated host: interfaces, ARP resolution, IPv4 delivery and a small TCP/UDP stack."""

from __future__ import annotations

import logging
from collections import Counter, deque
from collections.abc import Callable
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network

from src.engine import NS_PER_SEC, Event, EventKind, RngStream, Scheduler, SimTime
from src.models import HostRole, OsTag, Provenance, ServiceKind
from src.netmodel.arp import ArpTable
from src.netmodel.switch import Switch
from src.protocols.addresses import BROADCAST_MAC, ZERO_MAC, MacAddress
from src.protocols.packets import (
    ArpMessage,
    ArpOp,
    EthernetFrame,
    EtherType,
    IcmpMessage,
    IcmpType,
    IcmpUnreachableCode,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
    UdpDatagram,
    encode_ipv4,
)
from src.protocols.tcp import (
    SYN_RETRY_WAITS,
    Abort,
    Close,
    Listen,
    Open,
    Send,
    StepResult,
    TcpConnection,
    TcpNotice,
    TcpState,
    TimerKind,
    Timeout,
    reset_for,
)

logger = logging.getLogger(__name__)

ARP_TIMEOUT = 1 * NS_PER_SEC
ARP_ATTEMPTS = 2  # First request plus one retry.
ARP_QUEUE_LIMIT = 64

HANDSHAKE_TIMEOUT = 3 * NS_PER_SEC
TIME_WAIT_DURATION = 60 * NS_PER_SEC
LINGER_TIMEOUT = 30 * NS_PER_SEC

EPHEMERAL_PORTS = {
    OsTag.WINDOWS10: (49152, 65535),
    OsTag.UBUNTU: (32768, 60999),
    OsTag.KALI: (32768, 60999),
}

LINGERING = frozenset(
    {TcpState.FIN_WAIT_1, TcpState.FIN_WAIT_2, TcpState.CLOSING, TcpState.LAST_ACK}
)

# Raw receive hook: returns True when it consumed the frame.
FrameTap = Callable[["Interface", EthernetFrame], bool]


@dataclass(slots=True)
class Interface:
    host: Host
    mac: MacAddress
    ip: IPv4Address
    subnet: IPv4Network
    switch: Switch | None = None
    port: int | None = None

    @property
    def link_id(self) -> str:
        return f"{self.switch.name}:{self.port}" if self.switch is not None else "unattached"

    def transmit(self, frame: EthernetFrame) -> None:
        """Put a frame on the link toward the switch."""
        if self.switch is None:
            return
        switch, port = self.switch, self.port
        self.host.counters["frames_sent"] += 1
        self.host.scheduler.schedule_in(
            switch.latency,
            lambda: switch.receive(port, frame),
            kind=EventKind.FRAME_DELIVERY,
        )


class TokenBucket:
    """Rate limiter refilled continuously on the simulation clock."""

    def __init__(self, rate_per_sec: int):
        self.rate = rate_per_sec
        self.tokens = float(rate_per_sec)
        self.updated: SimTime = 0

    def allow(self, now: SimTime) -> bool:
        self.tokens = min(float(self.rate), self.tokens + (now - self.updated) * self.rate / NS_PER_SEC)
        self.updated = now
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


class IngressQueue:
    """Single-server FIFO modelling a host's packet processing capacity."""

    def __init__(self, scheduler: Scheduler, rate_pps: int, backlog: int):
        self.scheduler = scheduler
        self.service_time = NS_PER_SEC // rate_pps
        self.backlog = backlog
        self._completions: deque[SimTime] = deque()
        self._busy_until: SimTime = 0
        self.accepted = 0
        self.dropped = 0

    def offer(self, action: Callable[[], None]) -> bool:
        now = self.scheduler.now
        while self._completions and self._completions[0] <= now:
            self._completions.popleft()
        if len(self._completions) >= self.backlog:
            self.dropped += 1
            return False
        done = max(now, self._busy_until) + self.service_time
        self._busy_until = done
        self._completions.append(done)
        self.accepted += 1
        self.scheduler.schedule(done, action, kind=EventKind.TIMER, note="ingress")
        return True


@dataclass(slots=True)
class _PendingResolution:
    interface: Interface
    queue: list[tuple[Ipv4Packet, Provenance]] = field(default_factory=list)
    attempts: int = 0
    timer: Event | None = None


class TcpHandler:
    """Application callbacks for one TCP connection. Override what you need."""

    def on_established(self, sock: TcpSocket) -> None:
        pass

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        pass

    def on_peer_closed(self, sock: TcpSocket) -> None:
        pass

    def on_closed(self, sock: TcpSocket, notice: TcpNotice) -> None:
        pass


@dataclass(slots=True, eq=False)
class Listener:
    port: int
    factory: Callable[[TcpSocket], TcpHandler]
    max_half_open: int = 64
    max_established: int = 64
    half_open: int = 0
    established: int = 0
    dropped_syns: int = 0


@dataclass(slots=True, eq=False)
class TcpSocket:
    stack: TcpStack
    conn: TcpConnection
    handler: TcpHandler
    provenance: Provenance
    listener: Listener | None = None
    accounted: str | None = None  # "half-open" or "established" while held by a listener.
    timer: Event | None = None
    syn_attempt: int = 0
    reported_closed: bool = False
    context: dict = field(default_factory=dict)

    @property
    def state(self) -> TcpState:
        return self.conn.state

    @property
    def key(self) -> tuple[int, IPv4Address, int]:
        return (self.conn.local_port, self.conn.remote_ip, self.conn.remote_port)

    def send(self, data: bytes) -> bool:
        if self.conn.state not in (TcpState.ESTABLISHED, TcpState.CLOSE_WAIT):
            return False
        self.stack.apply(self, self.conn.step(Send(data)))
        return True

    def close(self) -> None:
        self.stack.apply(self, self.conn.step(Close()))

    def abort(self) -> None:
        self.stack.apply(self, self.conn.step(Abort()))


class TcpStack:
    """Connection table, listeners and timers for one host."""

    def __init__(self, host: Host):
        self.host = host
        self.connections: dict[tuple[int, IPv4Address, int], TcpSocket] = {}
        self.listeners: dict[int, Listener] = {}
        low, high = EPHEMERAL_PORTS[host.os_tag]
        self._port_range = (low, high)
        self._next_port = low + host.rng.draw(high - low + 1)

    def listen(
        self,
        port: int,
        factory: Callable[[TcpSocket], TcpHandler],
        *,
        max_half_open: int = 64,
        max_established: int = 64,
    ) -> Listener:
        listener = Listener(port, factory, max_half_open, max_established)
        self.listeners[port] = listener
        return listener

    def _ephemeral_port(self, remote_ip: IPv4Address, remote_port: int) -> int:
        low, high = self._port_range
        for _ in range(high - low + 1):
            port = self._next_port
            self._next_port = low if port >= high else port + 1
            if (port, remote_ip, remote_port) not in self.connections:
                return port
        raise RuntimeError(f"{self.host.name}: ephemeral ports exhausted")

    def connect(
        self,
        remote_ip: IPv4Address,
        remote_port: int,
        handler: TcpHandler,
        provenance: Provenance | None = None,
        rng: RngStream | None = None,
    ) -> TcpSocket:
        """Active open toward ``remote_ip:remote_port``.

        The ISN is drawn from ``rng`` when given, else from the host stream.
        """
        local_port = self._ephemeral_port(remote_ip, remote_port)
        conn = TcpConnection(
            self.host.source_ip_for(remote_ip),
            local_port,
            remote_ip,
            remote_port,
            iss=(rng or self.host.rng).draw(2**32),
        )
        sock = TcpSocket(self, conn, handler, provenance or self.host.provenance)
        self.connections[sock.key] = sock
        self.host.counters["tcp_active_opens"] += 1
        self.apply(sock, conn.step(Open()))
        return sock

    def receive(self, packet: Ipv4Packet) -> None:
        seg: TcpSegment = packet.payload
        key = (seg.dst_port, packet.src, seg.src_port)
        sock = self.connections.get(key)
        if sock is not None:
            self.apply(sock, sock.conn.step(seg))
            return

        listener = self.listeners.get(seg.dst_port)
        if (
            listener is not None
            and seg.flags & TcpFlags.SYN
            and not seg.flags & (TcpFlags.ACK | TcpFlags.RST)
        ):
            if (
                listener.half_open >= listener.max_half_open
                or listener.established >= listener.max_established
            ):
                # Backlog overflow: the SYN is silently ignored.
                listener.dropped_syns += 1
                self.host.counters["syn_dropped_session_limit"] += 1
                return
            conn = TcpConnection(
                packet.dst,
                seg.dst_port,
                packet.src,
                seg.src_port,
                iss=self.host.rng.draw(2**32),
            )
            conn.step(Listen())
            sock = TcpSocket(self, conn, TcpHandler(), self.host.provenance, listener=listener)
            sock.handler = listener.factory(sock)
            sock.accounted = "half-open"
            listener.half_open += 1
            self.connections[key] = sock
            self.apply(sock, conn.step(seg))
            return

        reply = reset_for(seg)
        if reply is None:
            return
        if not self.host.rst_budget.allow(self.host.scheduler.now):
            self.host.counters["rst_rate_limited"] += 1
            return
        self.host.counters["rst_sent_unknown"] += 1
        self.host.send_ip(
            self.host.make_packet(packet.src, IpProtocol.TCP, reply, src=packet.dst)
        )

    def apply(self, sock: TcpSocket, result: StepResult) -> None:
        """Emit a step's segments, run callbacks and re-arm timers."""
        conn = sock.conn
        for seg in result.segments:
            packet = self.host.make_packet(conn.remote_ip, IpProtocol.TCP, seg, src=conn.local_ip)
            self.host.send_ip(packet, sock.provenance)

        notices = result.notices
        if TcpNotice.ESTABLISHED in notices:
            listener = sock.listener
            if listener is not None and sock.accounted == "half-open":
                listener.half_open -= 1
                listener.established += 1
                sock.accounted = "established"
            sock.handler.on_established(sock)
        if result.data:
            sock.handler.on_data(sock, result.data)
        if TcpNotice.PEER_CLOSED in notices and conn.state is not TcpState.TIME_WAIT:
            sock.handler.on_peer_closed(sock)

        self._rearm(sock, result)

        if conn.state in (TcpState.CLOSED, TcpState.TIME_WAIT):
            self._release(sock, notices)
        if conn.state is TcpState.CLOSED:
            self.connections.pop(sock.key, None)

    def _rearm(self, sock: TcpSocket, result: StepResult) -> None:
        state = sock.conn.state
        scheduler = self.host.scheduler
        if state is TcpState.SYN_SENT:
            if any(seg.flags & TcpFlags.SYN for seg in result.segments):
                scheduler.cancel(sock.timer)
                wait = SYN_RETRY_WAITS[min(sock.syn_attempt, len(SYN_RETRY_WAITS) - 1)]
                sock.syn_attempt += 1
                sock.timer = self._timer(sock, TimerKind.SYN_RETRY, wait * NS_PER_SEC)
            return
        kind = timer_for_state(state)
        if kind is None:
            scheduler.cancel(sock.timer)
            sock.timer = None
            return
        if sock.context.get("_timer_state") == state or (
            kind is TimerKind.LINGER and sock.context.get("_timer_kind") is TimerKind.LINGER
        ):
            return
        scheduler.cancel(sock.timer)
        delay = {
            TimerKind.HANDSHAKE: HANDSHAKE_TIMEOUT,
            TimerKind.TIME_WAIT: TIME_WAIT_DURATION,
            TimerKind.LINGER: LINGER_TIMEOUT,
        }[kind]
        sock.timer = self._timer(sock, kind, delay)
        sock.context["_timer_state"] = state
        sock.context["_timer_kind"] = kind

    def _timer(self, sock: TcpSocket, kind: TimerKind, delay: SimTime) -> Event:
        def fire():
            sock.timer = None
            self.apply(sock, sock.conn.step(Timeout(kind)))

        return self.host.scheduler.schedule_in(delay, fire, note=f"tcp-{kind.value}")

    def _release(self, sock: TcpSocket, notices: list[TcpNotice]) -> None:
        listener = sock.listener
        if listener is not None and sock.accounted is not None:
            if sock.accounted == "half-open":
                listener.half_open -= 1
            else:
                listener.established -= 1
            sock.accounted = None
        if sock.reported_closed:
            return
        sock.reported_closed = True
        reason = next(
            (n for n in (TcpNotice.RESET, TcpNotice.FAILED) if n in notices), TcpNotice.CLOSED
        )
        sock.handler.on_closed(sock, reason)


def timer_for_state(state: TcpState) -> TimerKind | None:
    if state is TcpState.SYN_RECEIVED:
        return TimerKind.HANDSHAKE
    if state is TcpState.TIME_WAIT:
        return TimerKind.TIME_WAIT
    if state in LINGERING:
        return TimerKind.LINGER
    return None


UdpHandler = Callable[[Ipv4Packet, UdpDatagram], None]
IcmpListener = Callable[[Ipv4Packet], None]


class Host:
    """An end system on one or more LANs."""

    forwarding = False

    def __init__(
        self,
        name: str,
        os_tag: OsTag,
        role: HostRole,
        scheduler: Scheduler,
        rng: RngStream,
        *,
        rst_rate_limit: int = 100,
    ):
        self.name = name
        self.os_tag = os_tag
        self.role = role
        self.default_ttl = os_tag.default_ttl
        self.scheduler = scheduler
        self.rng = rng
        self.interfaces: list[Interface] = []
        self.services: dict[int, ServiceKind] = {}
        self.arp_table = ArpTable()
        self.gateway: IPv4Address | None = None
        self.provenance = Provenance(name)
        self.counters: Counter[str] = Counter()
        self.taps: list[FrameTap] = []
        self.icmp_listeners: list[IcmpListener] = []
        self.udp_bindings: dict[int, UdpHandler] = {}
        self.ingress: IngressQueue | None = None
        self.rst_budget = TokenBucket(rst_rate_limit)
        self._pending: dict[IPv4Address, _PendingResolution] = {}
        self._ip_id = rng.draw(2**16)
        self._udp_port = 40000 + rng.draw(20000)
        self.tcp = TcpStack(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, {self.os_tag.value}, {self.ip})"

    # --- addressing -----------------------------------------------------------

    def add_interface(self, mac: MacAddress, ip: IPv4Address, subnet: IPv4Network) -> Interface:
        interface = Interface(self, mac, ip, subnet)
        self.interfaces.append(interface)
        return interface

    @property
    def ip(self) -> IPv4Address | None:
        return self.interfaces[0].ip if self.interfaces else None

    @property
    def mac(self) -> MacAddress | None:
        return self.interfaces[0].mac if self.interfaces else None

    def owns(self, ip: IPv4Address) -> bool:
        return any(interface.ip == ip for interface in self.interfaces)

    def route(self, dst: IPv4Address) -> tuple[Interface, IPv4Address] | None:
        """Egress interface and next hop for ``dst``."""
        for interface in self.interfaces:
            if dst in interface.subnet:
                return interface, dst
        if self.gateway is not None:
            for interface in self.interfaces:
                if self.gateway in interface.subnet:
                    return interface, self.gateway
        return None

    def source_ip_for(self, dst: IPv4Address) -> IPv4Address:
        found = self.route(dst)
        return found[0].ip if found is not None else self.interfaces[0].ip

    def next_ip_id(self) -> int:
        self._ip_id = (self._ip_id + 1) & 0xFFFF
        return self._ip_id

    def make_packet(
        self,
        dst: IPv4Address,
        protocol: int,
        payload,
        *,
        src: IPv4Address | None = None,
        ttl: int | None = None,
    ) -> Ipv4Packet:
        return Ipv4Packet(
            src=src if src is not None else self.source_ip_for(dst),
            dst=dst,
            protocol=protocol,
            payload=payload,
            ttl=ttl if ttl is not None else self.default_ttl,
            identification=self.next_ip_id(),
            dont_fragment=protocol == IpProtocol.TCP,
        )

    # --- transmit -------------------------------------------------------------

    def send_ip(self, packet: Ipv4Packet, provenance: Provenance | None = None) -> bool:
        """Route and transmit ``packet``, resolving the next hop over ARP if needed."""
        provenance = provenance or self.provenance
        found = self.route(packet.dst)
        if found is None:
            self.counters["no_route"] += 1
            return False
        interface, next_hop = found
        if packet.dst == interface.subnet.broadcast_address:
            self.send_frame(interface, BROADCAST_MAC, EtherType.IPV4, packet, provenance)
            return True
        mac = self.arp_table.lookup(next_hop)
        if mac is not None:
            self.send_frame(interface, mac, EtherType.IPV4, packet, provenance)
            return True
        self._queue_for_resolution(interface, next_hop, packet, provenance)
        return True

    def send_frame(
        self,
        interface: Interface,
        dst: MacAddress,
        ethertype: int,
        payload: ArpMessage | Ipv4Packet,
        provenance: Provenance | None = None,
        *,
        src: MacAddress | None = None,
    ) -> None:
        frame = EthernetFrame(
            dst, src or interface.mac, ethertype, payload, meta=provenance or self.provenance
        )
        interface.transmit(frame)

    def _queue_for_resolution(
        self,
        interface: Interface,
        next_hop: IPv4Address,
        packet: Ipv4Packet,
        provenance: Provenance,
    ) -> None:
        pending = self._pending.get(next_hop)
        if pending is None:
            pending = _PendingResolution(interface)
            self._pending[next_hop] = pending
            self._request_resolution(next_hop, pending)
        if len(pending.queue) >= ARP_QUEUE_LIMIT:
            self.counters["arp_queue_overflow"] += 1
            return
        pending.queue.append((packet, provenance))

    def _request_resolution(self, next_hop: IPv4Address, pending: _PendingResolution) -> None:
        pending.attempts += 1
        self.send_arp_request(pending.interface, next_hop)
        pending.timer = self.scheduler.schedule_in(
            ARP_TIMEOUT, lambda: self._resolution_timeout(next_hop), note="arp-timeout"
        )

    def _resolution_timeout(self, next_hop: IPv4Address) -> None:
        pending = self._pending.get(next_hop)
        if pending is None:
            return
        if pending.attempts < ARP_ATTEMPTS:
            self._request_resolution(next_hop, pending)
            return
        del self._pending[next_hop]
        self.counters["arp_failures"] += 1
        self.resolution_failed(next_hop, pending.queue)

    def resolution_failed(
        self, next_hop: IPv4Address, queue: list[tuple[Ipv4Packet, Provenance]]
    ) -> None:
        """Hook for packets dropped after ARP gave up."""
        self.counters["arp_dropped_packets"] += len(queue)

    @property
    def pending_packets(self) -> int:
        return sum(len(p.queue) for p in self._pending.values())

    def send_arp_request(self, interface: Interface, target_ip: IPv4Address) -> None:
        message = ArpMessage(ArpOp.WHO_HAS, interface.mac, interface.ip, ZERO_MAC, target_ip)
        self.send_frame(interface, BROADCAST_MAC, EtherType.ARP, message)

    def _flush_pending(self, ip: IPv4Address) -> None:
        pending = self._pending.pop(ip, None)
        if pending is None:
            return
        self.scheduler.cancel(pending.timer)
        mac = self.arp_table.lookup(ip)
        for packet, provenance in pending.queue:
            self.send_frame(pending.interface, mac, EtherType.IPV4, packet, provenance)

    # --- receive --------------------------------------------------------------

    def receive_frame(self, interface: Interface, frame: EthernetFrame) -> None:
        """Entry point for frames delivered by the switch."""
        if frame.dst != interface.mac and not frame.dst.is_broadcast:
            self.counters["frames_not_for_us"] += 1
            return
        self.counters["frames_received"] += 1
        for tap in self.taps:
            if tap(interface, frame):
                return
        payload = frame.payload
        if isinstance(payload, ArpMessage):
            self.arp_process(interface, payload)
        elif isinstance(payload, Ipv4Packet):
            if self.ingress is not None:
                if not self.ingress.offer(lambda: self.handle_ip(interface, frame)):
                    self.counters["ingress_dropped"] += 1
            else:
                self.handle_ip(interface, frame)

    def arp_process(self, interface: Interface, message: ArpMessage) -> ArpMessage | None:
        """Learn the sender binding and answer who-has for our own address."""
        self.arp_table.learn(message, self.scheduler.now)
        self._flush_pending(message.sender_ip)
        if message.operation == ArpOp.WHO_HAS and message.target_ip == interface.ip:
            reply = ArpMessage(
                ArpOp.IS_AT, interface.mac, interface.ip, message.sender_mac, message.sender_ip
            )
            self.send_frame(interface, message.sender_mac, EtherType.ARP, reply)
            return reply
        return None

    def handle_ip(self, interface: Interface, frame: EthernetFrame) -> None:
        packet: Ipv4Packet = frame.payload
        if self.owns(packet.dst) or packet.dst == interface.subnet.broadcast_address:
            self.deliver_local(packet)
        else:
            self.forward(interface, frame)

    def forward(self, interface: Interface, frame: EthernetFrame) -> None:
        self.counters["ip_not_for_us"] += 1

    def deliver_local(self, packet: Ipv4Packet) -> None:
        self.counters["ip_delivered"] += 1
        payload = packet.payload
        if isinstance(payload, TcpSegment):
            self.tcp.receive(packet)
        elif isinstance(payload, UdpDatagram):
            handler = self.udp_bindings.get(payload.dst_port)
            if handler is not None:
                handler(packet, payload)
            else:
                self.send_icmp_error(packet, IcmpType.DEST_UNREACHABLE, IcmpUnreachableCode.PORT)
        elif isinstance(payload, IcmpMessage):
            if payload.type == IcmpType.ECHO_REQUEST:
                reply = IcmpMessage(
                    IcmpType.ECHO_REPLY, 0, payload.identifier, payload.sequence, payload.payload
                )
                self.send_ip(self.make_packet(packet.src, IpProtocol.ICMP, reply, src=packet.dst))
            for listener in list(self.icmp_listeners):
                listener(packet)
        else:
            self.counters["ip_ignored"] += 1

    def send_icmp_error(
        self,
        original: Ipv4Packet,
        icmp_type: int,
        code: int,
        src: IPv4Address | None = None,
    ) -> None:
        """ICMP error quoting the original header plus 8 bytes. Never about ICMP errors."""
        inner = original.payload
        if isinstance(inner, IcmpMessage) and inner.type not in (
            IcmpType.ECHO_REQUEST,
            IcmpType.ECHO_REPLY,
        ):
            return
        quoted = encode_ipv4(original)[:28]
        message = IcmpMessage(icmp_type, code, 0, 0, quoted)
        self.send_ip(self.make_packet(original.src, IpProtocol.ICMP, message, src=src))

    # --- UDP ------------------------------------------------------------------

    def bind_udp(self, port: int, handler: UdpHandler) -> None:
        self.udp_bindings[port] = handler

    def unbind_udp(self, port: int) -> None:
        self.udp_bindings.pop(port, None)

    def ephemeral_udp_port(self) -> int:
        for _ in range(20000):
            self._udp_port = 40000 if self._udp_port >= 59999 else self._udp_port + 1
            if self._udp_port not in self.udp_bindings:
                return self._udp_port
        raise RuntimeError(f"{self.name}: UDP ports exhausted")

    def send_udp(
        self,
        dst: IPv4Address,
        dst_port: int,
        src_port: int,
        payload: bytes,
        provenance: Provenance | None = None,
    ) -> None:
        datagram = UdpDatagram(src_port, dst_port, payload)
        self.send_ip(self.make_packet(dst, IpProtocol.UDP, datagram), provenance)


def arp_process(host: Host, interface: Interface, message: ArpMessage) -> ArpMessage | None:
    """Apply an ARP message to ``host``; returns the is-at reply if one was sent."""
    return host.arp_process(interface, message)
