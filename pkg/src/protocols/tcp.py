"""Per-connection TCP state machine.

The machine is pure: ``tcp_step`` takes a received segment or a local command
and returns the segments to emit, payload delivered in order, and notices for
the owning application. Timers live in the host stack, which feeds
``Timeout`` commands back in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv4Address

from src.protocols.packets import TCP_MSS, TCP_WINDOW, TcpFlags, TcpSegment

SEQ_MOD = 2**32

# Waits between SYN transmissions: two retries, then the connection fails.
SYN_RETRY_WAITS = (1, 2, 4)


class TcpState(str, Enum):
    CLOSED = "CLOSED"
    LISTEN = "LISTEN"
    SYN_SENT = "SYN_SENT"
    SYN_RECEIVED = "SYN_RECEIVED"
    ESTABLISHED = "ESTABLISHED"
    FIN_WAIT_1 = "FIN_WAIT_1"
    FIN_WAIT_2 = "FIN_WAIT_2"
    CLOSE_WAIT = "CLOSE_WAIT"
    CLOSING = "CLOSING"
    LAST_ACK = "LAST_ACK"
    TIME_WAIT = "TIME_WAIT"


SYNCHRONIZED = frozenset(
    {
        TcpState.SYN_RECEIVED,
        TcpState.ESTABLISHED,
        TcpState.FIN_WAIT_1,
        TcpState.FIN_WAIT_2,
        TcpState.CLOSE_WAIT,
        TcpState.CLOSING,
        TcpState.LAST_ACK,
        TcpState.TIME_WAIT,
    }
)
RECEIVING = frozenset({TcpState.ESTABLISHED, TcpState.FIN_WAIT_1, TcpState.FIN_WAIT_2})


class TcpNotice(str, Enum):
    """Events surfaced to the application owning the connection."""

    ESTABLISHED = "established"
    PEER_CLOSED = "peer-closed"
    CLOSED = "closed"
    RESET = "reset"
    FAILED = "failed"
    HALF_OPEN_VIOLATION = "half-open-violation"


class TimerKind(str, Enum):
    SYN_RETRY = "syn-retry"
    HANDSHAKE = "handshake"
    TIME_WAIT = "time-wait"
    LINGER = "linger"


class TcpStateError(RuntimeError):
    """Raised for a local command the current state cannot honour."""


@dataclass(frozen=True, slots=True)
class Open:
    """Active open."""


@dataclass(frozen=True, slots=True)
class Listen:
    """Passive open."""


@dataclass(frozen=True, slots=True)
class Send:
    data: bytes


@dataclass(frozen=True, slots=True)
class Close:
    """Orderly release (FIN)."""


@dataclass(frozen=True, slots=True)
class Abort:
    """Abortive release (RST)."""


@dataclass(frozen=True, slots=True)
class Timeout:
    kind: TimerKind


Command = Open | Listen | Send | Close | Abort | Timeout


def seq_add(a: int, b: int) -> int:
    return (a + b) % SEQ_MOD


def seq_diff(a: int, b: int) -> int:
    """Signed distance a - b in sequence space."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= SEQ_MOD // 2 else d


def seq_between(low: int, value: int, high: int) -> bool:
    """low < value <= high in sequence space."""
    return 0 < seq_diff(value, low) and seq_diff(value, high) <= 0


@dataclass(slots=True)
class StepResult:
    state: TcpState
    segments: list[TcpSegment] = field(default_factory=list)
    data: bytes = b""
    notices: list[TcpNotice] = field(default_factory=list)


def reset_for(segment: TcpSegment) -> TcpSegment | None:
    """RST answering a segment that matches no connection (none for an RST)."""
    if segment.flags & TcpFlags.RST:
        return None
    if segment.flags & TcpFlags.ACK:
        return TcpSegment(segment.dst_port, segment.src_port, segment.ack, 0, TcpFlags.RST, window=0)
    return TcpSegment(
        segment.dst_port,
        segment.src_port,
        0,
        seq_add(segment.seq, segment.seg_len),
        TcpFlags.RST | TcpFlags.ACK,
        window=0,
    )


@dataclass(slots=True)
class TcpConnection:
    """One endpoint of a TCP connection."""

    local_ip: IPv4Address
    local_port: int
    remote_ip: IPv4Address
    remote_port: int
    iss: int = 0
    state: TcpState = TcpState.CLOSED
    snd_una: int = 0
    snd_nxt: int = 0
    rcv_nxt: int = 0
    irs: int = 0
    syn_retries_left: int = len(SYN_RETRY_WAITS) - 1

    def _segment(self, flags: TcpFlags, seq: int | None = None, payload: bytes = b"") -> TcpSegment:
        ack = self.rcv_nxt if flags & TcpFlags.ACK else 0
        return TcpSegment(
            self.local_port,
            self.remote_port,
            self.snd_nxt if seq is None else seq,
            ack,
            flags,
            payload=payload,
            window=TCP_WINDOW,
        )

    def _ack(self) -> TcpSegment:
        return self._segment(TcpFlags.ACK)

    def _syn(self) -> TcpSegment:
        return self._segment(TcpFlags.SYN, seq=self.iss)

    def _syn_ack(self) -> TcpSegment:
        return self._segment(TcpFlags.SYN | TcpFlags.ACK, seq=self.iss)

    # --- commands -------------------------------------------------------------

    def _command(self, command: Command) -> StepResult:
        result = StepResult(self.state)
        if isinstance(command, Open):
            if self.state is not TcpState.CLOSED:
                raise TcpStateError(f"open in state {self.state.value}")
            self.snd_una = self.iss
            self.snd_nxt = seq_add(self.iss, 1)
            self.state = TcpState.SYN_SENT
            result.segments.append(self._syn())
        elif isinstance(command, Listen):
            if self.state is not TcpState.CLOSED:
                raise TcpStateError(f"listen in state {self.state.value}")
            self.state = TcpState.LISTEN
        elif isinstance(command, Send):
            if self.state not in (TcpState.ESTABLISHED, TcpState.CLOSE_WAIT):
                raise TcpStateError(f"send in state {self.state.value}")
            chunks = [command.data[i : i + TCP_MSS] for i in range(0, len(command.data), TCP_MSS)]
            for i, chunk in enumerate(chunks):
                flags = TcpFlags.ACK | (TcpFlags.PSH if i == len(chunks) - 1 else 0)
                result.segments.append(self._segment(flags, payload=chunk))
                self.snd_nxt = seq_add(self.snd_nxt, len(chunk))
        elif isinstance(command, Close):
            if self.state in (TcpState.ESTABLISHED, TcpState.SYN_RECEIVED):
                result.segments.append(self._segment(TcpFlags.FIN | TcpFlags.ACK))
                self.snd_nxt = seq_add(self.snd_nxt, 1)
                self.state = TcpState.FIN_WAIT_1
            elif self.state is TcpState.CLOSE_WAIT:
                result.segments.append(self._segment(TcpFlags.FIN | TcpFlags.ACK))
                self.snd_nxt = seq_add(self.snd_nxt, 1)
                self.state = TcpState.LAST_ACK
            elif self.state in (TcpState.LISTEN, TcpState.SYN_SENT):
                self.state = TcpState.CLOSED
                result.notices.append(TcpNotice.CLOSED)
        elif isinstance(command, Abort):
            if self.state in SYNCHRONIZED and self.state is not TcpState.TIME_WAIT:
                result.segments.append(self._segment(TcpFlags.RST | TcpFlags.ACK))
            if self.state is not TcpState.CLOSED:
                self.state = TcpState.CLOSED
                result.notices.append(TcpNotice.CLOSED)
        elif isinstance(command, Timeout):
            self._timeout(command.kind, result)
        result.state = self.state
        return result

    def _timeout(self, kind: TimerKind, result: StepResult) -> None:
        if kind is TimerKind.SYN_RETRY and self.state is TcpState.SYN_SENT:
            if self.syn_retries_left > 0:
                self.syn_retries_left -= 1
                result.segments.append(self._syn())
            else:
                self.state = TcpState.CLOSED
                result.notices.append(TcpNotice.FAILED)
        elif kind is TimerKind.HANDSHAKE and self.state is TcpState.SYN_RECEIVED:
            self.state = TcpState.CLOSED
            result.notices.append(TcpNotice.FAILED)
        elif kind is TimerKind.TIME_WAIT and self.state is TcpState.TIME_WAIT:
            self.state = TcpState.CLOSED
            result.notices.append(TcpNotice.CLOSED)
        elif kind is TimerKind.LINGER and self.state not in (TcpState.CLOSED, TcpState.LISTEN):
            self.state = TcpState.CLOSED
            result.notices.append(TcpNotice.CLOSED)

    # --- segment arrival ------------------------------------------------------

    def _receive(self, seg: TcpSegment) -> StepResult:
        result = StepResult(self.state)
        flags = seg.flags
        state = self.state

        if state is TcpState.CLOSED:
            reply = reset_for(seg)
            if reply is not None:
                result.segments.append(reply)
                result.notices.append(TcpNotice.HALF_OPEN_VIOLATION)
            return result

        if state is TcpState.LISTEN:
            if flags & TcpFlags.RST:
                return result
            if flags & TcpFlags.ACK:
                result.segments.append(reset_for(seg))
                return result
            if flags & TcpFlags.SYN:
                self.irs = seg.seq
                self.rcv_nxt = seq_add(seg.seq, 1)
                self.snd_una = self.iss
                self.snd_nxt = seq_add(self.iss, 1)
                self.state = TcpState.SYN_RECEIVED
                result.segments.append(self._syn_ack())
            result.state = self.state
            return result

        if state is TcpState.SYN_SENT:
            if flags & TcpFlags.ACK and seg.ack != self.snd_nxt:
                if not flags & TcpFlags.RST:
                    result.segments.append(reset_for(seg))
                return result
            if flags & TcpFlags.RST:
                if flags & TcpFlags.ACK:
                    self.state = TcpState.CLOSED
                    result.notices.append(TcpNotice.RESET)
                result.state = self.state
                return result
            if flags & TcpFlags.SYN:
                self.irs = seg.seq
                self.rcv_nxt = seq_add(seg.seq, 1)
                if flags & TcpFlags.ACK:
                    self.snd_una = seg.ack
                    self.state = TcpState.ESTABLISHED
                    result.segments.append(self._ack())
                    result.notices.append(TcpNotice.ESTABLISHED)
                else:
                    self.state = TcpState.SYN_RECEIVED
                    result.segments.append(self._syn_ack())
            result.state = self.state
            return result

        # Synchronized states.
        if flags & TcpFlags.RST:
            if 0 <= seq_diff(seg.seq, self.rcv_nxt) < TCP_WINDOW:
                self.state = TcpState.CLOSED
                if state is not TcpState.TIME_WAIT:
                    result.notices.append(TcpNotice.RESET)
            result.state = self.state
            return result

        if flags & TcpFlags.SYN:
            if state is TcpState.SYN_RECEIVED and seg.seq == self.irs:
                result.segments.append(self._syn_ack())
            else:
                # Challenge ACK instead of tearing down on an unexpected SYN.
                result.segments.append(self._ack())
            return result

        if seg.seq != self.rcv_nxt:
            # Out-of-order or duplicate: no reassembly, re-advertise rcv_nxt.
            result.segments.append(self._ack())
            return result

        if not flags & TcpFlags.ACK:
            return result

        if state is TcpState.SYN_RECEIVED:
            if seq_between(self.snd_una, seg.ack, self.snd_nxt):
                self.snd_una = seg.ack
                self.state = TcpState.ESTABLISHED
                result.notices.append(TcpNotice.ESTABLISHED)
            else:
                result.segments.append(reset_for(seg))
                return result
        elif seq_diff(seg.ack, self.snd_nxt) > 0:
            result.segments.append(self._ack())
            return result
        elif seq_diff(seg.ack, self.snd_una) > 0:
            self.snd_una = seg.ack

        if self.snd_una == self.snd_nxt and self.state in (
            TcpState.FIN_WAIT_1,
            TcpState.CLOSING,
            TcpState.LAST_ACK,
        ):
            if self.state is TcpState.FIN_WAIT_1:
                self.state = TcpState.FIN_WAIT_2
            elif self.state is TcpState.CLOSING:
                self.state = TcpState.TIME_WAIT
            else:
                self.state = TcpState.CLOSED
                result.notices.append(TcpNotice.CLOSED)
                result.state = self.state
                return result

        needs_ack = False
        if seg.payload and self.state in RECEIVING:
            result.data = seg.payload
            self.rcv_nxt = seq_add(self.rcv_nxt, len(seg.payload))
            needs_ack = True

        if flags & TcpFlags.FIN:
            if self.state is TcpState.TIME_WAIT:
                needs_ack = True
            elif self.state in (TcpState.ESTABLISHED, TcpState.FIN_WAIT_1, TcpState.FIN_WAIT_2):
                self.rcv_nxt = seq_add(self.rcv_nxt, 1)
                needs_ack = True
                if self.state is TcpState.ESTABLISHED:
                    self.state = TcpState.CLOSE_WAIT
                    result.notices.append(TcpNotice.PEER_CLOSED)
                elif self.state is TcpState.FIN_WAIT_1:
                    self.state = TcpState.CLOSING
                else:
                    self.state = TcpState.TIME_WAIT
                    result.notices.append(TcpNotice.PEER_CLOSED)

        if needs_ack:
            result.segments.append(self._ack())
        result.state = self.state
        return result

    def step(self, event: TcpSegment | Command) -> StepResult:
        if isinstance(event, TcpSegment):
            return self._receive(event)
        return self._command(event)


def tcp_step(conn: TcpConnection, event: TcpSegment | Command) -> tuple[TcpState, StepResult]:
    """Advance ``conn`` by one received segment or local command.

    Returns:
        The new state and the step result (segments to emit, data, notices)
    """
    result = conn.step(event)
    return result.state, result
