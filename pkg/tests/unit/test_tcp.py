"""Unit tests for the pure TCP connection state machine."""

from ipaddress import IPv4Address

import pytest

from src.engine import RngStream
from src.protocols.packets import TCP_MSS, TCP_WINDOW, TcpFlags, TcpSegment
from src.protocols.tcp import (
    Abort,
    Close,
    Listen,
    Open,
    Send,
    TcpConnection,
    TcpNotice,
    TcpState,
    TcpStateError,
    Timeout,
    TimerKind,
    reset_for,
    seq_add,
    seq_between,
    seq_diff,
    tcp_step,
)

CLIENT_IP = IPv4Address("192.168.132.10")
SERVER_IP = IPv4Address("192.168.128.20")


def make_pair(client_iss=100, server_iss=5000):
    client = TcpConnection(CLIENT_IP, 40001, SERVER_IP, 80, iss=client_iss)
    server = TcpConnection(SERVER_IP, 80, CLIENT_IP, 40001, iss=server_iss)
    server.step(Listen())
    return client, server


def deliver(segments, conn):
    """Feed segments to ``conn`` in order and collect everything it sends back."""
    replies, data, notices = [], b"", []
    for segment in segments:
        result = conn.step(segment)
        replies.extend(result.segments)
        data += result.data
        notices.extend(result.notices)
    return replies, data, notices


def established_pair(**kwargs):
    client, server = make_pair(**kwargs)
    syn = client.step(Open()).segments
    syn_ack, _, _ = deliver(syn, server)
    ack, _, _ = deliver(syn_ack, client)
    deliver(ack, server)
    return client, server


def test_three_way_handshake():
    """SYN, SYN|ACK, ACK carry the expected sequence and acknowledgement numbers."""
    client, server = make_pair()

    opened = client.step(Open())
    assert client.state is TcpState.SYN_SENT
    (syn,) = opened.segments
    assert syn.flags == TcpFlags.SYN
    assert syn.seq == 100

    (syn_ack,) = server.step(syn).segments
    assert server.state is TcpState.SYN_RECEIVED
    assert syn_ack.flags == TcpFlags.SYN | TcpFlags.ACK
    assert (syn_ack.seq, syn_ack.ack) == (5000, 101)

    completed = client.step(syn_ack)
    (ack,) = completed.segments
    assert ack.flags == TcpFlags.ACK
    assert (ack.seq, ack.ack) == (101, 5001)
    assert completed.notices == [TcpNotice.ESTABLISHED]
    assert client.state is TcpState.ESTABLISHED

    accepted = server.step(ack)
    assert accepted.segments == []
    assert accepted.notices == [TcpNotice.ESTABLISHED]
    assert server.state is TcpState.ESTABLISHED


def test_handshake_across_sequence_wrap():
    client, server = established_pair(client_iss=2**32 - 1, server_iss=2**32 - 1)
    assert client.snd_nxt == 0
    assert server.rcv_nxt == 0
    assert client.rcv_nxt == 0


def test_send_splits_at_mss_with_push_on_last():
    """A 3000-byte write becomes 1460 + 1460 + 80 with PSH only on the final segment."""
    client, server = established_pair()

    segments = client.step(Send(b"a" * 3000)).segments
    assert [len(s.payload) for s in segments] == [TCP_MSS, TCP_MSS, 80]
    assert [s.seq for s in segments] == [101, 101 + TCP_MSS, 101 + 2 * TCP_MSS]
    assert [bool(s.flags & TcpFlags.PSH) for s in segments] == [False, False, True]
    assert all(s.flags & TcpFlags.ACK for s in segments)

    acks, data, _ = deliver(segments, server)
    assert data == b"a" * 3000
    assert acks[-1].ack == 101 + 3000

    deliver(acks, client)
    assert client.snd_una == client.snd_nxt == 101 + 3000


def test_send_before_established_raises():
    client, _ = make_pair()
    with pytest.raises(TcpStateError):
        client.step(Send(b"early"))
    client.step(Open())
    with pytest.raises(TcpStateError):
        client.step(Open())


def test_orderly_close():
    """Active closer ends in TIME_WAIT, passive closer in CLOSED."""
    client, server = established_pair()

    fin = client.step(Close()).segments
    assert client.state is TcpState.FIN_WAIT_1
    assert fin[0].flags == TcpFlags.FIN | TcpFlags.ACK

    ack, _, notices = deliver(fin, server)
    assert server.state is TcpState.CLOSE_WAIT
    assert notices == [TcpNotice.PEER_CLOSED]

    deliver(ack, client)
    assert client.state is TcpState.FIN_WAIT_2

    server_fin = server.step(Close()).segments
    assert server.state is TcpState.LAST_ACK

    last_ack, _, notices = deliver(server_fin, client)
    assert client.state is TcpState.TIME_WAIT
    assert notices == [TcpNotice.PEER_CLOSED]

    _, _, notices = deliver(last_ack, server)
    assert server.state is TcpState.CLOSED
    assert notices == [TcpNotice.CLOSED]

    expired = client.step(Timeout(TimerKind.TIME_WAIT))
    assert expired.state is TcpState.CLOSED
    assert expired.notices == [TcpNotice.CLOSED]


def test_simultaneous_close_goes_through_closing():
    client, server = established_pair()
    client_fin = client.step(Close()).segments
    server_fin = server.step(Close()).segments

    client_ack, _, _ = deliver(server_fin, client)
    server_ack, _, _ = deliver(client_fin, server)
    assert client.state is TcpState.CLOSING
    assert server.state is TcpState.CLOSING

    deliver(client_ack, server)
    deliver(server_ack, client)
    assert client.state is TcpState.TIME_WAIT
    assert server.state is TcpState.TIME_WAIT


def test_in_window_reset_closes():
    _, server = established_pair()
    rst = TcpSegment(40001, 80, server.rcv_nxt + 10, 0, TcpFlags.RST)

    result = server.step(rst)
    assert result.state is TcpState.CLOSED
    assert result.notices == [TcpNotice.RESET]
    assert result.segments == []


def test_out_of_window_reset_is_ignored():
    _, server = established_pair()
    for seq in (seq_add(server.rcv_nxt, TCP_WINDOW), seq_add(server.rcv_nxt, 2**31), server.rcv_nxt - 1):
        result = server.step(TcpSegment(40001, 80, seq, 0, TcpFlags.RST))
        assert result.state is TcpState.ESTABLISHED
        assert result.notices == []


def test_abort_sends_reset():
    client, server = established_pair()
    result = client.step(Abort())
    (rst,) = result.segments
    assert rst.flags == TcpFlags.RST | TcpFlags.ACK
    assert client.state is TcpState.CLOSED

    _, _, notices = deliver([rst], server)
    assert notices == [TcpNotice.RESET]
    assert server.state is TcpState.CLOSED


def test_closed_connection_answers_with_reset():
    """A segment for a closed endpoint draws an RST and flags a half-open violation."""
    conn = TcpConnection(SERVER_IP, 80, CLIENT_IP, 40001)
    stray = TcpSegment(40001, 80, 777, 9000, TcpFlags.PSH | TcpFlags.ACK, b"late")

    result = conn.step(stray)
    (rst,) = result.segments
    assert rst.flags == TcpFlags.RST
    assert rst.seq == 9000
    assert result.notices == [TcpNotice.HALF_OPEN_VIOLATION]

    assert conn.step(TcpSegment(40001, 80, 1, 0, TcpFlags.RST)).segments == []


def test_reset_for_forms():
    with_ack = reset_for(TcpSegment(1000, 80, 10, 20, TcpFlags.ACK))
    assert (with_ack.src_port, with_ack.dst_port) == (80, 1000)
    assert (with_ack.seq, with_ack.flags) == (20, TcpFlags.RST)

    bare_syn = reset_for(TcpSegment(1000, 80, 10, 0, TcpFlags.SYN))
    assert bare_syn.flags == TcpFlags.RST | TcpFlags.ACK
    assert (bare_syn.seq, bare_syn.ack) == (0, 11)

    fin_with_data = reset_for(TcpSegment(1000, 80, 2**32 - 2, 0, TcpFlags.FIN, b"abc"))
    assert fin_with_data.ack == 2

    assert reset_for(TcpSegment(1000, 80, 10, 20, TcpFlags.RST | TcpFlags.ACK)) is None


def test_listener_resets_stray_ack():
    _, server = make_pair()
    (rst,) = server.step(TcpSegment(40001, 80, 1, 4242, TcpFlags.ACK)).segments
    assert rst.flags == TcpFlags.RST
    assert rst.seq == 4242
    assert server.state is TcpState.LISTEN


def test_syn_retried_twice_then_fails():
    client, _ = make_pair()
    client.step(Open())

    for _ in range(2):
        (syn,) = client.step(Timeout(TimerKind.SYN_RETRY)).segments
        assert syn.flags == TcpFlags.SYN
        assert syn.seq == 100

    final = client.step(Timeout(TimerKind.SYN_RETRY))
    assert final.segments == []
    assert final.notices == [TcpNotice.FAILED]
    assert client.state is TcpState.CLOSED


def test_handshake_timeout_fails_half_open():
    client, server = make_pair()
    server.step(client.step(Open()).segments[0])
    assert server.state is TcpState.SYN_RECEIVED

    result = server.step(Timeout(TimerKind.HANDSHAKE))
    assert result.state is TcpState.CLOSED
    assert result.notices == [TcpNotice.FAILED]


def test_stale_timers_are_ignored():
    client, _ = established_pair()
    for kind in (TimerKind.SYN_RETRY, TimerKind.HANDSHAKE, TimerKind.TIME_WAIT):
        result = client.step(Timeout(kind))
        assert result.state is TcpState.ESTABLISHED
        assert result.notices == []


def test_out_of_order_segment_is_not_delivered():
    client, server = established_pair()
    _, second = client.step(Send(b"x" * (TCP_MSS + 10))).segments

    replies, data, _ = deliver([second], server)
    assert data == b""
    assert replies[0].ack == server.rcv_nxt == 101


def test_sequence_arithmetic_wraps():
    assert seq_add(2**32 - 1, 2) == 1
    assert seq_diff(1, 2**32 - 1) == 2
    assert seq_diff(2**32 - 1, 1) == -2
    assert seq_between(2**32 - 10, 3, 5)
    assert not seq_between(3, 3, 5)
    assert seq_between(3, 5, 5)


def test_tcp_step_returns_state_and_result():
    client, _ = make_pair()
    state, result = tcp_step(client, Open())
    assert state is TcpState.SYN_SENT
    assert result.state is state


def test_random_inputs_keep_a_valid_state():
    """Ten thousand random input sequences never leave the machine outside its state set."""
    rng = RngStream(2024, "tcp-fuzz")
    flag_choices = [
        TcpFlags.SYN,
        TcpFlags.SYN | TcpFlags.ACK,
        TcpFlags.ACK,
        TcpFlags.PSH | TcpFlags.ACK,
        TcpFlags.FIN | TcpFlags.ACK,
        TcpFlags.FIN,
        TcpFlags.RST,
        TcpFlags.RST | TcpFlags.ACK,
    ]
    commands = [Open(), Listen(), Send(b"data"), Close(), Abort()] + [Timeout(k) for k in TimerKind]
    visited = set()

    for trial in range(10_000):
        client, server = established_pair() if trial % 2 else make_pair()
        conn = client if trial % 3 else server
        steps = 1 + trial % 24
        noise = rng.bytes(steps * 12)
        for step in range(steps):
            chunk = noise[step * 12 : (step + 1) * 12]
            if chunk[0] % 3 == 0:
                event = commands[chunk[1] % len(commands)]
            else:
                wild_seq = int.from_bytes(chunk[4:8], "big")
                wild_ack = int.from_bytes(chunk[8:12], "big")
                event = TcpSegment(
                    conn.remote_port,
                    conn.local_port,
                    conn.rcv_nxt if chunk[2] % 2 else wild_seq,
                    conn.snd_nxt if chunk[3] % 2 else wild_ack,
                    flag_choices[chunk[1] % len(flag_choices)],
                    b"p" * (chunk[2] % 4),
                )
            try:
                result = conn.step(event)
            except TcpStateError:
                continue
            assert conn.state in TcpState
            assert result.state is conn.state
            visited.add(conn.state)
            for segment in result.segments:
                assert 0 <= segment.seq < 2**32
                assert 0 <= segment.ack < 2**32
    assert {TcpState.CLOSED, TcpState.ESTABLISHED, TcpState.SYN_SENT} <= visited
