"""Unit tests for flow aggregation, flow labels and the flow CSV."""

import csv
import math
from collections import Counter
from ipaddress import IPv4Address

import pytest

from src.capture import CaptureRecord
from src.engine import NS_PER_SEC, RngStream
from src.flows import (
    ARP_SUMMARY_HEADER,
    FLOW_CSV_HEADER,
    FlowKey,
    emit_flow_csv,
    extract_flows,
    flow_label,
    label_flows,
    packet_info,
    write_arp_summary,
)
from src.models import LabelTag
from src.protocols.addresses import BROADCAST_MAC, ZERO_MAC, MacAddress
from src.protocols.packets import (
    ArpMessage,
    ArpOp,
    EthernetFrame,
    EtherType,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
    UdpDatagram,
    encode_frame,
)

CLIENT = IPv4Address("192.168.132.10")
SERVER = IPv4Address("192.168.128.20")
ACTIVE = 1800 * NS_PER_SEC
IDLE = 120 * NS_PER_SEC

SYN, ACK, PSH, FIN, RST = TcpFlags.SYN, TcpFlags.ACK, TcpFlags.PSH, TcpFlags.FIN, TcpFlags.RST


class Trace:
    """Builds capture records one packet at a time with consecutive frame indexes."""

    def __init__(self):
        self.records: list[CaptureRecord] = []

    def _add(self, ts, frame, label):
        index = len(self.records)
        self.records.append(CaptureRecord(index, ts, encode_frame(frame), "t", label))
        return index

    def tcp(self, ts, forward, flags, payload=b"", label=LabelTag.BENIGN, sport=40001):
        src, dst = (CLIENT, SERVER) if forward else (SERVER, CLIENT)
        ports = (sport, 80) if forward else (80, sport)
        segment = TcpSegment(*ports, 1, 1, flags, payload)
        return self._ip(ts, Ipv4Packet(src, dst, IpProtocol.TCP, segment), label)

    def udp(self, ts, forward=True, payload=b"", label=LabelTag.BENIGN):
        src, dst = (CLIENT, SERVER) if forward else (SERVER, CLIENT)
        ports = (40123, 123) if forward else (123, 40123)
        return self._ip(ts, Ipv4Packet(src, dst, IpProtocol.UDP, UdpDatagram(*ports, payload)), label)

    def _ip(self, ts, packet, label):
        frame = EthernetFrame(
            MacAddress.for_ip(packet.dst), MacAddress.for_ip(packet.src), EtherType.IPV4, packet
        )
        return self._add(ts, frame, label)

    def arp(self, ts, label=LabelTag.BENIGN):
        mac = MacAddress.for_ip(CLIENT)
        message = ArpMessage(ArpOp.WHO_HAS, mac, CLIENT, ZERO_MAC, SERVER)
        return self._add(ts, EthernetFrame(BROADCAST_MAC, mac, EtherType.ARP, message), label)

    @property
    def labels(self):
        return [r.label for r in self.records]


def ms(value):
    return value * 1_000_000


def test_packet_info_reads_ip_total_length():
    trace = Trace()
    trace.tcp(0, True, PSH | ACK, b"x" * 100)
    info = packet_info(trace.records[0])
    assert info.length == 140
    assert info.src == (CLIENT, 40001)
    assert info.key == FlowKey.of(IpProtocol.TCP, (SERVER, 80), (CLIENT, 40001))


def test_fin_exchange_closes_flow():
    """Handshake, one request and a FIN exchange form one flow; the next SYN opens another."""
    trace = Trace()
    trace.tcp(ms(0), True, SYN)
    trace.tcp(ms(1), False, SYN | ACK)
    trace.tcp(ms(2), True, ACK)
    trace.tcp(ms(3), True, PSH | ACK, b"x" * 100)
    trace.tcp(ms(4), False, ACK)
    trace.tcp(ms(5), True, FIN | ACK)
    trace.tcp(ms(6), False, FIN | ACK)
    trace.tcp(ms(7), True, ACK)
    trace.tcp(ms(50), True, SYN)

    result = extract_flows(trace.records, ACTIVE, IDLE)
    first, second = result.flows
    assert (first.flow_id, second.flow_id) == (0, 1)
    assert first.packets == list(range(8))
    assert (first.fwd_pkts, first.bwd_pkts) == (5, 3)
    assert (first.fwd_bytes, first.bwd_bytes) == (300, 120)
    assert first.duration_ns == ms(7)
    assert first.src == (CLIENT, 40001)
    assert first.dst == (SERVER, 80)
    counts = {name: first.flag_count(name) for name in ("syn", "ack", "psh", "fin", "rst")}
    assert counts == {"syn": 2, "ack": 7, "psh": 1, "fin": 2, "rst": 0}
    assert first.flag_count("fin", "fwd") == first.flag_count("fin", "bwd") == 1
    assert second.start_ns == ms(50)
    assert result.ip_packets == 9


def test_reset_closes_flow_and_is_kept():
    trace = Trace()
    trace.tcp(ms(0), True, SYN)
    trace.tcp(ms(1), False, RST | ACK)
    trace.tcp(ms(2), True, SYN)

    first, second = extract_flows(trace.records, ACTIVE, IDLE).flows
    assert first.packets == [0, 1]
    assert first.flag_count("rst") == 1
    assert second.packets == [2]


def test_idle_gap_splits_flow():
    trace = Trace()
    trace.udp(0)
    trace.udp(NS_PER_SEC, forward=False)
    trace.udp(NS_PER_SEC + IDLE + 1)
    trace.udp(2 * NS_PER_SEC + IDLE)

    first, second = extract_flows(trace.records, ACTIVE, IDLE).flows
    assert first.packets == [0, 1]
    assert second.packets == [2, 3]
    assert first.protocol == IpProtocol.UDP


def test_active_timeout_splits_long_flow():
    trace = Trace()
    for i in range(5):
        trace.udp(i * 10 * NS_PER_SEC)

    flows = extract_flows(trace.records, 25 * NS_PER_SEC, IDLE).flows
    assert [f.packets for f in flows] == [[0, 1, 2], [3, 4]]


def test_direction_follows_first_packet():
    trace = Trace()
    trace.udp(0, forward=False)
    trace.udp(ms(1), forward=True)
    (flow,) = extract_flows(trace.records, ACTIVE, IDLE).flows
    assert flow.src == (SERVER, 123)
    assert (flow.fwd_pkts, flow.bwd_pkts) == (1, 1)


def test_length_and_gap_statistics_are_population():
    trace = Trace()
    trace.udp(0, payload=b"")
    trace.udp(ms(10), payload=b"x" * 20)
    trace.udp(ms(30), payload=b"x" * 10)

    (flow,) = extract_flows(trace.records, ACTIVE, IDLE).flows
    features = flow.features()
    assert features["fwd_len_mean"] == pytest.approx(38.0)
    assert features["fwd_len_std"] == pytest.approx((200 / 3) ** 0.5)
    assert (features["fwd_len_min"], features["fwd_len_max"]) == (28, 48)
    assert features["fwd_iat_mean"] == pytest.approx(ms(15))
    assert features["fwd_iat_std"] == pytest.approx(ms(5))
    assert features["bwd_len_mean"] == features["bwd_iat_std"] == 0.0


def test_arp_and_undecodable_frames_are_counted_not_flowed():
    trace = Trace()
    trace.arp(0, LabelTag.MITM_ARP)
    trace.arp(1, LabelTag.MITM_ARP)
    trace.arp(2)
    trace.udp(3)
    trace.records.append(CaptureRecord(4, 4, b"\x00" * 10, "t", LabelTag.BENIGN))

    result = extract_flows(trace.records, ACTIVE, IDLE)
    assert len(result.flows) == 1
    assert result.arp_counts == Counter({LabelTag.MITM_ARP: 2, LabelTag.BENIGN: 1})
    assert result.non_ip_frames == 4
    assert result.ip_packets == 1


def test_timeouts_must_be_positive():
    with pytest.raises(ValueError):
        extract_flows([], 0, IDLE)
    with pytest.raises(ValueError):
        extract_flows([], ACTIVE, -1)


def test_flow_label_rules():
    B, SCAN, ARP = LabelTag.BENIGN, LabelTag.MITM_SCAN, LabelTag.MITM_ARP
    assert flow_label([B, B, B]) == B
    assert flow_label([]) == B
    assert flow_label([B, B, B, SCAN]) == SCAN
    assert flow_label([SCAN, ARP, ARP, B]) == ARP
    assert flow_label([B, ARP, SCAN, SCAN, ARP]) == ARP


def test_label_flows_uses_member_packets():
    trace = Trace()
    trace.tcp(ms(0), True, SYN, label=LabelTag.BF_SSH, sport=50000)
    trace.tcp(ms(1), True, SYN, sport=50001)
    trace.tcp(ms(2), False, SYN | ACK, sport=50000)

    flows = label_flows(extract_flows(trace.records, ACTIVE, IDLE).flows, trace.labels)
    assert [(f.src[1], f.label) for f in flows] == [
        (50000, LabelTag.BF_SSH),
        (50001, LabelTag.BENIGN),
    ]


def test_flow_csv_layout(tmp_path):
    trace = Trace()
    trace.udp(0, payload=b"")
    trace.udp(ms(10), payload=b"x" * 20, label=LabelTag.DOS_ICMPIGMP)
    flows = label_flows(extract_flows(trace.records, ACTIVE, IDLE).flows, trace.labels)

    path = tmp_path / "flows.csv"
    assert emit_flow_csv(flows, path) == 1
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == FLOW_CSV_HEADER
    row = dict(zip(FLOW_CSV_HEADER, rows[1], strict=True))
    assert row["flow_id"] == "0"
    assert (row["src_ip"], row["dst_ip"]) == (str(CLIENT), str(SERVER))
    assert (row["src_port"], row["dst_port"], row["protocol"]) == ("40123", "123", "17")
    assert row["fwd_len_mean"] == "38.000000"
    assert row["fwd_len_std"] == "10.000000"
    assert row["fwd_iat_mean"] == "10000000.000000"
    assert row["bwd_len_mean"] == "0.000000"
    assert row["label"] == "DOS_ICMPIGMP"


def test_arp_summary_lists_nonzero_labels(tmp_path):
    path = tmp_path / "arp.csv"
    write_arp_summary(Counter({LabelTag.MITM_ARP: 12, LabelTag.BENIGN: 3}), path)
    lines = path.read_text().splitlines()
    assert lines == [",".join(ARP_SUMMARY_HEADER), "BENIGN,3", "MITM_ARP,12"]


def parse_ip_frame(data):
    """Endpoints, protocol, total length and TCP flags read straight from the frame bytes."""
    if data[12:14] != b"\x08\x00":
        return None
    header_len = (data[14] & 0x0F) * 4
    protocol = data[23]
    transport = data[14 + header_len :]
    src_port = dst_port = flags = 0
    if protocol in (6, 17):
        src_port = int.from_bytes(transport[0:2], "big")
        dst_port = int.from_bytes(transport[2:4], "big")
    if protocol == 6:
        flags = transport[13]
    return (
        (IPv4Address(data[26:30]), src_port),
        (IPv4Address(data[30:34]), dst_port),
        protocol,
        int.from_bytes(data[16:18], "big"),
        flags,
    )


def population_stats(values):
    if not values:
        return 0.0, 0.0
    mean = sum(values) / len(values)
    return mean, math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def majority_malicious(labels):
    counts = Counter(label for label in labels if label is not LabelTag.BENIGN)
    best = LabelTag.BENIGN
    for label in labels:
        if label is LabelTag.BENIGN:
            continue
        if best is LabelTag.BENIGN or counts[label] > counts[best]:
            best = label
    return best


def conversation_ends(conversation, packet):
    if packet["flags"] & RST:
        return True
    if packet["flags"] & FIN or not packet["flags"] & ACK:
        return False
    fins = [p for p in conversation["packets"] if p["flags"] & FIN]
    return len({p["src"] for p in fins}) == 2 and packet["src"] == fins[0]["src"]


def summarize(conversation):
    packets = conversation["packets"]
    first, last = packets[0], packets[-1]
    row = {
        "src_ip": conversation["src"][0],
        "dst_ip": conversation["dst"][0],
        "src_port": conversation["src"][1],
        "dst_port": conversation["dst"][1],
        "protocol": conversation["protocol"],
        "start_ns": first["ts"],
        "duration_ns": last["ts"] - first["ts"],
        "frames": [p["index"] for p in packets],
        "label": majority_malicious([p["label"] for p in packets]),
    }
    sides = {
        "fwd": [p for p in packets if p["src"] == conversation["src"]],
        "bwd": [p for p in packets if p["src"] != conversation["src"]],
    }
    for prefix, side in sides.items():
        lengths = [p["length"] for p in side]
        times = [p["ts"] for p in side]
        row[f"{prefix}_pkts"] = len(side)
        row[f"{prefix}_bytes"] = sum(lengths)
        row[f"{prefix}_len_mean"], row[f"{prefix}_len_std"] = population_stats(lengths)
        row[f"{prefix}_len_min"] = min(lengths, default=0)
        row[f"{prefix}_len_max"] = max(lengths, default=0)
        gaps = [later - earlier for earlier, later in zip(times, times[1:])]
        row[f"{prefix}_iat_mean"], row[f"{prefix}_iat_std"] = population_stats(gaps)
    for name, bit in (("syn", SYN), ("ack", ACK), ("psh", PSH), ("fin", FIN), ("rst", RST)):
        row[f"{name}_cnt"] = sum(1 for p in packets if p["flags"] & bit)
    return row


def reference_flows(records, active_timeout, idle_timeout):
    """Naive re-implementation of the flow rules that rescans every open conversation per packet."""
    conversations, still_open = [], []
    for record in records:
        parsed = parse_ip_frame(record.data)
        if parsed is None:
            continue
        src, dst, protocol, length, flags = parsed
        packet = {
            "index": record.index,
            "ts": record.timestamp,
            "src": src,
            "length": length,
            "flags": flags,
            "label": record.label,
        }
        current = None
        for conversation in still_open:
            if conversation["protocol"] == protocol and conversation["endpoints"] == {src, dst}:
                current = conversation
        if current is not None:
            started, latest = current["packets"][0]["ts"], current["packets"][-1]["ts"]
            if record.timestamp - latest > idle_timeout or record.timestamp - started > active_timeout:
                still_open.remove(current)
                current = None
        if current is None:
            current = {
                "protocol": protocol,
                "src": src,
                "dst": dst,
                "endpoints": {src, dst},
                "packets": [],
            }
            conversations.append(current)
            still_open.append(current)
        current["packets"].append(packet)
        if protocol == 6 and conversation_ends(current, packet):
            still_open.remove(current)
    return [summarize(c) for c in conversations]


def flow_fields(flow):
    fields = {
        "src_ip": flow.src[0],
        "dst_ip": flow.dst[0],
        "src_port": flow.src[1],
        "dst_port": flow.dst[1],
        "protocol": flow.protocol,
        "start_ns": flow.start_ns,
        "duration_ns": flow.duration_ns,
        "frames": flow.packets,
        "label": flow.label,
        "fwd_pkts": flow.fwd_pkts,
        "bwd_pkts": flow.bwd_pkts,
        "fwd_bytes": flow.fwd_bytes,
        "bwd_bytes": flow.bwd_bytes,
        **flow.features(),
    }
    for name in ("syn", "ack", "psh", "fin", "rst"):
        fields[f"{name}_cnt"] = flow.flag_count(name)
    return fields


def random_trace(rng, size):
    """Mixed UDP, ARP and TCP traffic over a handful of conversations, with orderly teardowns."""
    labels = [
        LabelTag.BENIGN,
        LabelTag.BENIGN,
        LabelTag.MITM_SCAN,
        LabelTag.DOS_PSHACK,
        LabelTag.BF_SSH,
    ]
    trace = Trace()
    ts = 0
    while len(trace.records) < size:
        ts += rng.draw(10 * NS_PER_SEC)
        sport = 40000 + rng.draw(4)
        forward = bool(rng.draw(2))
        label = labels[rng.draw(len(labels))]
        choice = rng.draw(10)
        if choice == 0:
            trace.udp(ts, forward, b"u" * rng.draw(30), label=label)
        elif choice == 1:
            trace.arp(ts, label=label)
        elif choice == 2:
            trace.tcp(ts, forward, RST | ACK, sport=sport, label=label)
        elif choice == 3:
            trace.tcp(ts, forward, FIN | ACK, sport=sport, label=label)
        elif choice == 4:
            trace.tcp(ts, forward, ACK, sport=sport, label=label)
        elif choice == 5:
            trace.tcp(ts, forward, SYN, sport=sport, label=label)
        elif choice == 6:
            sides = (forward, not forward, not forward, forward)
            for step, flags in enumerate((FIN | ACK, ACK, FIN | ACK, ACK)):
                trace.tcp(ts + ms(step), sides[step], flags, sport=sport, label=label)
            ts += ms(3)
        else:
            payload = b"d" * (1 + rng.draw(200))
            trace.tcp(ts, forward, PSH | ACK, payload, sport=sport, label=label)
    return trace


def test_matches_reference_on_random_traffic():
    """A hundred random captures give the same flows, features and labels as the naive version."""
    rng = RngStream(99, "flows")
    active, idle = 300 * NS_PER_SEC, 60 * NS_PER_SEC
    fin_closed = split = 0
    for _ in range(100):
        trace = random_trace(rng, 200 + rng.draw(797))
        assert len(trace.records) <= 1000

        flows = label_flows(extract_flows(trace.records, active, idle).flows, trace.labels)
        expected = reference_flows(trace.records, active, idle)

        assert [f.flow_id for f in flows] == list(range(len(flows)))
        assert len(flows) == len(expected)
        for flow, want in zip(flows, expected, strict=True):
            got = flow_fields(flow)
            assert got.keys() == want.keys()
            measured = [k for k in want if k.endswith(("_mean", "_std"))]
            assert {k: got[k] for k in measured} == pytest.approx(
                {k: want[k] for k in measured}, rel=1e-9, abs=1e-9
            )
            assert {k: v for k, v in got.items() if k not in measured} == {
                k: v for k, v in want.items() if k not in measured
            }
            if flow.fwd.fin_seen and flow.bwd.fin_seen:
                fin_closed += 1
        keys = Counter(f.key for f in flows)
        split += sum(1 for count in keys.values() if count > 1)
    assert fin_closed > 0
    assert split > 0
