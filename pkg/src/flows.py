"""Bidirectional flow aggregation and per-flow features for the labelled capture."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from pathlib import Path

import numpy as np

from src.capture import CaptureRecord
from src.engine import SimTime
from src.models import LabelTag
from src.protocols.packets import (
    ArpMessage,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
    TruncatedFrameError,
    UdpDatagram,
    decode_frame,
)

logger = logging.getLogger(__name__)

FLOW_CSV_HEADER = [
    "flow_id", "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "start_ns",
    "duration_ns", "fwd_pkts", "bwd_pkts", "fwd_bytes", "bwd_bytes",
    "fwd_len_mean", "fwd_len_std", "fwd_len_min", "fwd_len_max",
    "bwd_len_mean", "bwd_len_std", "bwd_len_min", "bwd_len_max",
    "fwd_iat_mean", "fwd_iat_std", "bwd_iat_mean", "bwd_iat_std",
    "syn_cnt", "ack_cnt", "psh_cnt", "fin_cnt", "rst_cnt", "label",
]
ARP_SUMMARY_HEADER = ["label", "count"]
COUNTED_FLAGS = (
    ("syn", TcpFlags.SYN),
    ("ack", TcpFlags.ACK),
    ("psh", TcpFlags.PSH),
    ("fin", TcpFlags.FIN),
    ("rst", TcpFlags.RST),
)

Endpoint = tuple[IPv4Address, int]


@dataclass(frozen=True, slots=True)
class FlowKey:
    """Order-independent conversation key; both directions map to the same key."""

    protocol: int
    low: Endpoint
    high: Endpoint

    @classmethod
    def of(cls, protocol: int, a: Endpoint, b: Endpoint) -> FlowKey:
        low, high = sorted((a, b))
        return cls(protocol, low, high)


@dataclass(slots=True)
class PacketInfo:
    index: int
    timestamp: SimTime
    src: Endpoint
    dst: Endpoint
    protocol: int
    length: int
    flags: TcpFlags = TcpFlags(0)

    @property
    def key(self) -> FlowKey:
        return FlowKey.of(self.protocol, self.src, self.dst)


def packet_info(record: CaptureRecord) -> PacketInfo | ArpMessage | None:
    """IP packet summary, the ARP message, or None for anything else."""
    try:
        frame = decode_frame(record.data)
    except TruncatedFrameError:
        return None
    payload = frame.payload
    if isinstance(payload, ArpMessage):
        return payload
    if not isinstance(payload, Ipv4Packet):
        return None
    inner = payload.payload
    src_port = dst_port = 0
    flags = TcpFlags(0)
    if isinstance(inner, TcpSegment | UdpDatagram):
        src_port, dst_port = inner.src_port, inner.dst_port
    if isinstance(inner, TcpSegment):
        flags = TcpFlags(inner.flags)
    return PacketInfo(
        record.index,
        record.timestamp,
        (payload.src, src_port),
        (payload.dst, dst_port),
        payload.protocol,
        int.from_bytes(record.data[16:18], "big"),
        flags,
    )


@dataclass(slots=True)
class _Direction:
    lengths: list[int] = field(default_factory=list)
    times: list[SimTime] = field(default_factory=list)
    flags: Counter[str] = field(default_factory=Counter)
    fin_seen: bool = False


def _mean_std(values: list[int] | np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return 0.0, 0.0
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


@dataclass(slots=True)
class FlowRecord:
    flow_id: int
    key: FlowKey
    src: Endpoint
    dst: Endpoint
    start_ns: SimTime
    end_ns: SimTime
    packets: list[int] = field(default_factory=list)
    fwd: _Direction = field(default_factory=_Direction)
    bwd: _Direction = field(default_factory=_Direction)
    label: LabelTag = LabelTag.BENIGN
    first_fin_forward: bool | None = None

    @property
    def protocol(self) -> int:
        return self.key.protocol

    @property
    def duration_ns(self) -> SimTime:
        return self.end_ns - self.start_ns

    @property
    def fwd_pkts(self) -> int:
        return len(self.fwd.lengths)

    @property
    def bwd_pkts(self) -> int:
        return len(self.bwd.lengths)

    @property
    def fwd_bytes(self) -> int:
        return sum(self.fwd.lengths)

    @property
    def bwd_bytes(self) -> int:
        return sum(self.bwd.lengths)

    def flag_count(self, name: str, direction: str | None = None) -> int:
        if direction == "fwd":
            return self.fwd.flags[name]
        if direction == "bwd":
            return self.bwd.flags[name]
        return self.fwd.flags[name] + self.bwd.flags[name]

    def add(self, packet: PacketInfo) -> None:
        forward = packet.src == self.src
        side = self.fwd if forward else self.bwd
        side.lengths.append(packet.length)
        side.times.append(packet.timestamp)
        for name, flag in COUNTED_FLAGS:
            if packet.flags & flag:
                side.flags[name] += 1
        if packet.flags & TcpFlags.FIN:
            side.fin_seen = True
            if self.first_fin_forward is None:
                self.first_fin_forward = forward
        self.packets.append(packet.index)
        self.end_ns = packet.timestamp

    def closes_on(self, packet: PacketInfo) -> bool:
        """TCP end of conversation: an RST, or the final ACK after FINs both ways."""
        if self.protocol != IpProtocol.TCP:
            return False
        if packet.flags & TcpFlags.RST:
            return True
        if not (self.fwd.fin_seen and self.bwd.fin_seen):
            return False
        forward = packet.src == self.src
        return (
            forward == self.first_fin_forward
            and bool(packet.flags & TcpFlags.ACK)
            and not packet.flags & TcpFlags.FIN
        )

    def features(self) -> dict[str, float | int]:
        values: dict[str, float | int] = {}
        for prefix, side in (("fwd", self.fwd), ("bwd", self.bwd)):
            mean, std = _mean_std(side.lengths)
            values[f"{prefix}_len_mean"] = mean
            values[f"{prefix}_len_std"] = std
            values[f"{prefix}_len_min"] = min(side.lengths, default=0)
            values[f"{prefix}_len_max"] = max(side.lengths, default=0)
            gaps = np.diff(np.asarray(side.times, dtype=np.int64)) if len(side.times) > 1 else []
            iat_mean, iat_std = _mean_std(gaps)
            values[f"{prefix}_iat_mean"] = iat_mean
            values[f"{prefix}_iat_std"] = iat_std
        return values


@dataclass(slots=True)
class FlowExtraction:
    flows: list[FlowRecord]
    arp_counts: Counter[LabelTag]
    non_ip_frames: int
    ip_packets: int


def extract_flows(
    records: Iterable[CaptureRecord], active_timeout: SimTime, idle_timeout: SimTime
) -> FlowExtraction:
    """Group the capture's IP packets into bidirectional flows.

    A flow ends on an RST (which it keeps), on the final ACK after FINs in both
    directions, when the gap to the next packet exceeds ``idle_timeout`` or
    when the next packet would make it older than ``active_timeout``. ARP and
    other non-IP frames are only counted.
    """
    if active_timeout <= 0 or idle_timeout <= 0:
        raise ValueError("flow timeouts must be positive")
    active: dict[FlowKey, FlowRecord] = {}
    finished: list[FlowRecord] = []
    arp_counts: Counter[LabelTag] = Counter()
    non_ip = 0
    ip_packets = 0
    next_id = 0

    for record in records:
        info = packet_info(record)
        if not isinstance(info, PacketInfo):
            non_ip += 1
            if isinstance(info, ArpMessage):
                arp_counts[record.label] += 1
            continue
        ip_packets += 1
        key = info.key
        flow = active.get(key)
        if flow is not None and (
            info.timestamp - flow.end_ns > idle_timeout
            or info.timestamp - flow.start_ns > active_timeout
        ):
            finished.append(active.pop(key))
            flow = None
        if flow is None:
            flow = FlowRecord(next_id, key, info.src, info.dst, info.timestamp, info.timestamp)
            next_id += 1
            active[key] = flow
        flow.add(info)
        if flow.closes_on(info):
            finished.append(active.pop(key))

    finished.extend(active.values())
    finished.sort(key=lambda f: (f.start_ns, f.flow_id))
    logger.debug(f"{ip_packets} IP packets in {len(finished)} flows, {non_ip} non-IP frames")
    return FlowExtraction(finished, arp_counts, non_ip, ip_packets)


def flow_label(labels: Iterable[LabelTag]) -> LabelTag:
    """BENIGN unless some packet is malicious; then the most frequent malicious label.

    Ties go to the label seen first.
    """
    counts: Counter[LabelTag] = Counter()
    first_seen: dict[LabelTag, int] = {}
    for position, label in enumerate(labels):
        if label is LabelTag.BENIGN:
            continue
        counts[label] += 1
        first_seen.setdefault(label, position)
    if not counts:
        return LabelTag.BENIGN
    return min(counts, key=lambda label: (-counts[label], first_seen[label]))


def label_flows(flows: list[FlowRecord], labels: list[LabelTag]) -> list[FlowRecord]:
    """Set each flow's label from its member packets; ``labels`` is indexed by frame index."""
    for flow in flows:
        flow.label = flow_label(labels[i] for i in flow.packets)
    return flows


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def flow_row(flow: FlowRecord) -> list[str | int]:
    features = flow.features()
    row: list[str | int] = [
        flow.flow_id,
        str(flow.src[0]),
        str(flow.dst[0]),
        flow.src[1],
        flow.dst[1],
        flow.protocol,
        flow.start_ns,
        flow.duration_ns,
        flow.fwd_pkts,
        flow.bwd_pkts,
        flow.fwd_bytes,
        flow.bwd_bytes,
    ]
    for prefix in ("fwd", "bwd"):
        row += [
            _fmt(features[f"{prefix}_len_mean"]),
            _fmt(features[f"{prefix}_len_std"]),
            features[f"{prefix}_len_min"],
            features[f"{prefix}_len_max"],
        ]
    for prefix in ("fwd", "bwd"):
        row += [_fmt(features[f"{prefix}_iat_mean"]), _fmt(features[f"{prefix}_iat_std"])]
    row += [flow.flag_count(name) for name, _ in COUNTED_FLAGS]
    row.append(flow.label.value)
    return row


def emit_flow_csv(flows: list[FlowRecord], path: str | Path) -> int:
    ordered = sorted(flows, key=lambda f: (f.start_ns, f.flow_id))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FLOW_CSV_HEADER)
        for flow in ordered:
            writer.writerow(flow_row(flow))
    return len(ordered)


def write_arp_summary(arp_counts: Counter[LabelTag], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ARP_SUMMARY_HEADER)
        for label in LabelTag:
            if arp_counts[label]:
                writer.writerow([label.value, arp_counts[label]])
