"""SPAN capture: labelled frame records, pcap and label CSV files."""

from __future__ import annotations

import csv
import logging
import sqlite3
import struct
import tempfile
from collections import Counter
from collections.abc import Iterable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from src.engine import NS_PER_SEC, NS_PER_US, SimTime
from src.models import LabelTag
from src.netmodel.switch import Switch
from src.netmodel.topology import Topology
from src.protocols.packets import EthernetFrame, encode_frame

logger = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
PCAP_VERSION = (2, 4)
PCAP_SNAPLEN = 65535
LINKTYPE_ETHERNET = 1
PCAP_GLOBAL_HEADER = struct.Struct("<IHHiIII")
PCAP_RECORD_HEADER = struct.Struct("<IIII")

LABELS_HEADER = ["frame_index", "timestamp_ns", "agent_id", "label"]


class NoSpanPortError(ValueError):
    """Raised when capture is attached to a switch without a SPAN port."""


class PcapFormatError(ValueError):
    """Raised when a file is not a little-endian classic Ethernet pcap."""


@dataclass(frozen=True, slots=True)
class CaptureRecord:
    index: int
    timestamp: SimTime
    data: bytes
    agent_id: str
    label: LabelTag


class SpillStore:
    """SQLite table holding capture records that no longer fit in memory."""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._init_db()

    @contextmanager
    def _cursor(self):
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        try:
            yield cursor
        except Exception:
            conn.rollback()
            raise
        else:
            conn.commit()
        finally:
            conn.close()

    def _init_db(self):
        with self._cursor() as cursor:
            cursor.execute("PRAGMA journal_mode=WAL")
            cursor.execute("DROP TABLE IF EXISTS records")
            cursor.execute("""
                CREATE TABLE records (
                    idx INTEGER PRIMARY KEY,
                    ts INTEGER NOT NULL,
                    data BLOB NOT NULL,
                    agent_id TEXT NOT NULL,
                    label TEXT NOT NULL
                )
            """)

    def insert(self, records: list[CaptureRecord]) -> None:
        with self._cursor() as cursor:
            cursor.executemany(
                "INSERT INTO records (idx, ts, data, agent_id, label) VALUES (?, ?, ?, ?, ?)",
                [(r.index, r.timestamp, r.data, r.agent_id, r.label.value) for r in records],
            )

    def __iter__(self) -> Iterator[CaptureRecord]:
        with self._cursor() as cursor:
            cursor.execute("SELECT idx, ts, data, agent_id, label FROM records ORDER BY idx")
            for idx, ts, data, agent_id, label in cursor:
                yield CaptureRecord(idx, ts, bytes(data), agent_id, LabelTag(label))


class Capture:
    """Ordered capture records; above ``spill_threshold`` they move to SQLite."""

    def __init__(self, spill_threshold: int | None = None, spill_dir: str | None = None):
        self.spill_threshold = spill_threshold
        self.spill_dir = spill_dir
        self._memory: list[CaptureRecord] = []
        self._spill: SpillStore | None = None
        self._count = 0
        self.label_counts: Counter[LabelTag] = Counter()

    def __len__(self) -> int:
        return self._count

    def __iter__(self) -> Iterator[CaptureRecord]:
        if self._spill is not None:
            yield from self._spill
        yield from self._memory

    @property
    def spilled(self) -> bool:
        return self._spill is not None

    def append(self, timestamp: SimTime, data: bytes, agent_id: str, label: LabelTag) -> CaptureRecord:
        record = CaptureRecord(self._count, timestamp, data, agent_id, label)
        self._memory.append(record)
        self._count += 1
        self.label_counts[label] += 1
        if self.spill_threshold is not None and len(self._memory) >= self.spill_threshold:
            self._flush()
        return record

    def _flush(self) -> None:
        if self._spill is None:
            directory = Path(self.spill_dir or tempfile.gettempdir())
            directory.mkdir(parents=True, exist_ok=True)
            handle = tempfile.NamedTemporaryFile(
                prefix="nidsim-capture-", suffix=".db", dir=directory, delete=False
            )
            handle.close()
            self._spill = SpillStore(handle.name)
            logger.warning(
                f"Capture exceeded {self.spill_threshold} in-memory records, spilling to {handle.name}"
            )
        self._spill.insert(self._memory)
        self._memory = []

    def close(self) -> None:
        """Remove the spill database, if any."""
        if self._spill is not None:
            path = Path(self._spill.db_path)
            for suffix in ("", "-wal", "-shm"):
                Path(f"{path}{suffix}").unlink(missing_ok=True)
            self._spill = None


class CaptureSink:
    """SPAN sink that encodes each mirrored frame as it leaves the port."""

    def __init__(self, capture: Capture):
        self.capture = capture

    def __call__(self, frame: EthernetFrame, now: SimTime) -> None:
        meta = frame.meta
        agent_id = meta.agent_id if meta is not None else "unknown"
        label = meta.label if meta is not None else LabelTag.BENIGN
        self.capture.append(now, encode_frame(frame), agent_id, label)


def attach_capture(
    topology: Topology, switch: Switch | None = None, capture: Capture | None = None
) -> CaptureSink:
    """Record every frame egressing the SPAN port of ``switch``.

    Args:
        topology: The network (its Service-LAN switch is used by default)
        switch: Switch to tap
        capture: Record store (a fresh in-memory one when None)

    Raises:
        NoSpanPortError: If the switch has no SPAN port
    """
    switch = switch or topology.span_switch
    if switch.span_port is None:
        raise NoSpanPortError(f"switch {switch.name} has no SPAN port")
    sink = CaptureSink(capture if capture is not None else Capture())
    switch.add_span_sink(sink)
    logger.debug(f"Capturing SPAN of {switch.name} for {switch.span_consumer or 'an unnamed sink'}")
    return sink


def write_pcap(records: Iterable[CaptureRecord], path: str | Path) -> int:
    """Write a classic little-endian pcap (microsecond timestamps). Returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(
            PCAP_GLOBAL_HEADER.pack(
                PCAP_MAGIC, *PCAP_VERSION, 0, 0, PCAP_SNAPLEN, LINKTYPE_ETHERNET
            )
        )
        for record in records:
            seconds, rest = divmod(record.timestamp, NS_PER_SEC)
            length = len(record.data)
            fh.write(PCAP_RECORD_HEADER.pack(seconds, rest // NS_PER_US, length, length))
            fh.write(record.data)
            count += 1
    return count


def read_pcap(path: str | Path) -> Iterator[tuple[SimTime, bytes]]:
    """Yield (timestamp in ns, frame bytes) from a file written by ``write_pcap``.

    Raises:
        PcapFormatError: On a foreign magic, link type or a truncated record
    """
    with open(path, "rb") as fh:
        header = fh.read(PCAP_GLOBAL_HEADER.size)
        if len(header) < PCAP_GLOBAL_HEADER.size:
            raise PcapFormatError(f"{path}: truncated global header")
        magic, _, _, _, _, _, linktype = PCAP_GLOBAL_HEADER.unpack(header)
        if magic != PCAP_MAGIC:
            raise PcapFormatError(f"{path}: unsupported magic {magic:#010x}")
        if linktype != LINKTYPE_ETHERNET:
            raise PcapFormatError(f"{path}: link type {linktype} is not Ethernet")
        while chunk := fh.read(PCAP_RECORD_HEADER.size):
            if len(chunk) < PCAP_RECORD_HEADER.size:
                raise PcapFormatError(f"{path}: truncated record header")
            ts_sec, ts_usec, incl_len, _ = PCAP_RECORD_HEADER.unpack(chunk)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise PcapFormatError(f"{path}: truncated record body")
            yield ts_sec * NS_PER_SEC + ts_usec * NS_PER_US, data


def write_labels(records: Iterable[CaptureRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        for record in records:
            writer.writerow([record.index, record.timestamp, record.agent_id, record.label.value])
            count += 1
    return count


def read_labels(path: str | Path) -> list[tuple[int, SimTime, str, LabelTag]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABELS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        return [(int(i), int(ts), agent, LabelTag(label)) for i, ts, agent, label in reader]


def load_capture(pcap_path: str | Path, labels_path: str | Path) -> Capture:
    """Rebuild a capture from a pcap and its label sidecar.

    Timestamps come from the label file, which keeps nanosecond precision.
    """
    labels = read_labels(labels_path)
    capture = Capture()
    frames = list(read_pcap(pcap_path))
    if len(frames) != len(labels):
        raise ValueError(f"{len(frames)} pcap records but {len(labels)} label rows")
    for (_, data), (_, ts, agent_id, label) in zip(frames, labels, strict=True):
        capture.append(ts, data, agent_id, label)
    return capture
