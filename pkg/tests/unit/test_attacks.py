"""Unit tests for the attacker phases: scan, ARP poisoning, floods, RST injection, brute force."""

from ipaddress import IPv4Address, IPv4Network

import pytest

from src.apps import ServiceMismatchError, run_benign_agent
from src.attacks import (
    ArpPoisoner,
    ArpPoisonPhase,
    Attacker,
    AttackPhase,
    EmptyWordlistError,
    IcmpIgmpFlood,
    NetworkScan,
    PhaseRunner,
    PushAckFlood,
    TcpConnectionKiller,
    UnknownVictimMacError,
    Wordlist,
    brute_force,
)
from src.attacks.bruteforce import MAX_WORDLIST
from src.attacks.floods import Flood
from src.attacks.mitm import default_victim_pairs
from src.attacks.scan import guess_os, scan_duration
from src.attacks.tcpkill import connection_id, forged_resets
from src.engine import NS_PER_SEC, RngStream
from src.models import (
    AgentKind,
    ArpPoisonPhaseConfig,
    BenignAgentConfig,
    BruteForceConfig,
    Credentials,
    IcmpIgmpFloodConfig,
    LabelTag,
    PushAckFloodConfig,
    ScanPhaseConfig,
    TcpKillConfig,
)
from src.protocols.packets import (
    IcmpMessage,
    IgmpMessage,
    IpProtocol,
    Ipv4Packet,
    TcpFlags,
    TcpSegment,
    decode_frame,
)
from src.netmodel.host import TcpStack
from src.protocols.tcp import TcpNotice

SEED = 7
CLIENT = IPv4Address("192.168.132.10")
SERVER = IPv4Address("192.168.128.20")


def http_lane(topology, services, log, mean_interval="2s"):
    config = BenignAgentConfig(
        kind=AgentKind.HTTP_BROWSER, host="user-1", target="web-server", mean_interval=mean_interval
    )
    return run_benign_agent(
        config, RngStream(SEED, "lane:http"), topology=topology, services=services, log=log
    )


class TimedPhase(AttackPhase):
    label = LabelTag.MITM_SCAN
    kind = "timed"

    def __init__(self, attacker, length, label=LabelTag.MITM_SCAN):
        super().__init__(attacker)
        self.length = length
        self.label = label

    def start(self):
        self.attacker.scheduler.schedule_in(self.length, self.finish)


# --- pure helpers -------------------------------------------------------------


def test_forged_resets_hit_next_expected_sequence():
    seg = TcpSegment(40001, 80, 1000, 5000, TcpFlags.PSH | TcpFlags.ACK, b"abcde")
    to_receiver, to_sender = forged_resets(Ipv4Packet(CLIENT, SERVER, IpProtocol.TCP, seg))

    assert (to_receiver.src_port, to_receiver.dst_port) == (40001, 80)
    assert (to_receiver.seq, to_receiver.flags) == (1005, TcpFlags.RST)
    assert (to_sender.src_port, to_sender.dst_port) == (80, 40001)
    assert (to_sender.seq, to_sender.flags) == (5000, TcpFlags.RST)

    wrapped = TcpSegment(40001, 80, 2**32 - 2, 7, TcpFlags.FIN | TcpFlags.ACK, b"xyz")
    to_receiver, _ = forged_resets(Ipv4Packet(CLIENT, SERVER, IpProtocol.TCP, wrapped))
    assert to_receiver.seq == 2


def test_connection_id_ignores_direction():
    forward = Ipv4Packet(CLIENT, SERVER, IpProtocol.TCP, TcpSegment(40001, 80, 1, 2, TcpFlags.ACK))
    backward = Ipv4Packet(SERVER, CLIENT, IpProtocol.TCP, TcpSegment(80, 40001, 2, 1, TcpFlags.ACK))
    other = Ipv4Packet(CLIENT, SERVER, IpProtocol.TCP, TcpSegment(40002, 80, 1, 2, TcpFlags.ACK))
    assert connection_id(forward) == connection_id(backward)
    assert connection_id(forward) != connection_id(other)


def test_guess_os_from_ttl():
    assert guess_os(128) == "Windows"
    assert guess_os(127) == "Windows"
    assert guess_os(64) == "Linux"
    assert guess_os(63) == "Linux"


def test_scan_duration():
    config = ScanPhaseConfig(ports=[21, 22, 22], probe_interval="10ms", grace="2s")
    assert scan_duration(config, 3) == 254 * 10_000_000 + 3 * 2 * 10_000_000 + 4 * NS_PER_SEC


def test_generated_wordlist_places_correct_pair_once():
    correct = Credentials(username="sysadmin", password="Adm1n!2024")
    wordlist = Wordlist.generate(200, correct, RngStream(SEED, "wordlist"))

    assert len(wordlist) == 200
    assert wordlist.pairs[wordlist.correct_attempt - 1] == correct
    assert wordlist.pairs.count(correct) == 1
    assert len({(p.username, p.password) for p in wordlist.pairs}) == 200

    again = Wordlist.generate(200, correct, RngStream(SEED, "wordlist"))
    assert again.pairs == wordlist.pairs


def test_generated_wordlist_without_correct_pair():
    correct = Credentials(username="ftpuser", password="Tr4nsfer#9")
    wordlist = Wordlist.generate(50, correct, RngStream(SEED, "w"), include_correct=False)
    assert len(wordlist) == 50
    assert wordlist.correct_attempt is None
    assert correct not in wordlist.pairs

    huge = Wordlist.generate(10**6, correct, RngStream(SEED, "w"))
    assert len(huge) == MAX_WORDLIST


def test_explicit_wordlist():
    correct = Credentials(username="a", password="b")
    pairs = [Credentials(username="x", password="y"), correct]
    assert Wordlist.explicit(pairs, correct).correct_attempt == 2
    assert Wordlist.explicit(pairs[:1], correct).correct_attempt is None
    with pytest.raises(EmptyWordlistError):
        Wordlist.explicit([], correct)


# --- phase machinery ----------------------------------------------------------


def test_phase_runner_chains_with_exact_sleep(topology, scheduler):
    """A chained phase starts exactly ``sleep_before`` after its predecessor ends."""
    attacker = Attacker(topology, SEED)
    first = TimedPhase(attacker, 10 * NS_PER_SEC, LabelTag.MITM_SCAN)
    second = TimedPhase(attacker, 5 * NS_PER_SEC, LabelTag.MITM_ARP)
    late = TimedPhase(attacker, NS_PER_SEC, LabelTag.BF_SSH)

    runner = PhaseRunner(scheduler, end_of_run=3600 * NS_PER_SEC)
    runner.add(first, 60 * NS_PER_SEC)
    runner.add(second, None, sleep_before=1800 * NS_PER_SEC)
    runner.add(late, 4000 * NS_PER_SEC)
    runner.arm()
    scheduler.run_until(3600 * NS_PER_SEC)

    assert first.started_at == 60 * NS_PER_SEC
    assert first.ended_at == 70 * NS_PER_SEC
    assert second.started_at - first.ended_at == 1_800_000_000_000
    assert attacker.label is LabelTag.MITM_ARP
    assert attacker.host.provenance.label is LabelTag.MITM_ARP

    outcomes = runner.outcomes()
    assert [o.label for o in outcomes] == [LabelTag.MITM_SCAN, LabelTag.MITM_ARP, LabelTag.BF_SSH]
    assert outcomes[2].start_ns == -1
    assert outcomes[2].end_ns is None


def test_first_chained_phase_waits_from_zero(topology, scheduler):
    attacker = Attacker(topology, SEED)
    phase = TimedPhase(attacker, NS_PER_SEC)
    runner = PhaseRunner(scheduler, end_of_run=100 * NS_PER_SEC)
    runner.add(phase, None, sleep_before=30 * NS_PER_SEC)
    runner.arm()
    scheduler.run_until(100 * NS_PER_SEC)
    assert phase.started_at == 30 * NS_PER_SEC


# --- floods -------------------------------------------------------------------


def test_flood_interval_jitter_bounds(topology):
    attacker = Attacker(topology, SEED)
    flood = PushAckFlood(attacker, SERVER, PushAckFloodConfig(rate=500))
    intervals = [flood.next_interval() for _ in range(2000)]
    assert min(intervals) >= 1_800_000
    assert max(intervals) <= 2_200_000
    assert abs(sum(intervals) / len(intervals) - 2_000_000) < 20_000


def test_flood_without_a_packet_builder_cannot_be_built(topology):
    attacker = Attacker(topology, SEED)
    with pytest.raises(TypeError):
        Flood(attacker, SERVER, 100, NS_PER_SEC, spoof=False)


def test_icmp_igmp_mix_follows_fraction(topology):
    attacker = Attacker(topology, SEED)
    icmp_only = IcmpIgmpFlood(attacker, SERVER, IcmpIgmpFloodConfig(icmp_fraction=1.0))
    assert all(isinstance(icmp_only.build_packet().payload, IcmpMessage) for _ in range(50))

    igmp_only = IcmpIgmpFlood(attacker, SERVER, IcmpIgmpFloodConfig(icmp_fraction=0.0))
    for _ in range(50):
        packet = igmp_only.build_packet()
        assert isinstance(packet.payload, IgmpMessage)
        assert packet.payload.group in IPv4Network("239.255.0.0/16")
        assert packet.ttl == 64
    assert igmp_only.counts["igmp"] == 50


def test_spoofed_sources_stay_in_unicast_range(topology):
    attacker = Attacker(topology, SEED)
    flood = PushAckFlood(attacker, SERVER, PushAckFloodConfig(spoof=True))
    for _ in range(200):
        src = flood.build_packet().src
        assert IPv4Address("1.0.0.0") <= src <= IPv4Address("223.255.255.255")


def test_push_ack_flood_rate_and_labels(topology, scheduler, capture):
    """100 pps for 10 s emits about 1000 frames, each captured with the flood label."""
    attacker = Attacker(topology, SEED)
    config = PushAckFloodConfig(rate=100, duration="10s")
    flood = PushAckFlood(attacker, topology.ip_of("web-server"), config)
    scheduler.schedule(0, flood.begin)
    scheduler.run_until(11 * NS_PER_SEC)

    assert flood.ended_at == 10 * NS_PER_SEC
    assert abs(flood.frames_emitted - 1000) <= 10
    assert flood.details["emitted"] == flood.frames_emitted
    assert capture.label_counts[LabelTag.DOS_PSHACK] == flood.frames_emitted

    flagged = [r for r in capture if r.label is LabelTag.DOS_PSHACK]
    segment = decode_frame(flagged[0].data).ip.tcp
    assert segment.flags == TcpFlags.PSH | TcpFlags.ACK
    assert segment.dst_port == 80
    assert 16 <= len(segment.payload) <= 64


# --- reconnaissance -----------------------------------------------------------


def test_network_scan_finds_services_and_os(served_topology, scheduler, capture):
    attacker = Attacker(served_topology, SEED)
    config = ScanPhaseConfig(ports=[21, 22, 80, 443], probe_interval="1ms", grace="1s")
    scan = NetworkScan(attacker, config)
    scheduler.schedule(0, scan.begin)
    scheduler.run_until(5 * NS_PER_SEC)

    report = scan.report
    assert scan.ended_at is not None
    assert attacker.scan_report is report
    assert [str(h.ip) for h in report.hosts] == [
        "192.168.128.1",
        "192.168.128.10",
        "192.168.128.20",
        "192.168.128.30",
        "192.168.128.31",
    ]
    assert report.host("192.168.128.10").open_ports == {21: "ftp"}
    assert report.host("192.168.128.20").open_ports == {80: "http"}
    assert report.host("192.168.128.30").open_ports == {22: "ssh"}
    assert report.host("192.168.128.31").open_ports == {22: "ssh"}
    assert report.host("192.168.128.1").open_ports == {}
    assert report.host("192.168.128.1").closed_ports == 4

    assert report.host("192.168.128.30").os_guess == "Windows"
    assert report.host("192.168.128.30").observed_ttl == 127
    assert all(
        h.os_guess == "Linux" for h in report.hosts if str(h.ip) != "192.168.128.30"
    )
    assert scan.frames_emitted == report.probes_sent == 254 + 5 * 4

    packets = [(r, decode_frame(r.data).ip) for r in capture]
    from_attacker = [r for r, packet in packets if packet is not None and packet.src == attacker.ip]
    assert from_attacker
    assert all(r.label is LabelTag.MITM_SCAN for r in from_attacker)


# --- man in the middle --------------------------------------------------------


def test_poisoned_pair_is_relayed_transparently(
    served_topology, services, app_log, scheduler, capture
):
    """Victims keep working through the relay while their frames carry the MitM label."""
    attacker = Attacker(served_topology, SEED)
    user_ip = served_topology.ip_of("user-1")
    router_ip = served_topology.router_ip("user")
    config = ArpPoisonPhaseConfig(victims=[(user_ip, router_ip)], period="2s", duration="60s")
    phase = ArpPoisonPhase(attacker, config, end_of_run=80 * NS_PER_SEC)
    lane = http_lane(served_topology, services, app_log)
    scheduler.schedule(10 * NS_PER_SEC, phase.begin)
    scheduler.run_until(80 * NS_PER_SEC)

    assert phase.ended_at == 70 * NS_PER_SEC
    assert phase.relay.relayed > 0
    assert phase.details["relayed"] == phase.relay.relayed
    assert phase.poisoner.corrective == 2
    records = app_log.for_agent(lane.agent_id)
    assert records
    assert all(r.success for r in records), [r.detail for r in records if not r.success]

    poisoned = []
    for record in capture:
        packet = decode_frame(record.data).ip
        if packet is None or packet.src != user_ip:
            continue
        if record.timestamp < 10 * NS_PER_SEC:
            assert record.label is LabelTag.BENIGN
        elif 11 * NS_PER_SEC <= record.timestamp < 70 * NS_PER_SEC:
            poisoned.append(record)
    assert poisoned
    assert all(r.label is LabelTag.MITM_ARP for r in poisoned)

    router = served_topology.router
    assert router.arp_table.lookup(user_ip) == served_topology.hosts["user-1"].mac


def test_poisoner_without_resolution_needs_known_macs(topology):
    attacker = Attacker(topology, SEED)
    pairs = [(topology.ip_of("user-1"), topology.router_ip("user"))]
    with pytest.raises(UnknownVictimMacError):
        ArpPoisoner(attacker, pairs, 2 * NS_PER_SEC, LabelTag.MITM_ARP, resolve=False)


def test_default_victims_are_user_lan_hosts_and_router(topology):
    attacker = Attacker(topology, SEED)
    pairs = default_victim_pairs(attacker)
    assert [str(a) for a, _ in pairs] == [f"192.168.132.{i}" for i in range(10, 16)]
    assert {b for _, b in pairs} == {IPv4Address("192.168.132.1")}


def test_connection_killer_resets_observed_connections(
    served_topology, services, app_log, scheduler
):
    attacker = Attacker(served_topology, SEED)
    killer = TcpConnectionKiller(attacker, TcpKillConfig(duration="60s", poison_period="2s"))
    lane = http_lane(served_topology, services, app_log)
    scheduler.schedule(10 * NS_PER_SEC, killer.begin)
    scheduler.run_until(80 * NS_PER_SEC)

    assert killer.kills
    assert killer.details["connections_killed"] == len(killer.kills)
    assert killer.details["resets_sent"] == 2 * len(killer.kills)

    for kill in killer.kills:
        for (ip, port), (peer_ip, peer_port) in (
            (kill.sender, kill.receiver),
            (kill.receiver, kill.sender),
        ):
            host = served_topology.host_by_ip(ip)
            assert (port, peer_ip, peer_port) not in host.tcp.connections

    window = range(11 * NS_PER_SEC, 70 * NS_PER_SEC)
    during = [r for r in app_log.for_agent(lane.agent_id) if r.started_at in window]
    failures = [r for r in during if not r.success]
    assert failures
    assert all(r.detail == "connection reset" for r in failures)


def test_connection_killer_resets_both_endpoints(
    served_topology, services, app_log, scheduler, monkeypatch
):
    """Each connection first seen once poisoning has settled closes by RST on both hosts."""
    closes: dict[tuple[str, tuple], bool] = {}
    release = TcpStack._release

    def recording_release(stack, sock, notices):
        if not sock.reported_closed:
            closes[(stack.host.name, sock.key)] = TcpNotice.RESET in notices
        release(stack, sock, notices)

    monkeypatch.setattr(TcpStack, "_release", recording_release)
    attacker = Attacker(served_topology, SEED)
    killer = TcpConnectionKiller(attacker, TcpKillConfig(duration="60s", poison_period="2s"))
    http_lane(served_topology, services, app_log)
    scheduler.schedule(10 * NS_PER_SEC, killer.begin)
    scheduler.run_until(80 * NS_PER_SEC)

    settled = [k for k in killer.kills if k.time >= 11 * NS_PER_SEC]
    assert settled
    for kill in settled:
        for (ip, port), (peer_ip, peer_port) in (
            (kill.sender, kill.receiver),
            (kill.receiver, kill.sender),
        ):
            host = served_topology.host_by_ip(ip)
            assert closes[(host.name, (port, peer_ip, peer_port))] is True


# --- brute force --------------------------------------------------------------


def test_ssh_brute_force_stops_at_valid_pair(served_topology, services, scheduler):
    attacker = Attacker(served_topology, SEED)
    wrong = [Credentials(username="root", password=f"guess{i}") for i in range(3)]
    config = BruteForceConfig(
        service="ssh",
        target="admin-ubuntu",
        wordlist=[*wrong, services.ssh_credentials, Credentials(username="x", password="y")],
        attempt_interval="2s",
    )
    phase = brute_force(
        attacker, config, served_topology.hosts["admin-ubuntu"], services.ssh_credentials
    )
    scheduler.schedule(0, phase.begin)
    scheduler.run_until(30 * NS_PER_SEC)

    assert phase.label is LabelTag.BF_SSH
    assert phase.succeeded
    assert [a.success for a in phase.attempts] == [False, False, False, True]
    assert [a.started_at for a in phase.attempts] == [i * 2 * NS_PER_SEC for i in range(4)]
    assert phase.details["failed"] == 3
    assert phase.ended_at is not None
    assert phase.frames_emitted > 0


def test_brute_force_succeeds_on_the_ordinal_of_the_valid_pair(
    served_topology, services, scheduler
):
    """The valid pair 37th in a 100-pair list takes 37 attempts, 36 of them failed."""
    attacker = Attacker(served_topology, SEED)
    pairs = [Credentials(username="root", password=f"guess{i}") for i in range(100)]
    pairs[36] = services.ssh_credentials
    config = BruteForceConfig(
        service="ssh", target="admin-ubuntu", wordlist=pairs, attempt_interval="2s"
    )
    phase = brute_force(
        attacker, config, served_topology.hosts["admin-ubuntu"], services.ssh_credentials
    )
    assert phase.wordlist.correct_attempt == 37

    scheduler.schedule(0, phase.begin)
    scheduler.run_until(120 * NS_PER_SEC)

    assert len(phase.attempts) == 37
    assert [a.attempt for a in phase.attempts] == list(range(1, 38))
    assert phase.attempts[-1].success
    assert phase.details["failed"] == 36
    assert phase.details["succeeded"]


def test_ftp_brute_force_exhausts_wordlist(served_topology, services, scheduler):
    attacker = Attacker(served_topology, SEED)
    config = BruteForceConfig(
        service="ftp", target="ftp-server", wordlist_size=3, include_correct=False
    )
    phase = brute_force(
        attacker, config, served_topology.hosts["ftp-server"], services.ftp_credentials
    )
    scheduler.schedule(0, phase.begin)
    scheduler.run_until(30 * NS_PER_SEC)

    assert phase.label is LabelTag.BF_FTP
    assert not phase.succeeded
    assert len(phase.attempts) == 3
    assert all(a.detail.startswith("530") for a in phase.attempts)
    assert phase.details["wordlist_size"] == 3


def test_brute_force_needs_matching_service(served_topology, services):
    attacker = Attacker(served_topology, SEED)
    config = BruteForceConfig(service="ssh", target="ftp-server")
    with pytest.raises(ServiceMismatchError):
        brute_force(attacker, config, served_topology.hosts["ftp-server"], services.ssh_credentials)

    empty = BruteForceConfig(service="ftp", target="ftp-server", wordlist=[])
    with pytest.raises(EmptyWordlistError):
        brute_force(attacker, empty, served_topology.hosts["ftp-server"], services.ftp_credentials)
