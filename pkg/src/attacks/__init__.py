"""Attacker host behaviour: reconnaissance, MitM, DoS and brute force."""

from src.attacks.base import Attacker, AttackPhase, PhaseRunner
from src.attacks.bruteforce import BruteForce, EmptyWordlistError, Wordlist, brute_force
from src.attacks.floods import IcmpIgmpFlood, PushAckFlood, icmp_igmp_flood, push_ack_flood
from src.attacks.mitm import (
    ArpPoisoner,
    ArpPoisonPhase,
    LootRecord,
    MitmRelay,
    UnknownVictimMacError,
    arp_poison,
    mitm_relay,
)
from src.attacks.scan import NetworkScan, network_scan
from src.attacks.tcpkill import TcpConnectionKiller, tcp_connection_killer

__all__ = [
    "ArpPoisonPhase",
    "ArpPoisoner",
    "AttackPhase",
    "Attacker",
    "BruteForce",
    "EmptyWordlistError",
    "IcmpIgmpFlood",
    "LootRecord",
    "MitmRelay",
    "NetworkScan",
    "PhaseRunner",
    "PushAckFlood",
    "TcpConnectionKiller",
    "UnknownVictimMacError",
    "Wordlist",
    "arp_poison",
    "brute_force",
    "icmp_igmp_flood",
    "mitm_relay",
    "network_scan",
    "push_ack_flood",
    "tcp_connection_killer",
]
