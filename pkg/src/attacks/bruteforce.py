"""Sequential credential guessing against SSH and FTP."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from ipaddress import IPv4Address

from src.apps.base import EXCHANGE_TIMEOUT, Exchange
from src.apps.ftp import FTP_PORT, FtpControl, FtpStep
from src.apps.servers import ServiceMismatchError
from src.apps.ssh import CLIENT_BANNERS, SSH_PORT, SshClientConnection
from src.attacks.base import Attacker, AttackPhase
from src.engine import RngStream, SimTime
from src.models import BruteForceConfig, Credentials, LabelTag, OsTag, Provenance, ServiceKind
from src.netmodel.host import Host

logger = logging.getLogger(__name__)

USERNAMES = (
    "root", "admin", "administrator", "user", "test", "guest", "ubuntu",
    "ftp", "oracle", "pi", "support", "backup",
)
PASSWORDS = (
    "123456", "password", "12345678", "qwerty", "letmein", "welcome", "admin",
    "changeme", "dragon", "monkey", "iloveyou", "trustno1", "abc123", "master",
    "sunshine", "football", "shadow", "passw0rd", "P@ssw0rd", "toor",
)
PASSWORD_SUFFIXES = ("", "1", "123", "!", "2023", "2024")
MAX_WORDLIST = len(USERNAMES) * len(PASSWORDS) * len(PASSWORD_SUFFIXES)


class EmptyWordlistError(ValueError):
    """Raised when a brute-force phase has no candidates to try."""


@dataclass(slots=True)
class Wordlist:
    """Candidate pairs in attempt order.

    ``correct_attempt`` is the 1-based attempt number that succeeds, or None
    when the valid pair is not in the list.
    """

    pairs: list[Credentials]
    correct_attempt: int | None = None

    def __post_init__(self):
        if not self.pairs:
            raise EmptyWordlistError("brute-force wordlist is empty")

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def explicit(cls, pairs: list[Credentials], correct: Credentials) -> Wordlist:
        attempt = next((n for n, pair in enumerate(pairs, start=1) if pair == correct), None)
        return cls(list(pairs), attempt)

    @classmethod
    def generate(
        cls, size: int, correct: Credentials, rng: RngStream, *, include_correct: bool = True
    ) -> Wordlist:
        """Shuffled common username/password guesses, with the valid pair at a seeded index."""
        size = min(size, MAX_WORDLIST)
        candidates = [
            Credentials(username=user, password=f"{password}{suffix}")
            for user, password, suffix in itertools.product(
                USERNAMES, PASSWORDS, PASSWORD_SUFFIXES
            )
        ]
        candidates = [c for c in candidates if c != correct]
        for i in range(len(candidates) - 1, 0, -1):
            j = rng.draw(i + 1)
            candidates[i], candidates[j] = candidates[j], candidates[i]
        if not include_correct:
            return cls(candidates[:size])
        pairs = candidates[: size - 1]
        position = rng.draw(size)
        pairs.insert(position, correct)
        return cls(pairs, position + 1)


@dataclass(frozen=True, slots=True)
class AttemptRecord:
    attempt: int
    started_at: SimTime
    finished_at: SimTime
    username: str
    success: bool
    detail: str = ""


@dataclass(slots=True)
class _AttemptState:
    index: int = -1
    started_at: SimTime = 0
    attempts: list[AttemptRecord] = field(default_factory=list)


class BruteForce(AttackPhase):
    """One full TCP connection and login attempt per candidate.

    Attempt ``k`` starts ``attempt_interval`` after attempt ``k-1`` started,
    or as soon as it finished if it took longer. Stops at the first success.
    """

    kind = "brute_force"

    def __init__(
        self,
        attacker: Attacker,
        config: BruteForceConfig,
        target: Host,
        wordlist: Wordlist,
    ):
        super().__init__(attacker)
        self.service = ServiceKind(config.service)
        self.label = LabelTag.BF_SSH if self.service is ServiceKind.SSH else LabelTag.BF_FTP
        port = SSH_PORT if self.service is ServiceKind.SSH else FTP_PORT
        if target.services.get(port) is not self.service:
            raise ServiceMismatchError(
                f"brute_force {self.service.value}: {target.name} does not offer it on port {port}"
            )
        self.config = config
        self.target = target
        self.port = port
        self.wordlist = wordlist
        self.interval = config.attempt_interval
        self.state = _AttemptState()
        self._frames_before = 0

        # Exchange owner interface
        self.agent_id = attacker.host.name
        self.host = attacker.host
        self.target_ip: IPv4Address = target.ip
        self.rng = attacker.rng.child(f"bf:{self.service.value}")
        self.exchange_timeout = EXCHANGE_TIMEOUT
        self.provenance = Provenance(self.agent_id, self.label)

    @property
    def attempts(self) -> list[AttemptRecord]:
        return self.state.attempts

    @property
    def succeeded(self) -> bool:
        return any(a.success for a in self.state.attempts)

    def start(self) -> None:
        self._frames_before = self.host.counters["frames_sent"]
        self._attempt()

    def _attempt(self) -> None:
        state = self.state
        state.index += 1
        state.started_at = self.attacker.now
        candidate = self.wordlist.pairs[state.index]
        exchange = Exchange(self)
        if self.service is ServiceKind.SSH:
            handler = SshClientConnection(
                exchange,
                CLIENT_BANNERS[OsTag.KALI],
                candidate,
                self.rng,
                on_auth=lambda ok: exchange.finish(
                    ok, "valid credentials" if ok else "authentication failed", graceful=True
                ),
            )
        else:
            steps = [
                FtpStep(f"USER {candidate.username}", 331),
                FtpStep(f"PASS {candidate.password}", 230),
                FtpStep("QUIT", 221),
            ]
            handler = FtpControl(
                exchange,
                steps,
                on_outcome=lambda ok, detail: exchange.finish(ok, detail, graceful=True),
            )
        exchange.connect(self.port, handler)

    def exchange_finished(self, exchange: Exchange, success: bool, detail: str) -> None:
        state = self.state
        now = self.attacker.now
        candidate = self.wordlist.pairs[state.index]
        state.attempts.append(
            AttemptRecord(state.index + 1, exchange.started_at, now, candidate.username, success, detail)
        )
        logger.debug(f"{self.label.value} attempt {state.index + 1}: {candidate.username} {detail}")
        if success:
            logger.info(
                f"{self.label.value}: valid credentials for {self.target.name} "
                f"found on attempt {state.index + 1}"
            )
            self._complete()
        elif state.index + 1 >= len(self.wordlist):
            logger.info(f"{self.label.value}: wordlist exhausted after {len(self.wordlist)} attempts")
            self._complete()
        else:
            at = max(state.started_at + self.interval, now)
            self.attacker.scheduler.schedule(at, self._attempt, note=f"{self.label.value}:attempt")

    def _complete(self) -> None:
        attempts = self.state.attempts
        self.frames_emitted = self.host.counters["frames_sent"] - self._frames_before
        self.details = {
            "target": self.target.name,
            "attempts": len(attempts),
            "failed": sum(1 for a in attempts if not a.success),
            "succeeded": self.succeeded,
            "wordlist_size": len(self.wordlist),
        }
        self.finish()


def brute_force(
    attacker: Attacker,
    config: BruteForceConfig,
    target: Host,
    correct: Credentials,
) -> BruteForce:
    """Build a brute-force phase with the configured or a generated wordlist.

    Raises:
        EmptyWordlistError: If the configured wordlist is empty
        ServiceMismatchError: If ``target`` does not run the service
    """
    if config.wordlist is not None:
        wordlist = Wordlist.explicit(config.wordlist, correct)
    else:
        rng = attacker.rng.child(f"wordlist:{config.service}")
        wordlist = Wordlist.generate(
            config.wordlist_size, correct, rng, include_correct=config.include_correct
        )
    return BruteForce(attacker, config, target, wordlist)
