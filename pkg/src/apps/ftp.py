"""FTP over a control connection with passive-mode data transfers."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from ipaddress import IPv4Address

from src.apps.base import BaseAgent, Exchange, ExchangeHandler
from src.engine import RngStream
from src.models import Credentials
from src.netmodel.host import Host, TcpHandler, TcpSocket
from src.protocols.tcp import TcpNotice

logger = logging.getLogger(__name__)

FTP_PORT = 21
PASSIVE_PORTS = (50000, 50999)
BANNER = "220 (vsFTPd 3.0.5)"

FILES: dict[str, int] = {
    "backup-2024-03.tar.gz": 6144,
    "inventory.csv": 2310,
    "invoices.pdf": 4870,
    "orders.json": 1536,
    "readme.txt": 640,
}


def listing() -> bytes:
    lines = [
        f"-rw-r--r--    1 1001     1001     {size:>8} Mar 14 09:12 {name}"
        for name, size in sorted(FILES.items())
    ]
    return ("\r\n".join(lines) + "\r\n").encode()


def file_content(name: str) -> bytes:
    return RngStream(0, f"ftp-file:{name}").bytes(FILES[name])


def reply_code(line: str) -> int:
    return int(line[:3]) if line[:3].isdigit() else 0


class _LineBuffer:
    def __init__(self):
        self.buffer = b""

    def feed(self, data: bytes) -> list[str]:
        self.buffer += data
        *lines, self.buffer = self.buffer.split(b"\r\n")
        return [line.decode("latin-1") for line in lines]


# --- server -----------------------------------------------------------------


class _DataConnection(TcpHandler):
    """Server side of one passive data connection."""

    def __init__(self, session: FtpServerSession):
        self.session = session
        self.sock: TcpSocket | None = None

    def on_established(self, sock: TcpSocket) -> None:
        self.sock = sock
        self.session.data_ready(sock)

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()

    def on_closed(self, sock: TcpSocket, notice: TcpNotice) -> None:
        self.session.data_closed()


class FtpServerSession(TcpHandler):
    """One control connection: USER/PASS, SYST, PWD, PASV, LIST, RETR, QUIT."""

    def __init__(self, host: Host, credentials: Credentials, rng: RngStream):
        self.host = host
        self.credentials = credentials
        self.rng = rng
        self.lines = _LineBuffer()
        self.control: TcpSocket | None = None
        self.username: str | None = None
        self.logged_in = False
        self.data_port: int | None = None
        self.data_sock: TcpSocket | None = None
        self.pending_payload: bytes | None = None
        self.transfer_open = False

    def on_established(self, sock: TcpSocket) -> None:
        self.control = sock
        self._reply(BANNER)

    def _reply(self, text: str) -> None:
        if self.control is not None:
            self.control.send(f"{text}\r\n".encode())

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        for line in self.lines.feed(data):
            self._command(line)

    def on_peer_closed(self, sock: TcpSocket) -> None:
        self._release_data_port()
        sock.close()

    def on_closed(self, sock: TcpSocket, notice: TcpNotice) -> None:
        self._release_data_port()

    def _command(self, line: str) -> None:
        verb, _, arg = line.partition(" ")
        verb = verb.upper()
        if verb == "USER":
            self.username = arg
            self.logged_in = False
            self._reply("331 Please specify the password.")
        elif verb == "PASS":
            if self.username is None:
                self._reply("503 Login with USER first.")
            elif self.username == self.credentials.username and arg == self.credentials.password:
                self.logged_in = True
                self._reply("230 Login successful.")
            else:
                self.username = None
                self._reply("530 Login incorrect.")
        elif verb == "QUIT":
            self._reply("221 Goodbye.")
            self.control.close()
        elif not self.logged_in:
            self._reply("530 Please login with USER and PASS.")
        elif verb == "SYST":
            self._reply("215 UNIX Type: L8")
        elif verb == "PWD":
            self._reply(f'257 "/home/{self.username}" is the current directory')
        elif verb == "TYPE":
            self._reply("200 Switching to Binary mode.")
        elif verb == "PASV":
            self._open_passive()
        elif verb in ("LIST", "RETR"):
            self._transfer(verb, arg)
        else:
            self._reply("500 Unknown command.")

    def _open_passive(self) -> None:
        self._release_data_port()
        low, high = PASSIVE_PORTS
        port = low + self.rng.draw(high - low + 1)
        while port in self.host.tcp.listeners:
            port = low if port >= high else port + 1
        self.data_port = port
        self.host.tcp.listen(port, lambda sock: _DataConnection(self), max_half_open=1)
        ip = str(self.control.conn.local_ip).replace(".", ",")
        self._reply(f"227 Entering Passive Mode ({ip},{port >> 8},{port & 0xFF}).")

    def _transfer(self, verb: str, arg: str) -> None:
        if self.data_port is None:
            self._reply("425 Use PORT or PASV first.")
            return
        if verb == "RETR":
            if arg not in FILES:
                self._reply("550 Failed to open file.")
                return
            self.pending_payload = file_content(arg)
            self._reply(f"150 Opening BINARY mode data connection for {arg} ({FILES[arg]} bytes).")
        else:
            self.pending_payload = listing()
            self._reply("150 Here comes the directory listing.")
        self.transfer_open = True
        if self.data_sock is not None:
            self._send_payload()

    def data_ready(self, sock: TcpSocket) -> None:
        self.data_sock = sock
        if self.pending_payload is not None:
            self._send_payload()

    def _send_payload(self) -> None:
        self.data_sock.send(self.pending_payload)
        self.pending_payload = None
        self.data_sock.close()

    def data_closed(self) -> None:
        if self.transfer_open:
            self.transfer_open = False
            self._reply("226 Transfer complete.")
        self.data_sock = None
        self._release_data_port()

    def _release_data_port(self) -> None:
        if self.data_port is not None:
            self.host.tcp.listeners.pop(self.data_port, None)
            self.data_port = None


# --- client -----------------------------------------------------------------


def parse_pasv(line: str) -> tuple[IPv4Address, int]:
    inner = line[line.index("(") + 1 : line.index(")")]
    parts = [int(p) for p in inner.split(",")]
    return IPv4Address(".".join(str(p) for p in parts[:4])), parts[4] * 256 + parts[5]


@dataclass(slots=True)
class FtpStep:
    """Send ``command`` and expect a reply starting with ``expect``."""

    command: str
    expect: int
    transfer: bool = False


def session_script(credentials: Credentials, retrieve: str) -> list[FtpStep]:
    return [
        FtpStep(f"USER {credentials.username}", 331),
        FtpStep(f"PASS {credentials.password}", 230),
        FtpStep("SYST", 215),
        FtpStep("PWD", 257),
        FtpStep("TYPE I", 200),
        FtpStep("PASV", 227),
        FtpStep("LIST", 150, transfer=True),
        FtpStep("PASV", 227),
        FtpStep(f"RETR {retrieve}", 150, transfer=True),
        FtpStep("QUIT", 221),
    ]


class _ClientData(ExchangeHandler):
    def __init__(self, control: FtpControl):
        super().__init__(control.exchange)
        self.control = control
        self.received = 0

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        self.received += len(data)

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()

    def on_closed(self, sock: TcpSocket, notice: TcpNotice) -> None:
        self.control.data_done(self.received)


class FtpControl(ExchangeHandler):
    """Client side of a control connection running a fixed command script.

    ``on_outcome`` receives (success, detail) when the script ends; the
    exchange is finished with the same values when it is not given.
    """

    def __init__(
        self,
        exchange: Exchange,
        steps: list[FtpStep],
        on_outcome: Callable[[bool, str], None] | None = None,
    ):
        super().__init__(exchange)
        self.steps = steps
        self.position = -1
        self.lines = _LineBuffer()
        self.sock: TcpSocket | None = None
        self.passive: tuple[IPv4Address, int] | None = None
        self.awaiting_226 = False
        self.data_finished = False
        self.bytes_received = 0
        self.on_outcome = on_outcome
        self.replies: list[str] = []

    def on_established(self, sock: TcpSocket) -> None:
        self.sock = sock

    def _advance(self) -> None:
        self.position += 1
        if self.position >= len(self.steps):
            return
        step = self.steps[self.position]
        if step.transfer:
            self.awaiting_226 = True
            self.data_finished = False
            self.exchange.connect(self.passive[1], _ClientData(self))
        self.sock.send(f"{step.command}\r\n".encode())

    def _outcome(self, success: bool, detail: str) -> None:
        if self.on_outcome is not None:
            self.on_outcome(success, detail)
        else:
            self.exchange.finish(success, detail)

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        for line in self.lines.feed(data):
            self.replies.append(line)
            self._reply(line)

    def _reply(self, line: str) -> None:
        code = reply_code(line)
        if self.position < 0:
            if code == 220:
                self._advance()
            else:
                self._outcome(False, f"banner {code}")
            return
        if self.position >= len(self.steps):
            return
        step = self.steps[self.position]
        if code == 226 and self.awaiting_226:
            self.awaiting_226 = False
            self._maybe_continue()
            return
        if code != step.expect:
            self._outcome(False, line)
            return
        if code == 227:
            self.passive = parse_pasv(line)
        if code == 221:
            self._outcome(True, f"{len(self.steps)} commands, {self.bytes_received} bytes")
            return
        if not step.transfer:
            self._advance()

    def data_done(self, received: int) -> None:
        self.bytes_received += received
        self.data_finished = True
        self._maybe_continue()

    def _maybe_continue(self) -> None:
        if not self.awaiting_226 and self.data_finished:
            self.data_finished = False
            self._advance()

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()


class FtpClient(BaseAgent):
    """Logs in, lists the directory, downloads one file and quits."""

    kind = "FtpClient"

    def __init__(self, *args, credentials: Credentials, **kwargs):
        super().__init__(*args, **kwargs)
        self.credentials = credentials

    def run_exchange(self, exchange: Exchange) -> None:
        names = sorted(FILES)
        retrieve = names[self.rng.draw(len(names))]
        exchange.connect(FTP_PORT, FtpControl(exchange, session_script(self.credentials, retrieve)))
