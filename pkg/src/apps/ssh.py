"""SSH at message granularity: banners, key-exchange markers and password auth.

Nothing is encrypted. Passwords travel as an opaque token, never in clear.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable

from src.apps.base import BaseAgent, Exchange, ExchangeHandler
from src.engine import RngStream
from src.models import Credentials, OsTag
from src.netmodel.host import TcpHandler, TcpSocket

SSH_PORT = 22

SERVER_BANNERS = {
    OsTag.WINDOWS10: "SSH-2.0-OpenSSH_for_Windows_8.1",
    OsTag.UBUNTU: "SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.6",
    OsTag.KALI: "SSH-2.0-OpenSSH_9.6p1 Debian-4",
}
CLIENT_BANNERS = {
    OsTag.WINDOWS10: "SSH-2.0-PuTTY_Release_0.80",
    OsTag.UBUNTU: "SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.6",
    OsTag.KALI: "SSH-2.0-libssh_0.10.6",
}

MSG_KEXINIT = "SSH_MSG_KEXINIT"
MSG_NEWKEYS = "SSH_MSG_NEWKEYS"
MSG_AUTH_REQUEST = "SSH_MSG_USERAUTH_REQUEST"
MSG_AUTH_SUCCESS = "SSH_MSG_USERAUTH_SUCCESS"
MSG_AUTH_FAILURE = "SSH_MSG_USERAUTH_FAILURE"
MSG_CHANNEL_DATA = "SSH_MSG_CHANNEL_DATA"
MSG_DISCONNECT = "SSH_MSG_DISCONNECT"

SESSION_COMMANDS = ("uptime", "df -h", "systemctl status nginx", "tail -n 20 /var/log/syslog", "who")


def password_token(password: str) -> str:
    return hashlib.blake2b(password.encode(), digest_size=16, person=b"nidsim-ssh").hexdigest()


def auth_request(username: str, password: str) -> str:
    return f"{MSG_AUTH_REQUEST} user={username} method=password token={password_token(password)}"


def command_output(command: str) -> bytes:
    length = 96 + int.from_bytes(hashlib.blake2b(command.encode(), digest_size=2).digest(), "big") % 900
    return RngStream(0, f"ssh-output:{command}").bytes(length).hex().encode()[:length]


class _Messages:
    def __init__(self):
        self.buffer = b""

    def feed(self, data: bytes) -> list[str]:
        self.buffer += data
        *lines, self.buffer = self.buffer.split(b"\r\n")
        return [line.decode("latin-1") for line in lines]


def _send(sock: TcpSocket, message: str) -> None:
    sock.send(f"{message}\r\n".encode())


def _kexinit(rng: RngStream) -> str:
    return f"{MSG_KEXINIT} cookie={rng.bytes(16).hex()} kex=curve25519-sha256 hostkey=ssh-ed25519"


class SshServerSession(TcpHandler):
    """Banner, key-exchange markers, then password authentication.

    A failed attempt gets the failure message and the connection is closed.
    """

    def __init__(self, os_tag: OsTag, credentials: Credentials, rng: RngStream):
        self.os_tag = os_tag
        self.credentials = credentials
        self.rng = rng
        self.messages = _Messages()
        self.authenticated = False

    def on_established(self, sock: TcpSocket) -> None:
        _send(sock, SERVER_BANNERS[self.os_tag])

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        for message in self.messages.feed(data):
            self._handle(sock, message)

    def _handle(self, sock: TcpSocket, message: str) -> None:
        if message.startswith("SSH-2.0-"):
            _send(sock, _kexinit(self.rng))
        elif message.startswith(MSG_KEXINIT):
            _send(sock, MSG_NEWKEYS)
        elif message.startswith(MSG_AUTH_REQUEST):
            fields = dict(part.split("=", 1) for part in message.split(" ")[1:] if "=" in part)
            valid = fields.get("user") == self.credentials.username and fields.get(
                "token"
            ) == password_token(self.credentials.password)
            if valid:
                self.authenticated = True
                _send(sock, MSG_AUTH_SUCCESS)
            else:
                _send(sock, f"{MSG_AUTH_FAILURE} password")
                sock.close()
        elif message.startswith(MSG_CHANNEL_DATA) and self.authenticated:
            command = message[len(MSG_CHANNEL_DATA) + 1 :]
            sock.send(f"{MSG_CHANNEL_DATA} ".encode() + command_output(command) + b"\r\n")
        elif message.startswith(MSG_DISCONNECT):
            sock.close()

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()


class SshClientConnection(ExchangeHandler):
    """Client side of one SSH connection carrying a single password attempt.

    ``on_auth`` is told whether the attempt succeeded; benign clients then run
    ``commands`` before disconnecting.
    """

    def __init__(
        self,
        exchange: Exchange,
        banner: str,
        credentials: Credentials,
        rng: RngStream,
        commands: list[str] | None = None,
        on_auth: Callable[[bool], None] | None = None,
    ):
        super().__init__(exchange)
        self.banner = banner
        self.credentials = credentials
        self.rng = rng
        self.commands = list(commands or [])
        self.on_auth = on_auth
        self.messages = _Messages()
        self.outcome: bool | None = None

    def on_established(self, sock: TcpSocket) -> None:
        _send(sock, self.banner)

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        for message in self.messages.feed(data):
            self._handle(sock, message)

    def _handle(self, sock: TcpSocket, message: str) -> None:
        if message.startswith(MSG_KEXINIT):
            _send(sock, _kexinit(self.rng))
        elif message == MSG_NEWKEYS:
            _send(sock, MSG_NEWKEYS)
            _send(sock, auth_request(self.credentials.username, self.credentials.password))
        elif message == MSG_AUTH_SUCCESS:
            self.outcome = True
            if self.on_auth is not None:
                self.on_auth(True)
            self._next_command(sock)
        elif message.startswith(MSG_AUTH_FAILURE):
            self.outcome = False
            if self.on_auth is not None:
                self.on_auth(False)
            else:
                self.exchange.finish(False, "authentication failed", graceful=True)
        elif message.startswith(MSG_CHANNEL_DATA):
            self._next_command(sock)

    def _next_command(self, sock: TcpSocket) -> None:
        if self.exchange.done:
            return
        if self.commands:
            _send(sock, f"{MSG_CHANNEL_DATA} {self.commands.pop(0)}")
            return
        _send(sock, f"{MSG_DISCONNECT} by application")
        self.exchange.finish(True, "session complete")

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()


class SshClient(BaseAgent):
    """Logs in with the valid credential and runs a few commands."""

    kind = "SshClient"

    def __init__(self, *args, credentials: Credentials, **kwargs):
        super().__init__(*args, **kwargs)
        self.credentials = credentials

    def run_exchange(self, exchange: Exchange) -> None:
        count = 1 + self.rng.draw(3)
        commands = [SESSION_COMMANDS[self.rng.draw(len(SESSION_COMMANDS))] for _ in range(count)]
        handler = SshClientConnection(
            exchange,
            CLIENT_BANNERS[self.host.os_tag],
            self.credentials,
            self.rng,
            commands,
        )
        exchange.connect(SSH_PORT, handler)
