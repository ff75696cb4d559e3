"""HTTP e-commerce store: a browsing client and the catalog server."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from src.apps.base import BaseAgent, Exchange, ExchangeHandler
from src.engine import RngStream
from src.netmodel.host import TcpHandler, TcpSocket

HTTP_PORT = 80
PRODUCT_COUNT = 20
# Product ids the browser may ask for; the ones above PRODUCT_COUNT do not exist.
BROWSED_PRODUCT_IDS = range(1, PRODUCT_COUNT + 5)
BODY_MIN = 512
BODY_MAX = 8192
SERVER_NAME = "nginx/1.18.0 (Ubuntu)"
USER_AGENTS = {
    "Windows10": "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:109.0) Gecko/20100101 Firefox/115.0",
    "Ubuntu": "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/115.0",
    "KaliLinux": "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/115.0",
}
NOT_FOUND_BODY = b"<html><head><title>404 Not Found</title></head><body>Not Found</body></html>"

CATALOG_PATHS: tuple[str, ...] = (
    "/",
    "/products",
    "/cart",
    "/checkout",
    *(f"/products/{i}" for i in BROWSED_PRODUCT_IDS),
)


@dataclass(frozen=True, slots=True)
class HttpExchange:
    method: str
    path: str
    status: int
    header: bytes
    body: bytes


def path_exists(path: str) -> bool:
    if path in ("/", "/products", "/cart", "/checkout"):
        return True
    prefix = "/products/"
    if path.startswith(prefix) and path[len(prefix) :].isdigit():
        return 1 <= int(path[len(prefix) :]) <= PRODUCT_COUNT
    return False


def catalog_body(path: str) -> bytes:
    """Deterministic body for ``path``: 512 to 8192 pseudo-random bytes."""
    digest = hashlib.blake2b(path.encode(), digest_size=8).digest()
    length = BODY_MIN + int.from_bytes(digest, "big") % (BODY_MAX - BODY_MIN + 1)
    return RngStream(0, f"http-body:{path}").bytes(length)


def build_request(method: str, path: str, host: str, user_agent: str) -> bytes:
    return (
        f"{method} {path} HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        f"User-Agent: {user_agent}\r\n"
        "Accept: text/html,application/xhtml+xml,*/*;q=0.8\r\n"
        "Connection: close\r\n"
        "\r\n"
    ).encode()


def respond(request: bytes) -> HttpExchange:
    """Answer one request from the fixed catalog."""
    request_line = request.split(b"\r\n", 1)[0].decode("latin-1")
    parts = request_line.split(" ")
    method, path = (parts[0], parts[1]) if len(parts) >= 2 else ("GET", "/")
    if path_exists(path):
        status, reason, body = 200, "OK", catalog_body(path)
    else:
        status, reason, body = 404, "Not Found", NOT_FOUND_BODY
    header = (
        f"HTTP/1.1 {status} {reason}\r\n"
        f"Server: {SERVER_NAME}\r\n"
        "Content-Type: text/html; charset=utf-8\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n"
        "\r\n"
    ).encode()
    return HttpExchange(method, path, status, header, body)


def parse_response(buffer: bytes) -> tuple[int, int, int] | None:
    """(status, header length, content length) once the header is complete."""
    end = buffer.find(b"\r\n\r\n")
    if end < 0:
        return None
    lines = buffer[:end].decode("latin-1").split("\r\n")
    status = int(lines[0].split(" ")[1])
    length = 0
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "content-length":
            length = int(value.strip())
    return status, end + 4, length


class HttpServerSession(TcpHandler):
    """Serves one request per connection, then closes."""

    def __init__(self):
        self.buffer = b""
        self.answered = False

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        self.buffer += data
        if self.answered or b"\r\n\r\n" not in self.buffer:
            return
        self.answered = True
        exchange = respond(self.buffer)
        sock.send(exchange.header + exchange.body)
        sock.close()

    def on_peer_closed(self, sock: TcpSocket) -> None:
        if not self.answered:
            sock.close()


class _BrowserConnection(ExchangeHandler):
    def __init__(self, exchange: Exchange, request: bytes):
        super().__init__(exchange)
        self.request = request
        self.buffer = b""

    def on_established(self, sock: TcpSocket) -> None:
        sock.send(self.request)

    def on_data(self, sock: TcpSocket, data: bytes) -> None:
        self.buffer += data
        parsed = parse_response(self.buffer)
        if parsed is None:
            return
        status, header_len, length = parsed
        if len(self.buffer) - header_len >= length:
            self.exchange.finish(status in (200, 404), f"HTTP {status}")

    def on_peer_closed(self, sock: TcpSocket) -> None:
        sock.close()


class HttpBrowser(BaseAgent):
    """Fetches one catalog page per wakeup over a fresh connection."""

    kind = "HttpBrowser"

    def run_exchange(self, exchange: Exchange) -> None:
        path = CATALOG_PATHS[self.rng.draw(len(CATALOG_PATHS))]
        user_agent = USER_AGENTS[self.host.os_tag.value]
        request = build_request("GET", path, str(self.target_ip), user_agent)
        exchange.context["path"] = path
        exchange.connect(HTTP_PORT, _BrowserConnection(exchange, request))
