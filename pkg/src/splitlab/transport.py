"""Ordered, reliable channels carrying SLWP frames between the two parties.

An endpoint exposes ``send(msg)``, ``recv() -> WireMessage`` and ``close()``.
Both transports move encoded bytes, so the in-memory path exercises the same
framing as the socket path.
"""

from __future__ import annotations

import queue
import socket
import threading

from splitlab.wire import WireError, WireMessage, decode_message, encode_message, frame_length


class TransportClosed(ConnectionError):
    pass


_EOF = object()


class QueueEndpoint:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None):
        self._in, self._out = inbox, outbox
        self._timeout = timeout
        self._closed = False

    def send(self, msg: WireMessage) -> None:
        if self._closed:
            raise TransportClosed("send on closed endpoint")
        self._out.put(encode_message(msg))

    def recv(self) -> WireMessage:
        if self._closed:
            raise TransportClosed("recv on closed endpoint")
        try:
            item = self._in.get(timeout=self._timeout)
        except queue.Empty:
            raise TransportClosed(f"no frame within {self._timeout} s") from None
        if item is _EOF:
            self._closed = True
            raise TransportClosed("peer closed the channel")
        return decode_message(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(_EOF)


def queue_pair(timeout: float | None = 60.0) -> tuple[QueueEndpoint, QueueEndpoint]:
    """Two connected in-memory endpoints ``(client_side, server_side)``."""
    a, b = queue.Queue(), queue.Queue()
    return QueueEndpoint(a, b, timeout), QueueEndpoint(b, a, timeout)


class SocketEndpoint:
    """SLWP frames over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()
        self._closed = False

    def send(self, msg: WireMessage) -> None:
        if self._closed:
            raise TransportClosed("send on closed socket")
        try:
            self._sock.sendall(encode_message(msg))
        except OSError as e:
            raise TransportClosed(f"send failed: {e}") from None

    def _fill(self) -> None:
        try:
            chunk = self._sock.recv(1 << 16)
        except OSError as e:
            raise TransportClosed(f"recv failed: {e}") from None
        if not chunk:
            if self._buf:
                raise WireError(f"stream ended inside a frame ({len(self._buf)} bytes buffered)")
            raise TransportClosed("peer closed the socket")
        self._buf.extend(chunk)

    def recv(self) -> WireMessage:
        if self._closed:
            raise TransportClosed("recv on closed socket")
        while True:
            size = frame_length(bytes(self._buf[:64]))
            if size is not None and len(self._buf) >= size:
                frame = bytes(self._buf[:size])
                del self._buf[:size]
                return decode_message(frame)
            self._fill()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def listen(address: str, timeout: float | None = 60.0) -> SocketEndpoint:
    """Accept exactly one peer on ``host:port`` (port 0 is not useful here)."""
    host, port = parse_address(address)
    with socket.create_server((host, port)) as srv:
        srv.settimeout(timeout)
        conn, _ = srv.accept()
    conn.settimeout(timeout)
    return SocketEndpoint(conn)


def connect(address: str, timeout: float | None = 60.0) -> SocketEndpoint:
    sock = socket.create_connection(parse_address(address), timeout=timeout)
    sock.settimeout(timeout)
    return SocketEndpoint(sock)


def socket_pair(timeout: float | None = 60.0) -> tuple[SocketEndpoint, SocketEndpoint]:
    """Two endpoints joined by a real TCP connection on the loopback interface."""
    srv = socket.create_server(("127.0.0.1", 0))
    port = srv.getsockname()[1]
    accepted: list = []

    def _accept():
        conn, _ = srv.accept()
        accepted.append(conn)

    t = threading.Thread(target=_accept, daemon=True)
    t.start()
    client = socket.create_connection(("127.0.0.1", port), timeout=timeout)
    t.join(timeout)
    srv.close()
    if not accepted:
        client.close()
        raise TransportClosed("loopback accept timed out")
    for s in (client, accepted[0]):
        s.settimeout(timeout)
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketEndpoint(client), SocketEndpoint(accepted[0])
