"""Byte transports between finger nodes and the coordinator.

A transport is an ordered, lossless byte channel with non-blocking reads.
The framing above it (see :mod:`modhand.protocol`) tolerates arbitrary
chunk boundaries, so transports never need to preserve message edges.

Two implementations:

* :func:`channel_pair` — an in-process bidirectional pair backed by
  thread-safe queues.  Used by the simulation kernel and tests.
* :class:`TcpTransport` — a non-blocking wrapper around a connected TCP
  socket, with :func:`connect_tcp` / :class:`TcpListener` helpers.

All operations raise :class:`~modhand.errors.TransportError` once the
channel is closed or the peer is gone.
"""

from __future__ import annotations

import socket
import threading
from collections import deque

from modhand.errors import TransportError

__all__ = [
    "Transport",
    "ChannelTransport",
    "channel_pair",
    "TcpTransport",
    "connect_tcp",
    "TcpListener",
]


class Transport:
    """Interface: ordered byte channel with non-blocking receive."""

    def send(self, data: bytes) -> None:
        """Queue ``data`` for the peer; raises TransportError if closed."""
        raise NotImplementedError

    def recv(self) -> bytes:
        """Return all bytes received since the last call (b"" if none).

        Never blocks.  Raises TransportError once the channel is closed
        *and* drained — a peer's parting bytes are still delivered.
        """
        raise NotImplementedError

    def close(self) -> None:
        """Release the channel; idempotent."""
        raise NotImplementedError

    @property
    def is_closed(self) -> bool:
        raise NotImplementedError


class ChannelTransport(Transport):
    """One endpoint of an in-process byte channel (see channel_pair)."""

    def __init__(self) -> None:
        self._rx: deque[bytes] = deque()
        self._lock = threading.Lock()
        self._closed = False
        self._peer: ChannelTransport | None = None

    def send(self, data: bytes) -> None:
        peer = self._peer
        if self._closed or peer is None:
            raise TransportError("channel closed")
        with peer._lock:
            if peer._closed:
                raise TransportError("peer closed")
            peer._rx.append(bytes(data))

    def recv(self) -> bytes:
        with self._lock:
            if self._rx:
                chunks = b"".join(self._rx)
                self._rx.clear()
                return chunks
            if self._closed or self._peer is None or self._peer._closed:
                raise TransportError("channel closed")
            return b""

    def close(self) -> None:
        with self._lock:
            self._closed = True

    @property
    def is_closed(self) -> bool:
        return self._closed


def channel_pair() -> tuple[ChannelTransport, ChannelTransport]:
    """Create two connected in-process endpoints (a <-> b)."""
    a, b = ChannelTransport(), ChannelTransport()
    a._peer, b._peer = b, a
    return a, b


class TcpTransport(Transport):
    """Non-blocking transport over a connected TCP socket."""

    #: Per-recv read chunk; multiple chunks are drained per call.
    RECV_CHUNK = 65536

    def __init__(self, sock: socket.socket) -> None:
        sock.setblocking(False)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._closed = False

    def send(self, data: bytes) -> None:
        if self._closed:
            raise TransportError("socket closed")
        view = memoryview(data)
        while view:
            try:
                sent = self._sock.send(view)
            except BlockingIOError:
                continue
            except OSError as exc:
                self.close()
                raise TransportError(f"send failed: {exc}") from exc
            view = view[sent:]

    def recv(self) -> bytes:
        if self._closed:
            raise TransportError("socket closed")
        chunks: list[bytes] = []
        while True:
            try:
                chunk = self._sock.recv(self.RECV_CHUNK)
            except BlockingIOError:
                break
            except OSError as exc:
                self.close()
                raise TransportError(f"recv failed: {exc}") from exc
            if chunk == b"":
                # Orderly shutdown by the peer.
                self.close()
                if chunks:
                    break
                raise TransportError("peer closed connection")
            chunks.append(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.close()
            except OSError:
                pass

    @property
    def is_closed(self) -> bool:
        return self._closed


def connect_tcp(host: str, port: int, timeout_s: float = 5.0) -> TcpTransport:
    """Open a client connection and wrap it as a transport."""
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except OSError as exc:
        raise TransportError(f"connect to {host}:{port} failed: {exc}") from exc
    return TcpTransport(sock)


class TcpListener:
    """Accept loop helper for the coordinator's listen socket."""

    def __init__(self, host: str, port: int, backlog: int = 16) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
            self._sock.listen(backlog)
        except OSError as exc:
            self._sock.close()
            raise TransportError(f"listen on {host}:{port} failed: {exc}") from exc
        self._sock.setblocking(False)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def accept(self) -> TcpTransport | None:
        """Accept one pending connection, or None if none is waiting."""
        try:
            sock, _addr = self._sock.accept()
        except BlockingIOError:
            return None
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        return TcpTransport(sock)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
