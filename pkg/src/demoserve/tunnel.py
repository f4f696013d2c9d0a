"""Host-side tunnel client: the outbound half of the share link.

The client holds one connection to the coordinator.  For every OPEN frame
it connects to the local server, pipes DATA payloads into it, and streams
the response back as DATA frames, closing the stream once the response is
complete.  It pings every 15 s, treats 45 s of silence as a dead link,
and reconnects with the same token so the public URL survives short
drops.
"""

from __future__ import annotations

import json
import logging
import socket
import ssl
import threading
import time
from datetime import datetime, timezone

from . import framing
from .httpwire import ResponseEndDetector

logger = logging.getLogger(__name__)

DEFAULT_CONNECT_TIMEOUT = 10.0
DEFAULT_PING_INTERVAL = 15.0
DEFAULT_SILENCE_TIMEOUT = 45.0
RECONNECT_PAUSE = 1.0


class TunnelError(Exception):
    pass


class CoordinatorUnreachable(TunnelError):
    """No connection to the coordinator within the connect timeout."""


class ProtocolError(TunnelError):
    """The coordinator's handshake reply was not a usable WELCOME."""


class VersionMismatch(TunnelError):
    """The coordinator rejected this client's protocol version."""


class _LocalStream:
    """One relayed exchange: a socket to the local server plus pump state."""

    def __init__(self, sid: int, sock: socket.socket):
        self.sid = sid
        self.sock = sock
        self.method_buf = bytearray()  # first request bytes, until the method is known
        self.detector: ResponseEndDetector | None = None
        self.closed = False

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.sock.close()
            except OSError:
                pass


class ShareSession:
    """A live share link; ``public_url`` may refresh after a long outage."""

    def __init__(
        self,
        coordinator_addr: tuple[str, int],
        local_addr: tuple[str, int],
        *,
        token_request: str | None = None,
        ssl_context: ssl.SSLContext | None = None,
        connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
        ping_interval: float = DEFAULT_PING_INTERVAL,
        silence_timeout: float = DEFAULT_SILENCE_TIMEOUT,
        on_url_change=None,
    ):
        self.coordinator_addr = coordinator_addr
        self.local_addr = local_addr
        self.ssl_context = ssl_context
        self.connect_timeout = connect_timeout
        self.ping_interval = ping_interval
        self.silence_timeout = silence_timeout
        self.on_url_change = on_url_change
        self.established_at = datetime.now(timezone.utc)

        self._lock = threading.Lock()
        self._token = token_request
        self._public_url: str | None = None
        self._conn: socket.socket | None = None
        self._streams: dict[int, _LocalStream] = {}
        self._wlock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # -- public surface ------------------------------------------------------

    @property
    def token(self) -> str:
        with self._lock:
            return self._token

    @property
    def public_url(self) -> str:
        with self._lock:
            return self._public_url

    def connected(self) -> bool:
        with self._lock:
            return self._conn is not None

    def close(self) -> None:
        """Drop the tunnel; the coordinator keeps the token for its grace period."""
        self._stop.set()
        self._teardown_conn()
        if self._thread is not None:
            self._thread.join(timeout=3.0)

    # -- connection management ------------------------------------------------

    def _connect_once(self) -> None:
        """One connect + HELLO/WELCOME handshake; raises on failure."""
        host, port = self.coordinator_addr
        try:
            raw = socket.create_connection((host, port), timeout=self.connect_timeout)
            raw.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError as exc:
            raise CoordinatorUnreachable(f"cannot reach {host}:{port}: {exc}") from exc
        try:
            if self.ssl_context is not None:
                raw = self.ssl_context.wrap_socket(raw, server_hostname=host)
            raw.sendall(framing.frame_encode(framing.hello_frame(self.token)))
            reader = framing.FrameReader()
            deadline = time.monotonic() + self.connect_timeout
            welcome = None
            while welcome is None:
                if time.monotonic() > deadline:
                    raise ProtocolError("no WELCOME within the handshake timeout")
                try:
                    chunk = raw.recv(65536)
                except socket.timeout:
                    continue
                if not chunk:
                    raise ProtocolError("coordinator closed during handshake")
                for frame in reader.feed(chunk):
                    welcome = frame
                    break
            if welcome.frame_type != framing.WELCOME:
                raise ProtocolError(f"expected WELCOME, got {welcome.name}")
            doc = json.loads(welcome.payload.decode("utf-8"))
            if "error" in doc:
                message = str(doc["error"])
                if "version" in message or "proto" in message:
                    raise VersionMismatch(message)
                raise ProtocolError(message)
            if not isinstance(doc.get("url"), str) or not isinstance(doc.get("token"), str):
                raise ProtocolError(f"malformed WELCOME payload: {welcome.payload[:120]!r}")
        except (ssl.SSLError, OSError, json.JSONDecodeError, UnicodeDecodeError,
                framing.FramingError) as exc:
            raw.close()
            if isinstance(exc, TunnelError):
                raise
            raise ProtocolError(f"handshake failed: {exc}") from exc
        except TunnelError:
            raw.close()
            raise

        raw.settimeout(0.5)
        url_changed = False
        with self._lock:
            url_changed = self._public_url is not None and self._public_url != doc["url"]
            self._token = doc["token"]
            self._public_url = doc["url"]
            self._conn = raw
        if url_changed and self.on_url_change is not None:
            self.on_url_change(doc["url"])

    def _teardown_conn(self) -> None:
        with self._lock:
            conn, self._conn = self._conn, None
            streams = list(self._streams.values())
            self._streams.clear()
        if conn is not None:
            try:
                conn.close()
            except OSError:
                pass
        for stream in streams:
            stream.close()

    def _send_frames(self, frames) -> bool:
        data = b"".join(framing.frame_encode(f) for f in frames)
        with self._wlock:
            with self._lock:
                conn = self._conn
            if conn is None:
                return False
            try:
                conn.sendall(data)
                return True
            except OSError:
                return False

    # -- main loop -------------------------------------------------------------

    def _run(self) -> None:
        reader = framing.FrameReader()
        last_received = time.monotonic()
        last_ping = 0.0
        while not self._stop.is_set():
            with self._lock:
                conn = self._conn
            if conn is None:
                self._teardown_conn()
                try:
                    self._connect_once()
                    reader = framing.FrameReader()
                    last_received = time.monotonic()
                    last_ping = 0.0
                    logger.info("tunnel reconnected as %s", self.public_url)
                except TunnelError as exc:
                    logger.debug("reconnect failed: %s", exc)
                    self._stop.wait(RECONNECT_PAUSE)
                continue

            now = time.monotonic()
            if now - last_ping >= self.ping_interval:
                self._send_frames([framing.TunnelFrame(framing.PING)])
                last_ping = now
            if now - last_received > self.silence_timeout:
                logger.warning("tunnel silent for %.0f s; reconnecting", now - last_received)
                self._teardown_conn()
                continue

            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                self._teardown_conn()
                continue
            if not chunk:
                self._teardown_conn()
                continue
            last_received = time.monotonic()
            try:
                frames = reader.feed(chunk)
            except framing.FramingError as exc:
                logger.warning("framing error from coordinator: %s", exc)
                self._teardown_conn()
                continue
            for frame in frames:
                self._dispatch(frame)

    def _dispatch(self, frame: framing.TunnelFrame) -> None:
        if frame.frame_type == framing.PONG:
            return
        if frame.frame_type == framing.PING:
            self._send_frames([framing.TunnelFrame(framing.PONG)])
            return
        if frame.frame_type == framing.OPEN:
            self._open_stream(frame.stream_id)
            return
        if frame.frame_type == framing.DATA:
            with self._lock:
                stream = self._streams.get(frame.stream_id)
            if stream is None:
                return
            if stream.detector is None and len(stream.method_buf) < 8:
                stream.method_buf += frame.payload[:8]
            try:
                stream.sock.sendall(frame.payload)
            except OSError:
                self._finish_stream(stream, send_close=True)
            return
        if frame.frame_type == framing.CLOSE:
            with self._lock:
                stream = self._streams.get(frame.stream_id)
            if stream is not None:
                self._finish_stream(stream, send_close=False)

    def _open_stream(self, sid: int) -> None:
        try:
            sock = socket.create_connection(self.local_addr, timeout=10.0)
        except OSError as exc:
            logger.warning("cannot reach local server %s: %s", self.local_addr, exc)
            self._send_frames([framing.TunnelFrame(framing.CLOSE, sid)])
            return
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(0.5)
        stream = _LocalStream(sid, sock)
        with self._lock:
            self._streams[sid] = stream
        threading.Thread(target=self._pump_local, args=(stream,), daemon=True).start()

    def _pump_local(self, stream: _LocalStream) -> None:
        """Forward the local server's response; close once it is complete."""
        try:
            while not stream.closed and not self._stop.is_set():
                if stream.detector is None and b" " in stream.method_buf:
                    method = bytes(stream.method_buf.split(b" ", 1)[0])
                    stream.detector = ResponseEndDetector(head_request=method == b"HEAD")
                try:
                    data = stream.sock.recv(32768)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                if stream.detector is None:
                    # Response before the request method was seen; assume GET.
                    stream.detector = ResponseEndDetector(head_request=False)
                self._send_frames(framing.data_frames(stream.sid, data))
                stream.detector.feed(data)
                if stream.detector.end is not None:
                    break
        finally:
            self._finish_stream(stream, send_close=True)

    def _finish_stream(self, stream: _LocalStream, *, send_close: bool) -> None:
        with self._lock:
            known = self._streams.pop(stream.sid, None)
        stream.close()
        if known is not None and send_close:
            self._send_frames([framing.TunnelFrame(framing.CLOSE, stream.sid)])


def open_tunnel(
    coordinator_addr: tuple[str, int],
    local_addr: tuple[str, int],
    *,
    token_request: str | None = None,
    ssl_context: ssl.SSLContext | None = None,
    connect_timeout: float = DEFAULT_CONNECT_TIMEOUT,
    ping_interval: float = DEFAULT_PING_INTERVAL,
    silence_timeout: float = DEFAULT_SILENCE_TIMEOUT,
    on_url_change=None,
) -> ShareSession:
    """Establish a share link and keep it alive in the background.

    Raises :class:`CoordinatorUnreachable`, :class:`ProtocolError`, or
    :class:`VersionMismatch` if the first handshake fails; afterwards the
    session reconnects on its own until :meth:`ShareSession.close`.
    """
    session = ShareSession(
        coordinator_addr,
        local_addr,
        token_request=token_request,
        ssl_context=ssl_context,
        connect_timeout=connect_timeout,
        ping_interval=ping_interval,
        silence_timeout=silence_timeout,
        on_url_change=on_url_change,
    )
    session._connect_once()
    thread = threading.Thread(target=session._run, daemon=True)
    session._thread = thread
    thread.start()
    return session
