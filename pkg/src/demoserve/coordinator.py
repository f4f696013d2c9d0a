"""Public coordinator: allocates share tokens and relays browser traffic.

One listening socket serves two kinds of connections, told apart by the
first byte: tunnel registrations speak the binary frame protocol (first
byte is a frame type), public browsers speak HTTP (first byte is ASCII).
Each public request becomes one relay stream: the coordinator strips the
``/<token>`` prefix from the request line, forwards the head and body as
DATA frames, and pipes returned DATA back to the browser until the host
closes the stream.  Bodies are never interpreted.

A host that drops its connection keeps its token for a reuse grace
period; reconnecting within it restores the same public URL.
"""

from __future__ import annotations

import itertools
import json
import logging
import queue
import secrets
import socket
import ssl
import string
import threading
import time

from . import framing, httpwire

logger = logging.getLogger(__name__)

TOKEN_ALPHABET = string.ascii_lowercase + string.digits
TOKEN_LENGTH = 10

DEFAULT_PING_TIMEOUT = 45.0
DEFAULT_REUSE_GRACE = 60.0
DEFAULT_STREAM_TIMEOUT = 30.0
MAX_RELAY_BODY = 64 * 1024 * 1024

_CLOSE = object()
_DEAD = object()


class CoordinatorError(Exception):
    pass


class BindFailed(CoordinatorError):
    """The listen address could not be bound."""


def make_token() -> str:
    return "".join(secrets.choice(TOKEN_ALPHABET) for _ in range(TOKEN_LENGTH))


class _Stream:
    __slots__ = ("sid", "q")

    def __init__(self, sid: int):
        self.sid = sid
        self.q: queue.Queue = queue.Queue()


class _Session:
    def __init__(self, token: str, conn: socket.socket):
        self.token = token
        self.conn: socket.socket | None = conn
        self.wlock = threading.Lock()
        self.lock = threading.Lock()
        self.streams: dict[int, _Stream] = {}
        self._sid_counter = itertools.count(1)
        self.last_ping = time.monotonic()
        self.disconnected_at: float | None = None

    def open_stream(self) -> _Stream:
        with self.lock:
            stream = _Stream(next(self._sid_counter))
            self.streams[stream.sid] = stream
            return stream

    def drop_stream(self, sid: int) -> None:
        with self.lock:
            self.streams.pop(sid, None)

    def mark_disconnected(self) -> None:
        with self.lock:
            if self.conn is not None:
                try:
                    self.conn.close()
                except OSError:
                    pass
                self.conn = None
            if self.disconnected_at is None:
                self.disconnected_at = time.monotonic()
            streams = list(self.streams.values())
        for stream in streams:
            stream.q.put(_DEAD)

    def send_frames(self, frames) -> bool:
        data = b"".join(framing.frame_encode(f) for f in frames)
        with self.wlock:
            conn = self.conn
            if conn is None:
                return False
            try:
                conn.sendall(data)
                return True
            except OSError:
                pass
        self.mark_disconnected()
        return False


class Coordinator:
    """Long-running relay service; see the CLI for the usual entry point."""

    def __init__(
        self,
        host: str,
        port: int,
        public_base: str,
        *,
        tls_context: ssl.SSLContext | None = None,
        ping_timeout: float = DEFAULT_PING_TIMEOUT,
        reuse_grace: float = DEFAULT_REUSE_GRACE,
        stream_timeout: float = DEFAULT_STREAM_TIMEOUT,
    ):
        self.host = host
        self.bind_port = port
        self.public_base = public_base.rstrip("/")
        self.tls_context = tls_context
        self.ping_timeout = ping_timeout
        self.reuse_grace = reuse_grace
        self.stream_timeout = stream_timeout
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        assert self._listener is not None, "coordinator not started"
        return self._listener.getsockname()[1]

    def public_url(self, token: str) -> str:
        return f"{self.public_base}/{token}"

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.bind_port))
        except OSError as exc:
            listener.close()
            raise BindFailed(f"cannot bind {self.host}:{self.bind_port}: {exc}") from exc
        listener.listen(64)
        listener.settimeout(0.5)
        self._listener = listener
        for target in (self._accept_loop, self._reaper_loop):
            thread = threading.Thread(target=target, daemon=True)
            thread.start()
            self._threads.append(thread)
        logger.info("coordinator listening on %s:%s", self.host, self.port)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._registry_lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for session in sessions:
            session.mark_disconnected()
        for thread in self._threads:
            thread.join(timeout=2.0)

    # -- accept / routing ----------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(
                target=self._handle_conn, args=(conn, addr), daemon=True
            ).start()

    def _handle_conn(self, conn: socket.socket, addr) -> None:
        try:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            if self.tls_context is not None:
                conn = self.tls_context.wrap_socket(conn, server_side=True)
            conn.settimeout(10.0)
            first = conn.recv(1)
            if not first:
                conn.close()
                return
            if first[0] in framing.FRAME_TYPES:
                self._handle_tunnel(conn, first)
            else:
                self._handle_public(conn, first)
        except (OSError, ssl.SSLError, httpwire.WireError, framing.FramingError) as exc:
            logger.debug("connection from %s failed: %s", addr, exc)
            try:
                conn.close()
            except OSError:
                pass

    # -- tunnel side -------------------------------------------------------

    def _handle_tunnel(self, conn: socket.socket, first: bytes) -> None:
        reader = framing.FrameReader()
        frames = reader.feed(first)
        deadline = time.monotonic() + 10.0
        while not frames:
            if time.monotonic() > deadline:
                conn.close()
                return
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                continue
            if not chunk:
                conn.close()
                return
            frames.extend(reader.feed(chunk))
        hello, handshake_rest = frames[0], frames[1:]
        if hello.frame_type != framing.HELLO:
            conn.close()
            return
        try:
            doc = json.loads(hello.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            conn.close()
            return
        if doc.get("proto") != 1:
            self._send_raw(conn, framing.TunnelFrame(
                framing.WELCOME, 0,
                json.dumps({"error": f"unsupported protocol version {doc.get('proto')!r}"}).encode(),
            ))
            conn.close()
            return

        session = self._register(doc.get("token"), conn)
        if session is None:
            self._send_raw(conn, framing.TunnelFrame(
                framing.WELCOME, 0, json.dumps({"error": "token is already connected"}).encode(),
            ))
            conn.close()
            return
        session.send_frames([framing.welcome_frame(self.public_url(session.token), session.token)])
        self._tunnel_loop(session, conn, reader, handshake_rest)

    def _register(self, requested: str | None, conn: socket.socket) -> _Session | None:
        with self._registry_lock:
            if requested is not None and requested in self._sessions:
                session = self._sessions[requested]
                with session.lock:
                    if session.conn is not None:
                        return None
                    session.conn = conn
                    session.disconnected_at = None
                session.last_ping = time.monotonic()
                return session
            token = make_token()
            while token in self._sessions:
                token = make_token()
            session = _Session(token, conn)
            self._sessions[token] = session
            return session

    def _send_raw(self, conn: socket.socket, frame: framing.TunnelFrame) -> None:
        try:
            conn.sendall(framing.frame_encode(frame))
        except OSError:
            pass

    def _tunnel_loop(
        self,
        session: _Session,
        conn: socket.socket,
        reader: framing.FrameReader,
        pending: list[framing.TunnelFrame],
    ) -> None:
        conn.settimeout(0.5)
        frames = list(pending)
        while not self._stop.is_set():
            for frame in frames:
                if frame.frame_type == framing.PING:
                    session.last_ping = time.monotonic()
                    session.send_frames([framing.TunnelFrame(framing.PONG)])
                elif frame.frame_type == framing.DATA:
                    with session.lock:
                        stream = session.streams.get(frame.stream_id)
                    if stream is not None:
                        stream.q.put(frame.payload)
                elif frame.frame_type == framing.CLOSE:
                    with session.lock:
                        stream = session.streams.get(frame.stream_id)
                    if stream is not None:
                        stream.q.put(_CLOSE)
                # OPEN/HELLO from an established host are ignored.
            frames = []
            if session.conn is not conn:
                return  # evicted or replaced
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                continue
            except (OSError, framing.FramingError):
                break
            if not chunk:
                break
            try:
                frames = reader.feed(chunk)
            except framing.FramingError:
                break
        with session.lock:
            mine = session.conn is conn
        if mine:
            session.mark_disconnected()
        else:
            try:
                conn.close()
            except OSError:
                pass

    # -- public side ---------------------------------------------------------

    def _handle_public(self, conn: socket.socket, first: bytes) -> None:
        deadline = time.monotonic() + 30.0
        buf = bytearray(first)
        head, leftover = httpwire.recv_head(conn, buf, deadline)
        method, target, version = httpwire.parse_request_line(head)

        token, rest, query = _split_target(target)
        if not token:
            self._respond(conn, 404, "unknown_token", "no share token in path")
            return
        with self._registry_lock:
            session = self._sessions.get(token)
        if session is None:
            self._respond(conn, 404, "unknown_token", f"no active share link for {token!r}")
            return
        if rest is None:
            self._redirect(conn, f"/{token}/{query}")
            return
        with session.lock:
            alive = session.conn is not None
        if not alive:
            self._respond(conn, 502, "tunnel_down", "the host is not connected")
            return

        body = self._read_body(conn, head, leftover, deadline)
        rewritten = f"{method} {rest} {version}".encode("ascii") + head[head.find(b"\r\n") :]

        stream = session.open_stream()
        try:
            frames = [framing.TunnelFrame(framing.OPEN, stream.sid)]
            frames.extend(framing.data_frames(stream.sid, rewritten + body))
            if not session.send_frames(frames):
                self._respond(conn, 502, "tunnel_down", "the host connection dropped")
                return
            self._pump_response(conn, session, stream)
        finally:
            session.drop_stream(stream.sid)
            try:
                conn.close()
            except OSError:
                pass

    def _read_body(
        self, conn: socket.socket, head: bytes, leftover: bytearray, deadline: float
    ) -> bytes:
        te = httpwire.header_value(head, "Transfer-Encoding")
        if te is not None and "chunked" in te.lower():
            return self._read_chunked(conn, leftover, deadline)
        cl = httpwire.header_value(head, "Content-Length")
        if cl is None:
            return b""
        try:
            length = int(cl)
        except ValueError as exc:
            raise httpwire.WireError(f"bad Content-Length {cl!r}") from exc
        if length > MAX_RELAY_BODY:
            raise httpwire.WireError("request body exceeds relay cap")
        return httpwire.recv_exact(conn, leftover, length, deadline)

    def _read_chunked(self, conn: socket.socket, buf: bytearray, deadline: float) -> bytes:
        # Forwarded verbatim: sizes are parsed only to find the end.
        out = bytearray()
        while True:
            while True:
                nl = buf.find(b"\r\n")
                if nl >= 0:
                    break
                httpwire.recv_more(conn, buf, deadline)
            size_line = bytes(buf[: nl + 2])
            del buf[: nl + 2]
            out += size_line
            try:
                size = int(size_line.split(b";", 1)[0].strip(), 16)
            except ValueError as exc:
                raise httpwire.WireError("bad chunk size") from exc
            if len(out) + size > MAX_RELAY_BODY:
                raise httpwire.WireError("request body exceeds relay cap")
            out += httpwire.recv_exact(conn, buf, size + 2, deadline)
            if size == 0:
                return bytes(out)

    def _pump_response(self, conn: socket.socket, session: _Session, stream: _Stream) -> None:
        sent_any = False
        while True:
            try:
                item = stream.q.get(timeout=self.stream_timeout)
            except queue.Empty:
                if not sent_any:
                    self._respond(conn, 504, "host_timeout", "the host did not answer in time")
                session.send_frames([framing.TunnelFrame(framing.CLOSE, stream.sid)])
                return
            if item is _CLOSE:
                return
            if item is _DEAD:
                if not sent_any:
                    self._respond(conn, 502, "tunnel_down", "the host connection dropped")
                return
            try:
                conn.sendall(item)
                sent_any = True
            except OSError:
                session.send_frames([framing.TunnelFrame(framing.CLOSE, stream.sid)])
                return

    def _respond(self, conn: socket.socket, status: int, code: str, detail: str) -> None:
        reasons = {404: "Not Found", 502: "Bad Gateway", 504: "Gateway Timeout"}
        body = json.dumps({"error_code": code, "detail": detail}).encode("utf-8")
        head = (
            f"HTTP/1.1 {status} {reasons.get(status, 'Error')}\r\n"
            f"Content-Type: application/json\r\n"
            f"Content-Length: {len(body)}\r\n"
            f"Connection: close\r\n\r\n"
        ).encode("ascii")
        try:
            conn.sendall(head + body)
        except OSError:
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _redirect(self, conn: socket.socket, location: str) -> None:
        head = (
            f"HTTP/1.1 301 Moved Permanently\r\n"
            f"Location: {location}\r\n"
            f"Content-Length: 0\r\n"
            f"Connection: close\r\n\r\n"
        ).encode("ascii")
        try:
            conn.sendall(head)
        except OSError:
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    # -- housekeeping --------------------------------------------------------

    def _reaper_loop(self) -> None:
        while not self._stop.wait(0.5):
            now = time.monotonic()
            stale: list[_Session] = []
            expired: list[str] = []
            with self._registry_lock:
                for token, session in list(self._sessions.items()):
                    with session.lock:
                        connected = session.conn is not None
                        idle_since = session.disconnected_at
                    if connected and now - session.last_ping > self.ping_timeout:
                        stale.append(session)
                    elif not connected and idle_since is not None and now - idle_since > self.reuse_grace:
                        expired.append(token)
                for token in expired:
                    del self._sessions[token]
            for session in stale:
                logger.info("evicting silent session %s", session.token)
                session.mark_disconnected()


def _split_target(target: str) -> tuple[str, str | None, str]:
    """Split ``/<token>[/rest][?query]`` into (token, rest-with-query, query)."""
    if not target.startswith("/"):
        return "", None, ""
    tail = target[1:]
    slash = tail.find("/")
    qmark = tail.find("?")
    if slash == -1 or (qmark != -1 and qmark < slash):
        if qmark == -1:
            return tail, None, ""
        return tail[:qmark], None, tail[qmark:]
    return tail[:slash], tail[slash:], ""
