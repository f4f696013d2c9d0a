"""Byte-level HTTP helpers for the relay path.

The relay never interprets request or response bodies; these helpers do
the minimum head inspection needed to route one request and to know where
one response ends, so the surrounding bytes can be forwarded verbatim.
"""

from __future__ import annotations

import socket
import time

HEAD_END = b"\r\n\r\n"
MAX_HEAD = 65536


class WireError(Exception):
    """Malformed or oversized HTTP head on the relay path."""


def recv_head(
    conn: socket.socket, buf: bytearray, deadline: float, max_head: int = MAX_HEAD
) -> tuple[bytes, bytearray]:
    """Read up to and including the blank line; returns (head, leftover)."""
    while True:
        end = buf.find(HEAD_END)
        if end >= 0:
            split = end + len(HEAD_END)
            return bytes(buf[:split]), bytearray(buf[split:])
        if len(buf) > max_head:
            raise WireError("request head exceeds size cap")
        chunk = _recv_some(conn, deadline)
        if chunk is None:
            continue
        if chunk == b"":
            raise WireError("connection closed before head completed")
        buf += chunk


def _recv_some(conn: socket.socket, deadline: float) -> bytes | None:
    """One read: bytes on data, b'' on EOF, None on a sub-deadline timeout."""
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise WireError("timed out reading")
    conn.settimeout(min(remaining, 1.0))
    try:
        return conn.recv(65536)
    except socket.timeout:
        return None
    except OSError as exc:
        raise WireError(f"socket error: {exc}") from exc


def recv_more(conn: socket.socket, buf: bytearray, deadline: float) -> None:
    """Block until at least one more byte lands in ``buf``."""
    while True:
        chunk = _recv_some(conn, deadline)
        if chunk is None:
            continue
        if chunk == b"":
            raise WireError("connection closed mid-body")
        buf += chunk
        return


def recv_exact(conn: socket.socket, buf: bytearray, n: int, deadline: float) -> bytes:
    """Consume exactly ``n`` bytes, draining ``buf`` before the socket."""
    while len(buf) < n:
        chunk = _recv_some(conn, deadline)
        if chunk is None:
            continue
        if chunk == b"":
            raise WireError("connection closed mid-body")
        buf += chunk
    out = bytes(buf[:n])
    del buf[:n]
    return out


def parse_request_line(head: bytes) -> tuple[str, str, str]:
    """Split the request line into (method, target, version)."""
    line, _, _ = head.partition(b"\r\n")
    parts = line.split(b" ")
    if len(parts) != 3:
        raise WireError(f"malformed request line: {line[:120]!r}")
    try:
        return tuple(p.decode("ascii") for p in parts)  # type: ignore[return-value]
    except UnicodeDecodeError as exc:
        raise WireError("request line is not ASCII") from exc


def header_value(head: bytes, name: str) -> str | None:
    """Case-insensitive lookup of one header value in a raw head block."""
    wanted = name.lower().encode("ascii")
    for line in head.split(b"\r\n")[1:]:
        if not line:
            break
        key, _, value = line.partition(b":")
        if key.strip().lower() == wanted:
            return value.strip().decode("latin-1")
    return None


class ResponseEndDetector:
    """Feed response bytes; learn the byte offset where one response ends.

    Handles Content-Length, chunked transfer coding, bodyless statuses
    (1xx/204/304 and responses to HEAD), and falls back to
    connection-close framing when no length is declared (``end`` stays
    None until EOF).
    """

    def __init__(self, head_request: bool = False):
        self._head_request = head_request
        self._buf = bytearray()
        self._consumed = 0  # bytes accounted to finished message parts
        self._state = "head"
        self._body_left = 0
        self.end: int | None = None  # absolute offset of the response end
        self.until_eof = False

    def feed(self, data: bytes) -> None:
        if self.end is not None or self.until_eof:
            return
        self._buf += data
        while self.end is None and not self.until_eof:
            if self._state == "head":
                if not self._parse_head():
                    return
            elif self._state == "body":
                take = min(self._body_left, len(self._buf))
                self._advance(take)
                self._body_left -= take
                if self._body_left:
                    return
                self.end = self._consumed
            elif self._state == "chunk-size":
                if not self._parse_chunk_size():
                    return
            elif self._state == "chunk-data":
                take = min(self._body_left, len(self._buf))
                self._advance(take)
                self._body_left -= take
                if self._body_left:
                    return
                self._state = "chunk-size"
            elif self._state == "trailer":
                if not self._parse_trailer():
                    return

    def _advance(self, n: int) -> None:
        del self._buf[:n]
        self._consumed += n

    def _parse_head(self) -> bool:
        end = self._buf.find(HEAD_END)
        if end < 0:
            return False
        head = bytes(self._buf[: end + len(HEAD_END)])
        self._advance(end + len(HEAD_END))
        status_line = head.split(b"\r\n", 1)[0].split(b" ")
        status = int(status_line[1]) if len(status_line) > 1 and status_line[1].isdigit() else 200
        if 100 <= status < 200:
            return True  # interim response; a final head follows
        if status in (204, 304) or self._head_request:
            self.end = self._consumed
            return True
        te = header_value(head, "Transfer-Encoding")
        if te is not None and "chunked" in te.lower():
            self._state = "chunk-size"
            return True
        cl = header_value(head, "Content-Length")
        if cl is not None:
            try:
                self._body_left = int(cl)
            except ValueError:
                self.until_eof = True
                return True
            self._state = "body"
            if self._body_left == 0:
                self.end = self._consumed
            return True
        self.until_eof = True
        return True

    def _parse_chunk_size(self) -> bool:
        nl = self._buf.find(b"\r\n")
        if nl < 0:
            return False
        size_token = bytes(self._buf[:nl]).split(b";", 1)[0].strip()
        self._advance(nl + 2)
        try:
            size = int(size_token, 16)
        except ValueError:
            self.until_eof = True
            return True
        if size == 0:
            self._state = "trailer"
            return True
        self._body_left = size + 2  # data plus trailing CRLF
        self._state = "chunk-data"
        return True

    def _parse_trailer(self) -> bool:
        # Trailer section ends at the first empty line.
        nl = self._buf.find(b"\r\n")
        if nl < 0:
            return False
        empty = nl == 0
        self._advance(nl + 2)
        if empty:
            self.end = self._consumed
        return True
