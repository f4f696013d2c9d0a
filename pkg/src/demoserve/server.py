"""Host-side HTTP service tying schema, media, backend, and flags together.

Endpoints: ``GET /`` (and static assets), ``GET /config``,
``GET /healthz``, ``POST /api/predict``, ``POST /api/flag``.  All error
responses are structured JSON, never HTML, so clients and tests can match
on ``error_code``.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import backend as backend_mod
from . import media
from .flags import FlagStore, FlagStoreError
from .schema import InterfaceSpec, render_config

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_DEPTH = 32
MAX_BODY = 25 * 1024 * 1024

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}

_FALLBACK_INDEX = b"""<!doctype html>
<html><head><meta charset="utf-8"><title>demoserve</title></head>
<body><p>The web UI has not been built. The JSON API is live at
<code>/config</code>, <code>/api/predict</code>, and <code>/api/flag</code>.</p>
</body></html>
"""


class ApiError(Exception):
    """An error with a fixed HTTP status and machine-readable code."""

    def __init__(self, status: int, code: str, detail: str, input_index: int | None = None):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail
        self.input_index = input_index

    def body(self) -> dict:
        doc = {"error_code": self.code, "detail": self.detail}
        if self.input_index is not None:
            doc["input_index"] = self.input_index
        return doc


def default_static_dir() -> Path | None:
    candidate = Path(__file__).resolve().parent / "static"
    return candidate if candidate.is_dir() else None


class DemoServer:
    """One running demo: spec + backend + flag store behind an HTTP server."""

    def __init__(
        self,
        spec: InterfaceSpec,
        handle: backend_mod.BackendHandle,
        store: FlagStore,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: str | Path | None = None,
        queue_depth: int = DEFAULT_QUEUE_DEPTH,
        max_body: int = MAX_BODY,
    ):
        self.spec = spec
        self.handle = handle
        self.store = store
        self.queue_depth = queue_depth
        self.max_body = max_body
        self.static_dir = Path(static_dir) if static_dir is not None else default_static_dir()
        self._share_lock = threading.Lock()
        self._share_url: str | None = None
        self._inflight = 0
        self._inflight_lock = threading.Lock()

        app = self
        handler = type("Handler", (_Handler,), {"app": app})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}"

    @property
    def share_url(self) -> str | None:
        with self._share_lock:
            return self._share_url

    def set_share_url(self, url: str | None) -> None:
        with self._share_lock:
            self._share_url = url

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=3.0)

    # -- request logic (handler-thread safe; no shared mutable state) --------

    def config_document(self) -> bytes:
        return render_config(self.spec, self.share_url).encode("utf-8")

    def _admit(self) -> None:
        with self._inflight_lock:
            if self._inflight >= self.queue_depth:
                raise ApiError(503, "busy", "prediction queue is full")
            self._inflight += 1

    def _release(self) -> None:
        with self._inflight_lock:
            self._inflight -= 1

    def predict(self, body: dict) -> dict:
        data = body.get("data")
        if not isinstance(data, list):
            raise ApiError(400, "arity", 'request must carry a "data" list')
        if len(data) != len(self.spec.inputs):
            raise ApiError(
                400,
                "arity",
                f"expected {len(self.spec.inputs)} input values, got {len(data)}",
            )
        edit_lists = self._parse_edit_lists(body.get("edits"), len(data))

        self._admit()
        try:
            values, _ = self._prepare_inputs(data, edit_lists)
            values = media.run_steps(self.spec.backend.preprocess, values)
            exchange = self._call_backend(values)
            outputs = media.run_steps(self.spec.backend.postprocess, list(exchange.outputs))
            rendered = [
                self._render_output(i, component, value)
                for i, (component, value) in enumerate(zip(self.spec.outputs, outputs))
            ]
            return {"data": rendered, "duration_ms": exchange.duration_ms}
        finally:
            self._release()

    def _parse_edit_lists(self, raw, arity: int) -> list[list[media.EditOp]]:
        if raw is None:
            return [[] for _ in range(arity)]
        if not isinstance(raw, list) or len(raw) != arity:
            raise ApiError(400, "arity", f'"edits" must be a list of {arity} edit lists')
        parsed: list[list[media.EditOp]] = []
        for i, edits in enumerate(raw):
            if not isinstance(edits, list):
                raise ApiError(400, "edit", f"edits[{i}] must be a list", input_index=i)
            if edits and self.spec.inputs[i].kind != "image_in":
                raise ApiError(
                    400,
                    "edit",
                    f"edits[{i}]: edit lists for non-image inputs must be empty",
                    input_index=i,
                )
            try:
                parsed.append([media.parse_edit(e) for e in edits])
            except media.BadEdit as exc:
                raise ApiError(400, "edit", f"edits[{i}]: {exc}", input_index=i) from exc
        return parsed

    def _prepare_inputs(
        self, data: list, edit_lists: list[list[media.EditOp]]
    ) -> tuple[list, list]:
        """Decode, edit, and preprocess each input; returns (values, edited payloads)."""
        values: list = []
        edited_payloads: list = []
        for i, (component, value) in enumerate(zip(self.spec.inputs, data)):
            edits = edit_lists[i]
            if component.kind == "text_in":
                if not isinstance(value, str):
                    raise ApiError(400, "type", f"input {i} must be text", input_index=i)
                values.append(value)
                edited_payloads.append(None)
                continue
            if not isinstance(value, str):
                raise ApiError(400, "type", f"input {i} must be a data URL", input_index=i)
            expected = "image" if component.kind == "image_in" else "audio"
            try:
                payload = media.decode_payload(value, expected)
            except media.BadDataUrl as exc:
                raise ApiError(400, "bad_data_url", f"input {i}: {exc}", input_index=i) from exc
            except media.KindMismatch as exc:
                raise ApiError(400, "kind_mismatch", f"input {i}: {exc}", input_index=i) from exc
            except media.BadMedia as exc:
                raise ApiError(400, "bad_media", f"input {i}: {exc}", input_index=i) from exc
            if component.kind == "image_in":
                try:
                    edited = media.apply_edits(payload, edits) if edits else payload
                except media.EditOutOfBounds as exc:
                    raise ApiError(400, "edit_bounds", f"input {i}: {exc}", input_index=i) from exc
                values.append(media.preprocess_image(edited, component))
                edited_payloads.append(edited if edits else None)
            else:
                values.append(media.encode_payload(payload))
                edited_payloads.append(None)
        return values, edited_payloads

    def _call_backend(self, values: list) -> backend_mod.ModelExchange:
        try:
            return backend_mod.infer(self.handle, values, self.spec)
        except backend_mod.BackendTimeout as exc:
            raise ApiError(502, "backend_timeout", str(exc)) from exc
        except backend_mod.MalformedResponse as exc:
            raise ApiError(502, "backend_response", str(exc)) from exc
        except backend_mod.BackendError as exc:
            raise ApiError(502, "backend", str(exc)) from exc

    def _render_output(self, index: int, component, value):
        if component.kind == "label_out":
            try:
                result = media.postprocess_label(value, component.top_k)
            except (media.EmptyScores, media.BadScores) as exc:
                raise ApiError(502, "backend_response", f"output {index}: {exc}") from exc
            return {
                "top_label": result.top_label,
                "confidences": [[label, score] for label, score in result.confidences],
            }
        return value

    def flag(self, body: dict) -> dict:
        for key in ("data", "output"):
            if key not in body:
                raise ApiError(400, "missing_field", f'flag submission must carry "{key}"')
        data, output = body["data"], body["output"]
        message = body.get("message", "")
        if not isinstance(message, str):
            raise ApiError(400, "type", "message must be text")
        if not isinstance(data, list) or len(data) != len(self.spec.inputs):
            raise ApiError(
                400, "arity", f"expected {len(self.spec.inputs)} input values"
            )
        if not isinstance(output, list) or len(output) != len(self.spec.outputs):
            raise ApiError(
                400, "arity", f"expected {len(self.spec.outputs)} output values"
            )
        edit_lists = self._parse_edit_lists(body.get("edits"), len(data))

        originals: list = []
        edited: list = []
        any_edits = False
        for i, (component, value) in enumerate(zip(self.spec.inputs, data)):
            if component.kind == "text_in":
                if not isinstance(value, str):
                    raise ApiError(400, "type", f"input {i} must be text", input_index=i)
                originals.append(value)
                edited.append(None)
                continue
            expected = "image" if component.kind == "image_in" else "audio"
            try:
                payload = media.decode_payload(value, expected)
                originals.append(media.encode_payload(payload))
                if edit_lists[i]:
                    any_edits = True
                    edited.append(media.encode_payload(media.apply_edits(payload, edit_lists[i])))
                else:
                    edited.append(None)
            except media.EditOutOfBounds as exc:
                raise ApiError(400, "edit_bounds", f"input {i}: {exc}", input_index=i) from exc
            except media.MediaError as exc:
                raise ApiError(400, "bad_media", f"input {i}: {exc}", input_index=i) from exc

        try:
            flag_id = self.store.append_flag(
                inputs_original=originals,
                output=output,
                message=message,
                inputs_edited=edited if any_edits else None,
            )
        except FlagStoreError as exc:
            raise ApiError(500, "storage", str(exc)) from exc
        return {"id": flag_id}

    def static_file(self, name: str) -> tuple[bytes, str] | None:
        if self.static_dir is None:
            return None
        if not name or any(part in ("", ".", "..") for part in name.split("/")) or "\\" in name:
            return None
        path = self.static_dir / name
        try:
            resolved = path.resolve()
            resolved.relative_to(self.static_dir.resolve())
        except (OSError, ValueError):
            return None
        if not resolved.is_file():
            return None
        ctype = _CONTENT_TYPES.get(resolved.suffix.lower(), "application/octet-stream")
        return resolved.read_bytes(), ctype


class _Handler(BaseHTTPRequestHandler):
    app: DemoServer  # installed by DemoServer
    protocol_version = "HTTP/1.1"
    server_version = "demoserve"
    sys_version = ""
    disable_nagle_algorithm = True  # keep-alive responses must not stall on ACKs

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        logger.debug("%s - %s", self.address_string(), format % args)

    def _send_json(self, status: int, doc: dict) -> None:
        body = json.dumps(doc, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def send_error(self, code, message=None, explain=None):  # structured, not HTML
        try:
            self._send_json(code, {"error_code": "http", "detail": message or str(code)})
        except OSError:
            pass
        self.close_connection = True

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0) or 0)
        if length > self.app.max_body:
            raise ApiError(413, "body_too_large", f"request body exceeds {self.app.max_body} bytes")
        raw = self.rfile.read(length) if length else b""
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, "bad_json", f"request body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ApiError(400, "bad_json", "request body must be a JSON object")
        return doc

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/config":
            self._send_bytes(200, self.app.config_document(), "application/json")
        elif path == "/healthz":
            self._send_json(200, {"status": "ok"})
        elif path == "/":
            served = self.app.static_file("index.html")
            if served is None:
                self._send_bytes(200, _FALLBACK_INDEX, "text/html; charset=utf-8")
            else:
                self._send_bytes(200, *served)
        else:
            served = self.app.static_file(path.lstrip("/"))
            if served is None:
                self._send_json(404, {"error_code": "not_found", "detail": f"no route {path}"})
            else:
                self._send_bytes(200, *served)

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        try:
            if path == "/api/predict":
                body = self._read_body()
                self._send_json(200, self.app.predict(body))
            elif path == "/api/flag":
                body = self._read_body()
                self._send_json(202, self.app.flag(body))
            else:
                self._send_json(404, {"error_code": "not_found", "detail": f"no route {path}"})
        except ApiError as exc:
            if exc.status == 413:
                self.close_connection = True  # body may be unread
            self._send_json(exc.status, exc.body())
        except Exception as exc:  # last-resort: never an HTML traceback
            logger.exception("unhandled error on %s", path)
            self._send_json(500, {"error_code": "internal", "detail": str(exc)})
