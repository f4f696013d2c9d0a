"""Start, validate, invoke, and stop the wrapped inference backend.

Three modes are supported.  ``subprocess`` speaks a line-delimited stdio
protocol: the child prints ``READY`` once it can serve, then answers one
``{"data":[...]}`` request line per ``{"data":[...]}`` response line.
``http`` POSTs the same request body to an endpoint and expects the same
response body.  ``builtin_echo`` returns its inputs unchanged and exists
for wiring and tests.

A subprocess replica handles one request at a time; concurrent callers
queue FIFO for the next free replica.  HTTP mode admits up to
``max_concurrency`` calls at once.
"""

from __future__ import annotations

import json
import numbers
import os
import queue
import select
import socket
import subprocess
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import media
from .schema import BackendConfig, Finding, InterfaceSpec, ValidationReport

READY_LINE = b"READY"
DEFAULT_READY_TIMEOUT = 30.0
DEFAULT_SHUTDOWN_GRACE = 5.0


class BackendError(Exception):
    """Base class for backend failures."""


class SpawnFailed(BackendError):
    """The subprocess could not be started or exited before readiness."""


class ReadinessTimeout(BackendError):
    """The subprocess never printed the readiness line in time."""


class ProbeFailed(BackendError):
    """The HTTP endpoint did not answer the startup health probe."""


class BackendExited(BackendError):
    """The backend died or was shut down while a call was in flight."""


class BackendTimeout(BackendError):
    """The backend did not answer within its configured timeout."""


class MalformedResponse(BackendError):
    """The backend answered with the wrong shape, arity, or value types."""


@dataclass(frozen=True)
class ModelExchange:
    """One request/response pair crossing the backend boundary."""

    inputs: tuple
    outputs: tuple
    duration_ms: float


class _Worker:
    """One subprocess replica with buffered, timeout-aware line IO."""

    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        self._buf = bytearray()

    def read_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        fd = self.proc.stdout.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[:nl])
                del self._buf[: nl + 1]
                return line.rstrip(b"\r")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendTimeout(f"no response line within {timeout:.3g} s")
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.5))
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                code = self.proc.poll()
                raise BackendExited(f"backend process exited (code {code})")
            self._buf += chunk

    def write_line(self, payload: bytes) -> None:
        try:
            self.proc.stdin.write(payload + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendExited(f"backend stdin closed: {exc}") from exc

    def kill(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()


_POOL_CLOSED = object()


class BackendHandle:
    """A started backend.  ``infer`` is only legal while state is ready."""

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.mode = cfg.mode
        self._state = "ready"
        self._lock = threading.Lock()
        self._workers: list[_Worker] = []
        self._pool: queue.Queue = queue.Queue()
        self._http_gate = threading.BoundedSemaphore(cfg.max_concurrency)

    @property
    def state(self) -> str:
        with self._lock:
            return self._state

    def _mark_dead(self) -> None:
        with self._lock:
            self._state = "dead"


def start_backend(cfg: BackendConfig, *, ready_timeout: float = DEFAULT_READY_TIMEOUT) -> BackendHandle:
    """Bring the configured backend up and wait until it can serve.

    Subprocess mode spawns ``cfg.replicas`` children and waits for each to
    print ``READY``; http mode sends one GET probe (any HTTP answer counts
    as reachable); builtin_echo is immediately ready.
    """
    handle = BackendHandle(cfg)
    if cfg.mode == "builtin_echo":
        return handle
    if cfg.mode == "http":
        probe = urllib.request.Request(cfg.endpoint, method="GET")
        try:
            with urllib.request.urlopen(probe, timeout=min(ready_timeout, 10.0)):
                pass
        except urllib.error.HTTPError:
            pass  # endpoint answered; status is its business
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise ProbeFailed(f"health probe of {cfg.endpoint} failed: {exc}") from exc
        return handle

    deadline = time.monotonic() + ready_timeout
    for _ in range(cfg.replicas):
        try:
            proc = subprocess.Popen(
                list(cfg.command),
                cwd=cfg.workdir,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            _teardown_workers(handle)
            raise SpawnFailed(f"cannot start {cfg.command[0]!r}: {exc}") from exc
        worker = _Worker(proc)
        handle._workers.append(worker)
        try:
            _await_ready(worker, deadline)
        except BackendError:
            _teardown_workers(handle)
            raise
        handle._pool.put(worker)
    return handle


def _await_ready(worker: _Worker, deadline: float) -> None:
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ReadinessTimeout("backend never printed READY")
        try:
            line = worker.read_line(remaining)
        except BackendTimeout as exc:
            raise ReadinessTimeout("backend never printed READY") from exc
        except BackendExited as exc:
            raise SpawnFailed(str(exc)) from exc
        if line == READY_LINE:
            return
        # Anything before READY is startup chatter; ignore it.


def _teardown_workers(handle: BackendHandle) -> None:
    for worker in handle._workers:
        worker.kill()
    handle._workers.clear()
    handle._mark_dead()


def _raw_exchange(handle: BackendHandle, inputs: Sequence) -> tuple[list, float]:
    """Send one request and return (outputs, duration_ms); shape-checked only."""
    if handle.state != "ready":
        raise BackendExited("backend is shut down")
    request = json.dumps({"data": list(inputs)}, ensure_ascii=False).encode("utf-8")

    if handle.cfg.mode == "builtin_echo":
        start = time.perf_counter()
        outputs = list(inputs)
        duration_ms = (time.perf_counter() - start) * 1000.0
        return outputs, duration_ms

    if handle.cfg.mode == "http":
        with handle._http_gate:
            start = time.perf_counter()
            req = urllib.request.Request(
                handle.cfg.endpoint,
                data=request + b"\n",
                headers={"Content-Type": "application/json"},
                method="POST",
            )
            try:
                with urllib.request.urlopen(req, timeout=handle.cfg.timeout_ms / 1000.0) as resp:
                    body = resp.read()
            except urllib.error.HTTPError as exc:
                raise MalformedResponse(f"backend returned status {exc.code}") from exc
            except (TimeoutError, socket.timeout) as exc:
                raise BackendTimeout(f"no response within {handle.cfg.timeout_ms} ms") from exc
            except (urllib.error.URLError, OSError) as exc:
                reason = getattr(exc, "reason", exc)
                if isinstance(reason, (TimeoutError, socket.timeout)):
                    raise BackendTimeout(f"no response within {handle.cfg.timeout_ms} ms") from exc
                raise BackendExited(f"backend connection failed: {reason}") from exc
            duration_ms = (time.perf_counter() - start) * 1000.0
        return _parse_response(body), duration_ms

    # subprocess: FIFO admission for the next free replica
    worker = handle._pool.get()
    if worker is _POOL_CLOSED:
        handle._pool.put(_POOL_CLOSED)  # wake the next waiter too
        raise BackendExited("backend is shut down")
    healthy = False
    try:
        if worker.proc.poll() is not None:
            raise BackendExited(f"backend process exited (code {worker.proc.poll()})")
        start = time.perf_counter()
        worker.write_line(request)
        line = worker.read_line(handle.cfg.timeout_ms / 1000.0)
        duration_ms = (time.perf_counter() - start) * 1000.0
        healthy = True
        return _parse_response(line), duration_ms
    finally:
        if healthy:
            handle._pool.put(worker)
        else:
            # The stream may be desynced or dead; retire this replica.
            worker.kill()
            if worker in handle._workers:
                handle._workers.remove(worker)
            if not handle._workers:
                handle._mark_dead()
                handle._pool.put(_POOL_CLOSED)


def _parse_response(body: bytes) -> list:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponse(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise MalformedResponse('response must be an object with a "data" list')
    return doc["data"]


EXPECTED_VALUE = {
    "label_out": "label map",
    "text_out": "text",
    "image_out": "image data URL",
}


def describe_value(value) -> str:
    """Human name for a wire value's type, used in findings and errors."""
    if isinstance(value, str):
        return "data URL" if value.startswith("data:") else "text"
    if isinstance(value, Mapping):
        if value and all(
            isinstance(k, str) and isinstance(v, numbers.Real) and not isinstance(v, bool)
            for k, v in value.items()
        ):
            return "label map"
        return "object"
    return type(value).__name__


def value_matches(kind: str, value) -> bool:
    if kind == "label_out":
        return describe_value(value) == "label map"
    if kind == "text_out":
        return isinstance(value, str)
    if kind == "image_out":
        return isinstance(value, str) and value.startswith("data:image/")
    return False


def infer(handle: BackendHandle, inputs: Sequence, spec: InterfaceSpec) -> ModelExchange:
    """Run one inference; arity and value types are checked against the spec.

    ``duration_ms`` covers the backend call only, not decoding or
    pre/post-processing.
    """
    if len(inputs) != len(spec.inputs):
        raise ValueError(f"expected {len(spec.inputs)} input values, got {len(inputs)}")
    outputs, duration_ms = _raw_exchange(handle, inputs)
    if len(outputs) != len(spec.outputs):
        raise MalformedResponse(
            f"expected {len(spec.outputs)} output values, got {len(outputs)}"
        )
    for i, (component, value) in enumerate(zip(spec.outputs, outputs)):
        if not value_matches(component.kind, value):
            raise MalformedResponse(
                f"output {i}: expected {EXPECTED_VALUE[component.kind]}, "
                f"got {describe_value(value)}"
            )
    return ModelExchange(
        inputs=tuple(inputs), outputs=tuple(outputs), duration_ms=duration_ms
    )


_GRAY_8X8_PNG_URL: str | None = None


def synthetic_sample(component) -> str:
    """Fixed, deterministic sample value for one input component."""
    global _GRAY_8X8_PNG_URL
    if component.kind == "text_in":
        return "sample"
    if component.kind == "image_in":
        if _GRAY_8X8_PNG_URL is None:
            gray = np.full((8, 8, 3), 128, dtype=np.uint8)
            _GRAY_8X8_PNG_URL = media.encode_payload(media.from_pixels(gray))
        return _GRAY_8X8_PNG_URL
    if component.kind == "audio_in":
        rate = component.sample_rate or 16000
        frames = int(round(0.1 * rate))
        silence = np.zeros((frames, 1), dtype=np.int16)
        return media.encode_payload(media.from_samples(silence, rate))
    raise ValueError(f"no synthetic sample for kind {component.kind!r}")


def validate_backend(handle: BackendHandle, spec: InterfaceSpec) -> ValidationReport:
    """Probe the backend with synthetic samples and type-check its outputs.

    Transport failures propagate as the usual infer errors; shape problems
    become findings.
    """
    samples = [synthetic_sample(c) for c in spec.inputs]
    outputs, _ = _raw_exchange(handle, samples)
    findings: list[Finding] = []
    if len(outputs) != len(spec.outputs):
        findings.append(
            Finding(
                field="output",
                rule="arity",
                message=f"expected {len(spec.outputs)} output values, got {len(outputs)}",
            )
        )
        return ValidationReport(findings=tuple(findings))
    for i, (component, value) in enumerate(zip(spec.outputs, outputs)):
        if not value_matches(component.kind, value):
            findings.append(
                Finding(
                    field=f"output {i}",
                    rule="type",
                    message=f"expected {EXPECTED_VALUE[component.kind]}, "
                    f"got {describe_value(value)}",
                )
            )
    return ValidationReport(findings=tuple(findings))


def shutdown(handle: BackendHandle, *, grace: float = DEFAULT_SHUTDOWN_GRACE) -> None:
    """Stop the backend; idempotent, and safe while calls are in flight.

    Subprocess replicas get close-of-input, then ``grace`` seconds to exit
    before being killed.  In-flight calls surface :class:`BackendExited`.
    """
    with handle._lock:
        already_dead = handle._state == "dead"
        handle._state = "dead"
    if already_dead or handle.mode != "subprocess":
        return
    deadline = time.monotonic() + grace
    for worker in handle._workers:
        try:
            if worker.proc.stdin:
                worker.proc.stdin.close()
        except OSError:
            pass
    for worker in handle._workers:
        try:
            worker.proc.wait(timeout=max(0.0, deadline - time.monotonic()))
        except subprocess.TimeoutExpired:
            worker.proc.kill()
            worker.proc.wait()
    handle._workers.clear()
    handle._pool.put(_POOL_CLOSED)
