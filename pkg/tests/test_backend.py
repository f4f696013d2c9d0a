import http.server
import json
import threading
import time

import pytest

from conftest import shim_command
from demoserve import backend, media
from demoserve.schema import BackendConfig, ComponentSpec, InterfaceSpec


def text_spec(backend_cfg: BackendConfig, n_in=1, n_out=1) -> InterfaceSpec:
    return InterfaceSpec(
        title="t",
        inputs=tuple(ComponentSpec(kind="text_in") for _ in range(n_in)),
        outputs=tuple(ComponentSpec(kind="text_out") for _ in range(n_out)),
        backend=backend_cfg,
    )


def subprocess_cfg(*args: str, **kw) -> BackendConfig:
    return BackendConfig(mode="subprocess", command=tuple(shim_command(*args)), **kw)


ECHO = BackendConfig(mode="builtin_echo")


# -- builtin echo ----------------------------------------------------------------


def test_echo_ready_and_identity():
    handle = backend.start_backend(ECHO)
    assert handle.state == "ready"
    spec = text_spec(ECHO, n_in=3, n_out=3)
    exchange = backend.infer(handle, ["a", "b", "c"], spec)
    assert list(exchange.outputs) == ["a", "b", "c"]
    assert exchange.duration_ms >= 0
    backend.shutdown(handle)
    assert handle.state == "dead"


def test_shutdown_is_idempotent():
    handle = backend.start_backend(ECHO)
    backend.shutdown(handle)
    backend.shutdown(handle)
    assert handle.state == "dead"
    with pytest.raises(backend.BackendExited):
        backend.infer(handle, ["x"], text_spec(ECHO))


# -- subprocess mode ----------------------------------------------------------------


def test_subprocess_uppercase():
    cfg = subprocess_cfg("upper")
    handle = backend.start_backend(cfg)
    try:
        exchange = backend.infer(handle, ["abc"], text_spec(cfg))
        assert list(exchange.outputs) == ["ABC"]
    finally:
        backend.shutdown(handle)


def test_subprocess_echo_round_trip_with_media():
    cfg = subprocess_cfg("echo")
    handle = backend.start_backend(cfg)
    try:
        url = media.encode_payload(media.from_text("payload"))
        exchange = backend.infer(handle, [url], text_spec(cfg))
        assert exchange.outputs[0] == url
    finally:
        backend.shutdown(handle)


def test_spawn_failure():
    cfg = BackendConfig(mode="subprocess", command=("/nonexistent-backend-binary",))
    with pytest.raises(backend.SpawnFailed):
        backend.start_backend(cfg)


def test_exit_before_ready_is_spawn_failure():
    cfg = BackendConfig(mode="subprocess", command=("true",))
    with pytest.raises(backend.SpawnFailed):
        backend.start_backend(cfg, ready_timeout=5.0)


def test_readiness_timeout():
    cfg = subprocess_cfg("noready")
    start = time.monotonic()
    with pytest.raises(backend.ReadinessTimeout):
        backend.start_backend(cfg, ready_timeout=0.5)
    assert time.monotonic() - start < 5.0


def test_backend_timeout():
    cfg = subprocess_cfg("sleep", "5", timeout_ms=300)
    handle = backend.start_backend(cfg)
    try:
        with pytest.raises(backend.BackendTimeout):
            backend.infer(handle, ["x"], text_spec(cfg))
    finally:
        backend.shutdown(handle)


def test_killed_mid_call_raises_backend_exited():
    cfg = subprocess_cfg("sleep", "10")
    handle = backend.start_backend(cfg)
    errors = []

    def call():
        try:
            backend.infer(handle, ["x"], text_spec(cfg))
        except backend.BackendError as exc:
            errors.append(exc)

    thread = threading.Thread(target=call)
    thread.start()
    time.sleep(0.3)
    handle._workers[0].proc.kill()
    thread.join(timeout=5)
    assert len(errors) == 1 and isinstance(errors[0], backend.BackendExited)
    backend.shutdown(handle)


def test_shutdown_while_busy():
    cfg = subprocess_cfg("sleep", "10")
    handle = backend.start_backend(cfg)
    errors = []

    def call():
        try:
            backend.infer(handle, ["x"], text_spec(cfg))
        except backend.BackendError as exc:
            errors.append(exc)

    thread = threading.Thread(target=call)
    thread.start()
    time.sleep(0.3)
    backend.shutdown(handle, grace=0.3)
    thread.join(timeout=5)
    assert len(errors) == 1 and isinstance(errors[0], backend.BackendExited)
    assert handle.state == "dead"


def test_single_replica_serializes_calls():
    cfg = subprocess_cfg("sleep", "0.4", timeout_ms=10000)
    handle = backend.start_backend(cfg)
    try:
        start = time.monotonic()
        threads = [
            threading.Thread(target=backend.infer, args=(handle, ["x"], text_spec(cfg)))
            for _ in range(2)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert time.monotonic() - start >= 0.75
    finally:
        backend.shutdown(handle)


def test_two_replicas_run_in_parallel():
    cfg = subprocess_cfg("sleep", "0.4", timeout_ms=10000, replicas=2)
    handle = backend.start_backend(cfg)
    try:
        start = time.monotonic()
        threads = [
            threading.Thread(target=backend.infer, args=(handle, ["x"], text_spec(cfg)))
            for _ in range(2)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert time.monotonic() - start < 0.75
    finally:
        backend.shutdown(handle)


def test_wrong_arity_is_malformed_response():
    cfg = subprocess_cfg("badarity")
    handle = backend.start_backend(cfg)
    try:
        with pytest.raises(backend.MalformedResponse, match="expected 1 output"):
            backend.infer(handle, ["x"], text_spec(cfg))
    finally:
        backend.shutdown(handle)


# -- type rules and validation ----------------------------------------------------------


def test_type_mismatch_is_malformed_response():
    spec = InterfaceSpec(
        title="t",
        inputs=(ComponentSpec(kind="text_in"),),
        outputs=(ComponentSpec(kind="label_out", top_k=3),),
        backend=ECHO,
    )
    handle = backend.start_backend(ECHO)
    with pytest.raises(backend.MalformedResponse, match="expected label map"):
        backend.infer(handle, ["plain text"], spec)
    backend.shutdown(handle)


def test_validate_echo_text_passes():
    handle = backend.start_backend(ECHO)
    report = backend.validate_backend(handle, text_spec(ECHO))
    assert report.ok
    backend.shutdown(handle)


def test_validate_echo_image_label_names_mismatch():
    spec = InterfaceSpec(
        title="t",
        inputs=(ComponentSpec(kind="image_in"),),
        outputs=(ComponentSpec(kind="label_out", top_k=3),),
        backend=ECHO,
    )
    handle = backend.start_backend(ECHO)
    report = backend.validate_backend(handle, spec)
    assert [str(f) for f in report.findings] == [
        "output 0: expected label map, got data URL"
    ]
    backend.shutdown(handle)


def test_validate_wrong_arity_finding():
    cfg = subprocess_cfg("badarity")
    handle = backend.start_backend(cfg)
    try:
        report = backend.validate_backend(handle, text_spec(cfg))
        assert len(report.findings) == 1
        assert report.findings[0].rule == "arity"
        assert "expected 1" in report.findings[0].message
        assert "got 2" in report.findings[0].message
    finally:
        backend.shutdown(handle)


def test_validate_matches_infer_type_rules():
    # Completeness/soundness: validate_backend is clean exactly when infer
    # accepts the same synthetic samples.
    specs = [
        text_spec(ECHO),
        InterfaceSpec(
            title="t",
            inputs=(ComponentSpec(kind="image_in"),),
            outputs=(ComponentSpec(kind="image_out"),),
            backend=ECHO,
        ),
        InterfaceSpec(
            title="t",
            inputs=(ComponentSpec(kind="audio_in", sample_rate=16000),),
            outputs=(ComponentSpec(kind="label_out", top_k=1),),
            backend=ECHO,
        ),
    ]
    for spec in specs:
        handle = backend.start_backend(ECHO)
        report = backend.validate_backend(handle, spec)
        samples = [backend.synthetic_sample(c) for c in spec.inputs]
        try:
            backend.infer(handle, samples, spec)
            inferred_ok = True
        except backend.MalformedResponse:
            inferred_ok = False
        assert report.ok == inferred_ok
        backend.shutdown(handle)


def test_synthetic_samples_are_fixed():
    image = backend.synthetic_sample(ComponentSpec(kind="image_in"))
    assert image == backend.synthetic_sample(ComponentSpec(kind="image_in"))
    payload = media.decode_payload(image, "image")
    assert (payload.width, payload.height) == (8, 8)
    assert tuple(payload.pixels()[0, 0]) == (128, 128, 128)

    assert backend.synthetic_sample(ComponentSpec(kind="text_in")) == "sample"

    audio = backend.synthetic_sample(ComponentSpec(kind="audio_in", sample_rate=16000))
    clip = media.decode_payload(audio, "audio")
    assert clip.sample_rate == 16000
    assert clip.sample_count == 1600  # 0.1 s
    assert not clip.samples().any()


# -- http mode ----------------------------------------------------------------


class _EchoHttp(http.server.BaseHTTPRequestHandler):
    def do_GET(self):
        self.send_response(200)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        doc = json.loads(body)
        out = json.dumps({"data": doc["data"]}).encode() + b"\n"
        self.send_response(200)
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *a):
        pass


@pytest.fixture
def http_echo():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _EchoHttp)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/predict"
    server.shutdown()
    server.server_close()


def test_http_backend_round_trip(http_echo):
    cfg = BackendConfig(mode="http", endpoint=http_echo, timeout_ms=5000)
    handle = backend.start_backend(cfg)
    exchange = backend.infer(handle, ["hello"], text_spec(cfg))
    assert list(exchange.outputs) == ["hello"]
    backend.shutdown(handle)


def test_http_probe_failure():
    cfg = BackendConfig(mode="http", endpoint="http://127.0.0.1:9/", timeout_ms=500)
    with pytest.raises(backend.ProbeFailed):
        backend.start_backend(cfg, ready_timeout=1.0)
