"""Declarative interface configuration: parse, validate, render.

A demo is described by a YAML document (UTF-8 key/value tree) naming the
input and output components, the inference backend, optional example
rows, and where flagged samples are stored.  See the README for the full
document schema.  Parsed specs are immutable and safe to share across
request handlers.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import media

INPUT_KINDS = ("image_in", "text_in", "audio_in")
OUTPUT_KINDS = ("label_out", "text_out", "image_out")
COMPONENT_KINDS = INPUT_KINDS + OUTPUT_KINDS

DEFAULT_TOP_K = 3
DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FLAG_DIR = "./flagged"
DEFAULT_TIMEOUT_MS = 30000
DEFAULT_HTTP_CONCURRENCY = 8
SAMPLE_RATE_MIN = 8000
SAMPLE_RATE_MAX = 48000

BACKEND_MODES = ("subprocess", "http", "builtin_echo")

# Example media may be given as file paths; they are inlined at parse time.
_EXAMPLE_MEDIA_EXT = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".wav": "audio/wav",
}


class ParseError(Exception):
    """The document is not well-formed YAML (message carries line/column)."""


class SchemaError(Exception):
    """The document is well-formed but violates the configuration schema."""


@dataclass(frozen=True)
class ComponentSpec:
    """One typed input or output widget.

    Kind-specific parameters are ``None`` for kinds they do not apply to:
    ``target_width``/``target_height`` (image_in), ``sample_rate``
    (audio_in), ``top_k`` (label_out).
    """

    kind: str
    label: str | None = None
    target_width: int | None = None
    target_height: int | None = None
    sample_rate: int | None = None
    top_k: int | None = None


@dataclass(frozen=True)
class BackendConfig:
    """How to reach the wrapped model: subprocess, http, or builtin_echo."""

    mode: str
    command: tuple[str, ...] = ()
    workdir: str | None = None
    replicas: int = 1
    endpoint: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_concurrency: int = DEFAULT_HTTP_CONCURRENCY
    preprocess: tuple[str, ...] = ()
    postprocess: tuple[str, ...] = ()


@dataclass(frozen=True)
class InterfaceSpec:
    """A parsed demo description; immutable after parse."""

    title: str
    inputs: tuple[ComponentSpec, ...]
    outputs: tuple[ComponentSpec, ...]
    backend: BackendConfig
    description: str | None = None
    examples: tuple[tuple[str, ...], ...] = ()
    flag_dir: str = DEFAULT_FLAG_DIR


@dataclass(frozen=True)
class Finding:
    """One validation problem: the offending field and the rule it breaks."""

    field: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self) -> str:
        return "\n".join(str(f) for f in self.findings) if self.findings else "ok"


def _require_mapping(node, where: str) -> dict:
    if not isinstance(node, dict):
        raise SchemaError(f"{where}: expected a mapping, got {type(node).__name__}")
    return node


def _take_str(node: dict, key: str, where: str, *, required: bool = False) -> str | None:
    value = node.pop(key, None)
    if value is None:
        if required:
            raise SchemaError(f"{where}: missing required key {key!r}")
        return None
    if not isinstance(value, str):
        raise SchemaError(f"{where}.{key}: expected a string")
    return value


def _take_int(node: dict, key: str, where: str) -> int | None:
    value = node.pop(key, None)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}.{key}: expected an integer")
    return value


def _reject_unknown(node: dict, where: str) -> None:
    if node:
        raise SchemaError(f"{where}: unknown key(s) {sorted(node)}")


def _parse_component(node, where: str) -> ComponentSpec:
    node = dict(_require_mapping(node, where))
    kind = _take_str(node, "kind", where, required=True)
    if kind not in COMPONENT_KINDS:
        raise SchemaError(f"{where}.kind: unknown component kind {kind!r}")
    label = _take_str(node, "label", where)

    target_width = target_height = sample_rate = top_k = None
    if kind == "image_in":
        target_width = _take_int(node, "target_width", where)
        target_height = _take_int(node, "target_height", where)
        if (target_width is None) != (target_height is None):
            raise SchemaError(f"{where}: target_width and target_height must be set together")
        for name, value in (("target_width", target_width), ("target_height", target_height)):
            if value is not None and value < 1:
                raise SchemaError(f"{where}.{name}: must be >= 1")
    elif kind == "audio_in":
        sample_rate = _take_int(node, "sample_rate", where)
        if sample_rate is None:
            sample_rate = DEFAULT_SAMPLE_RATE
        if not SAMPLE_RATE_MIN <= sample_rate <= SAMPLE_RATE_MAX:
            raise SchemaError(
                f"{where}.sample_rate: must be in [{SAMPLE_RATE_MIN}, {SAMPLE_RATE_MAX}]"
            )
    elif kind == "label_out":
        top_k = _take_int(node, "top_k", where)
        if top_k is None:
            top_k = DEFAULT_TOP_K
        if top_k < 1:
            raise SchemaError(f"{where}.top_k: must be >= 1")

    _reject_unknown(node, where)
    return ComponentSpec(
        kind=kind,
        label=label,
        target_width=target_width,
        target_height=target_height,
        sample_rate=sample_rate,
        top_k=top_k,
    )


def _parse_steps(node: dict, key: str, where: str) -> tuple[str, ...]:
    raw = node.pop(key, None)
    if raw is None:
        return ()
    if not isinstance(raw, list) or not all(isinstance(s, str) for s in raw):
        raise SchemaError(f"{where}.{key}: expected a list of step names")
    for name in raw:
        if name not in media.PIPELINE_STEPS:
            known = ", ".join(sorted(media.PIPELINE_STEPS))
            raise SchemaError(f"{where}.{key}: unknown step {name!r} (known: {known})")
    return tuple(raw)


def _parse_backend(node, where: str, base_dir: Path) -> BackendConfig:
    node = dict(_require_mapping(node, where))
    mode = _take_str(node, "mode", where, required=True)
    if mode not in BACKEND_MODES:
        raise SchemaError(f"{where}.mode: unknown backend mode {mode!r}")

    preprocess = _parse_steps(node, "preprocess", where)
    postprocess = _parse_steps(node, "postprocess", where)

    command: tuple[str, ...] = ()
    workdir = endpoint = None
    replicas = 1
    timeout_ms = DEFAULT_TIMEOUT_MS
    max_concurrency = DEFAULT_HTTP_CONCURRENCY

    def _take_default(key: str, default: int) -> int:
        value = _take_int(node, key, where)
        return default if value is None else value

    if mode == "subprocess":
        raw_command = node.pop("command", None)
        if (
            not isinstance(raw_command, list)
            or not raw_command
            or not all(isinstance(a, str) for a in raw_command)
        ):
            raise SchemaError(f"{where}.command: expected a non-empty list of strings")
        command = tuple(raw_command)
        workdir = _take_str(node, "workdir", where)
        if workdir is not None and not Path(workdir).is_absolute():
            # Relative paths in the document resolve against the config file.
            workdir = str(base_dir / workdir)
        replicas = _take_default("replicas", 1)
        if replicas < 1:
            raise SchemaError(f"{where}.replicas: must be >= 1")
        timeout_ms = _take_default("timeout_ms", DEFAULT_TIMEOUT_MS)
    elif mode == "http":
        endpoint = _take_str(node, "endpoint", where, required=True)
        if not endpoint.startswith(("http://", "https://")):
            raise SchemaError(f"{where}.endpoint: expected an http(s) URL")
        timeout_ms = _take_default("timeout_ms", DEFAULT_TIMEOUT_MS)
        max_concurrency = _take_default("max_concurrency", DEFAULT_HTTP_CONCURRENCY)
        if max_concurrency < 1:
            raise SchemaError(f"{where}.max_concurrency: must be >= 1")

    if timeout_ms <= 0:
        raise SchemaError(f"{where}.timeout_ms: must be > 0")
    _reject_unknown(node, where)
    return BackendConfig(
        mode=mode,
        command=command,
        workdir=workdir,
        replicas=replicas,
        endpoint=endpoint,
        timeout_ms=timeout_ms,
        max_concurrency=max_concurrency,
        preprocess=preprocess,
        postprocess=postprocess,
    )


def _inline_example_value(value: str, component: ComponentSpec | None, base_dir: Path) -> str:
    """Turn a media file path into a data URL; leave everything else alone."""
    if component is None or component.kind not in ("image_in", "audio_in"):
        return value
    if value.startswith("data:"):
        return value
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    ext = path.suffix.lower()
    if ext not in _EXAMPLE_MEDIA_EXT:
        raise SchemaError(
            f"examples: {value!r} is neither a data URL nor a supported media file "
            f"({', '.join(sorted(_EXAMPLE_MEDIA_EXT))})"
        )
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SchemaError(f"examples: cannot read {value!r}: {exc}") from exc
    encoded = base64.b64encode(raw).decode("ascii")
    return f"data:{_EXAMPLE_MEDIA_EXT[ext]};base64,{encoded}"


def parse_interface_spec(document: str, *, base_dir: str | Path | None = None) -> InterfaceSpec:
    """Parse a YAML configuration document into an :class:`InterfaceSpec`.

    Defaults are applied here (top_k=3, sample_rate=16000,
    flag_dir="./flagged").  Example media given as file paths are resolved
    against ``base_dir`` (the config file's directory) and inlined as data
    URLs.  Raises :class:`ParseError` for malformed YAML and
    :class:`SchemaError` for schema violations; cross-field rules are left
    to :func:`validate_spec`.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        root = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed configuration document: {exc}") from exc

    root = dict(_require_mapping(root, "document"))
    title = _take_str(root, "title", "document", required=True)
    description = _take_str(root, "description", "document")
    flag_dir = _take_str(root, "flag_dir", "document") or DEFAULT_FLAG_DIR

    raw_inputs = root.pop("inputs", None)
    if not isinstance(raw_inputs, list) or not raw_inputs:
        raise SchemaError("inputs: at least one input component is required")
    inputs = tuple(
        _parse_component(c, f"inputs[{i}]") for i, c in enumerate(raw_inputs)
    )

    raw_outputs = root.pop("outputs", None)
    if not isinstance(raw_outputs, list) or not raw_outputs:
        raise SchemaError("outputs: at least one output component is required")
    outputs = tuple(
        _parse_component(c, f"outputs[{i}]") for i, c in enumerate(raw_outputs)
    )

    raw_backend = root.pop("backend", None)
    if raw_backend is None:
        raise SchemaError("document: missing required key 'backend'")
    backend = _parse_backend(raw_backend, "backend", base)

    raw_examples = root.pop("examples", None)
    examples: list[tuple[str, ...]] = []
    if raw_examples is not None:
        if not isinstance(raw_examples, list):
            raise SchemaError("examples: expected a list of rows")
        for r, row in enumerate(raw_examples):
            if not isinstance(row, list):
                raise SchemaError(f"examples[{r}]: expected a list of values")
            values = []
            for v, value in enumerate(row):
                if not isinstance(value, str):
                    raise SchemaError(f"examples[{r}][{v}]: expected a string")
                # Alignment with components is only defined when the arity
                # matches; mismatched rows are preserved for validate_spec.
                component = inputs[v] if len(row) == len(inputs) else None
                values.append(_inline_example_value(value, component, base))
            examples.append(tuple(values))

    _reject_unknown(root, "document")
    return InterfaceSpec(
        title=title,
        description=description,
        inputs=inputs,
        outputs=outputs,
        backend=backend,
        examples=tuple(examples),
        flag_dir=flag_dir,
    )


def _example_value_ok(value: str, component: ComponentSpec) -> bool:
    if component.kind == "text_in":
        return not value.startswith("data:")
    if not value.startswith("data:"):
        return False
    mime = value[5:].split(";", 1)[0]
    wanted = "image/" if component.kind == "image_in" else "audio/"
    return mime.lower().startswith(wanted)


def validate_spec(spec: InterfaceSpec) -> ValidationReport:
    """Check cross-field rules; per-field ranges are enforced at parse.

    Findings are data, not failures: a conforming spec yields an empty
    report.
    """
    findings: list[Finding] = []
    for i, component in enumerate(spec.inputs):
        if not component.kind.endswith("_in"):
            findings.append(
                Finding(
                    field=f"inputs[{i}]",
                    rule="placement",
                    message=f"kind {component.kind!r} is an output kind and may only appear in outputs",
                )
            )
    for i, component in enumerate(spec.outputs):
        if not component.kind.endswith("_out"):
            findings.append(
                Finding(
                    field=f"outputs[{i}]",
                    rule="placement",
                    message=f"kind {component.kind!r} is an input kind and may only appear in inputs",
                )
            )
    for r, row in enumerate(spec.examples):
        if len(row) != len(spec.inputs):
            n = len(spec.inputs)
            findings.append(
                Finding(
                    field=f"examples[{r}]",
                    rule="arity",
                    message=f"expected {n} value{'s' if n != 1 else ''}, got {len(row)}",
                )
            )
            continue
        for v, value in enumerate(row):
            component = spec.inputs[v]
            if not component.kind.endswith("_in"):
                continue  # placement finding already covers this column
            if not _example_value_ok(value, component):
                findings.append(
                    Finding(
                        field=f"examples[{r}][{v}]",
                        rule="type",
                        message=f"value is not compatible with {component.kind}",
                    )
                )
    return ValidationReport(findings=tuple(findings))


def _component_doc(component: ComponentSpec) -> dict:
    doc: dict = {"kind": component.kind, "label": component.label}
    if component.kind == "image_in" and component.target_width is not None:
        doc["target_width"] = component.target_width
        doc["target_height"] = component.target_height
    if component.kind == "audio_in":
        doc["sample_rate"] = component.sample_rate
    if component.kind == "label_out":
        doc["top_k"] = component.top_k
    return doc


def render_config(spec: InterfaceSpec, share_url: str | None = None) -> str:
    """Render the client-facing configuration document as JSON text.

    Output is deterministic: identical inputs yield byte-identical text.
    The ``share_url`` key is omitted entirely when no share link exists.
    """
    doc: dict = {
        "title": spec.title,
        "description": spec.description,
        "inputs": [_component_doc(c) for c in spec.inputs],
        "outputs": [_component_doc(c) for c in spec.outputs],
        "examples": [list(row) for row in spec.examples],
    }
    if share_url is not None:
        doc["share_url"] = share_url
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))


def serialize_spec(spec: InterfaceSpec) -> str:
    """Serialize a spec back to the YAML document format accepted by parse."""
    doc: dict = {"title": spec.title}
    if spec.description is not None:
        doc["description"] = spec.description
    doc["flag_dir"] = spec.flag_dir
    doc["inputs"] = [_component_yaml(c) for c in spec.inputs]
    doc["outputs"] = [_component_yaml(c) for c in spec.outputs]
    doc["backend"] = _backend_yaml(spec.backend)
    if spec.examples:
        doc["examples"] = [list(row) for row in spec.examples]
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


def _component_yaml(component: ComponentSpec) -> dict:
    doc: dict = {"kind": component.kind}
    if component.label is not None:
        doc["label"] = component.label
    for key in ("target_width", "target_height", "sample_rate", "top_k"):
        value = getattr(component, key)
        if value is not None:
            doc[key] = value
    return doc


def _backend_yaml(backend: BackendConfig) -> dict:
    doc: dict = {"mode": backend.mode}
    if backend.mode == "subprocess":
        doc["command"] = list(backend.command)
        if backend.workdir is not None:
            doc["workdir"] = backend.workdir
        doc["replicas"] = backend.replicas
        doc["timeout_ms"] = backend.timeout_ms
    elif backend.mode == "http":
        doc["endpoint"] = backend.endpoint
        doc["timeout_ms"] = backend.timeout_ms
        doc["max_concurrency"] = backend.max_concurrency
    if backend.preprocess:
        doc["preprocess"] = list(backend.preprocess)
    if backend.postprocess:
        doc["postprocess"] = list(backend.postprocess)
    return doc
