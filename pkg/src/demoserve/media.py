"""Decode media payloads, apply user edits, and run processing steps.

Everything here is a pure function of its inputs, so all operations are
safe to call from concurrent request handlers.  Images travel as PNG or
JPEG data URLs and are held internally as uint8 pixel buffers; audio
travels as 16-bit PCM WAV data URLs.  Edit semantics are exact and
integer-based so they can be checked against brute-force oracles.
"""

from __future__ import annotations

import base64
import io
import math
import re
import wave
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import numpy as np
from PIL import Image

if TYPE_CHECKING:
    from .schema import ComponentSpec


class MediaError(Exception):
    """Base class for media decoding and processing failures."""


class BadDataUrl(MediaError):
    """The data URL prefix or structure is wrong."""


class BadMedia(MediaError):
    """The declared mime type could not be decoded."""


class KindMismatch(MediaError):
    """The decoded media kind differs from the expected kind."""


class BadEdit(MediaError):
    """An edit operation object is malformed."""


class EditOutOfBounds(MediaError):
    """An edit does not fit the image it applies to."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class BadRange(MediaError):
    """An audio trim range is empty or outside the clip."""


class EmptyScores(MediaError):
    """A label map with no entries cannot be post-processed."""


class BadScores(MediaError):
    """A label map contains a non-finite score."""


_DATA_URL_RE = re.compile(r"^data:([\w.+-]+/[\w.+-]+);base64,(.*)$", re.DOTALL)


@dataclass(frozen=True)
class MediaPayload:
    """One decoded input value.

    ``data`` holds the decoded buffer: row-major ``height x width x
    channels`` uint8 pixels for images, interleaved little-endian int16
    frames for audio, UTF-8 bytes for text.  ``mime`` records the source
    container.
    """

    kind: str  # image | audio | text
    data: bytes
    mime: str
    width: int = 0
    height: int = 0
    channels: int = 0
    sample_rate: int = 0
    sample_count: int = 0

    def pixels(self) -> np.ndarray:
        """Pixel buffer as an ``(h, w, c)`` uint8 array (read-only view)."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )

    def samples(self) -> np.ndarray:
        """Audio as an ``(frames, channels)`` int16 array (read-only view)."""
        return np.frombuffer(self.data, dtype="<i2").reshape(
            self.sample_count, self.channels
        )

    def text(self) -> str:
        return self.data.decode("utf-8")


def from_pixels(pixels: np.ndarray, mime: str = "image/png") -> MediaPayload:
    """Build an image payload from an ``(h, w, c)`` or ``(h, w)`` uint8 array."""
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    if pixels.dtype != np.uint8:
        raise ValueError("pixel buffer must be uint8")
    h, w, c = pixels.shape
    if c not in (1, 3, 4):
        raise ValueError(f"unsupported channel count {c}")
    return MediaPayload(
        kind="image",
        data=np.ascontiguousarray(pixels).tobytes(),
        mime=mime,
        width=w,
        height=h,
        channels=c,
    )


def from_samples(samples: np.ndarray, sample_rate: int) -> MediaPayload:
    """Build an audio payload from an ``(frames, channels)`` int16 array."""
    if samples.ndim == 1:
        samples = samples[:, np.newaxis]
    if samples.dtype != np.int16:
        raise ValueError("sample buffer must be int16")
    frames, channels = samples.shape
    return MediaPayload(
        kind="audio",
        data=np.ascontiguousarray(samples).tobytes(),
        mime="audio/wav",
        channels=channels,
        sample_rate=sample_rate,
        sample_count=frames,
    )


def from_text(text: str) -> MediaPayload:
    return MediaPayload(kind="text", data=text.encode("utf-8"), mime="text/plain")


def parse_data_url(data_url: str) -> tuple[str, bytes]:
    """Split a ``data:<mime>;base64,<payload>`` URL into (mime, raw bytes)."""
    if not isinstance(data_url, str):
        raise BadDataUrl("data URL must be text")
    match = _DATA_URL_RE.match(data_url)
    if match is None:
        raise BadDataUrl("expected the form data:<mime>;base64,<payload>")
    mime = match.group(1).lower()
    try:
        raw = base64.b64decode(match.group(2), validate=True)
    except (ValueError, base64.binascii.Error) as exc:  # type: ignore[attr-defined]
        raise BadDataUrl(f"invalid base64 payload: {exc}") from exc
    return mime, raw


def make_data_url(mime: str, raw: bytes) -> str:
    return f"data:{mime};base64,{base64.b64encode(raw).decode('ascii')}"


def _mime_kind(mime: str) -> str:
    if mime.startswith("image/"):
        return "image"
    if mime.startswith("audio/"):
        return "audio"
    return "text"


def _decode_image(raw: bytes, mime: str) -> MediaPayload:
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise BadMedia(f"cannot decode {mime}: {exc}") from exc
    fmt = (img.format or "").upper()
    if fmt not in ("PNG", "JPEG"):
        raise BadMedia(f"unsupported image container {fmt or 'unknown'}; PNG and JPEG only")
    expected_fmt = {"image/png": "PNG", "image/jpeg": "JPEG"}.get(mime)
    if expected_fmt is not None and fmt != expected_fmt:
        raise BadMedia(f"declared {mime} but payload is {fmt}")

    if img.mode not in ("L", "RGB", "RGBA"):
        has_alpha = img.mode in ("LA", "PA") or (
            img.mode == "P" and "transparency" in img.info
        )
        img = img.convert("RGBA" if has_alpha else "RGB")
    pixels = np.asarray(img, dtype=np.uint8)
    return from_pixels(pixels, mime=mime)


def _decode_audio(raw: bytes, mime: str) -> MediaPayload:
    try:
        with wave.open(io.BytesIO(raw), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise BadMedia("compressed WAV is not supported")
            if wav.getsampwidth() != 2:
                raise BadMedia("only 16-bit PCM WAV is supported")
            channels = wav.getnchannels()
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
    except BadMedia:
        raise
    except Exception as exc:
        raise BadMedia(f"cannot decode {mime}: {exc}") from exc
    samples = np.frombuffer(frames, dtype="<i2")
    if channels < 1 or len(samples) % channels:
        raise BadMedia("WAV frame count does not divide evenly by channel count")
    return from_samples(samples.reshape(-1, channels), rate)


def decode_payload(data_url: str, expected_kind: str) -> MediaPayload:
    """Decode a data URL into a :class:`MediaPayload` of the expected kind.

    Raises :class:`BadDataUrl` for structural problems,
    :class:`KindMismatch` when the declared mime class is not
    ``expected_kind``, and :class:`BadMedia` when the payload cannot be
    decoded as its declared mime.
    """
    mime, raw = parse_data_url(data_url)
    kind = _mime_kind(mime)
    if kind != expected_kind:
        raise KindMismatch(f"expected {expected_kind}, got {kind} ({mime})")
    if kind == "image":
        return _decode_image(raw, mime)
    if kind == "audio":
        return _decode_audio(raw, mime)
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadMedia(f"text payload is not valid UTF-8: {exc}") from exc
    return MediaPayload(kind="text", data=raw, mime=mime)


def encode_payload(payload: MediaPayload) -> str:
    """Re-encode a payload as a lossless data URL (PNG, WAV, or text)."""
    if payload.kind == "image":
        modes = {1: "L", 3: "RGB", 4: "RGBA"}
        arr = payload.pixels()
        img = Image.fromarray(arr if payload.channels > 1 else arr[:, :, 0], modes[payload.channels])
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return make_data_url("image/png", buf.getvalue())
    if payload.kind == "audio":
        buf = io.BytesIO()
        with wave.open(buf, "wb") as wav:
            wav.setnchannels(payload.channels)
            wav.setsampwidth(2)
            wav.setframerate(payload.sample_rate)
            wav.writeframes(payload.data)
        return make_data_url("audio/wav", buf.getvalue())
    return make_data_url(payload.mime, payload.data)


# ---------------------------------------------------------------------------
# Edit operations


@dataclass(frozen=True)
class EditOp:
    """A declarative input manipulation: crop, stroke occlusion, or flip.

    Edits apply in list order; a crop changes the coordinate frame for
    every edit after it.
    """

    op: str  # crop | stroke | flip
    x: int = 0
    y: int = 0
    w: int = 0
    h: int = 0
    color: tuple[int, int, int] = (0, 0, 0)
    radius: int = 1
    points: tuple[tuple[int, int], ...] = ()
    axis: str = "vertical"

    @staticmethod
    def crop(x: int, y: int, w: int, h: int) -> "EditOp":
        if w < 1 or h < 1:
            raise BadEdit("crop width and height must be >= 1")
        return EditOp(op="crop", x=x, y=y, w=w, h=h)

    @staticmethod
    def stroke(
        color: Sequence[int], radius: int, points: Sequence[Sequence[int]]
    ) -> "EditOp":
        if len(color) != 3 or not all(isinstance(c, int) and 0 <= c <= 255 for c in color):
            raise BadEdit("stroke color must be three bytes")
        if not isinstance(radius, int) or radius < 1:
            raise BadEdit("stroke radius must be an integer >= 1")
        if not points:
            raise BadEdit("stroke needs at least one point")
        return EditOp(
            op="stroke",
            color=tuple(color),
            radius=radius,
            points=tuple((int(p[0]), int(p[1])) for p in points),
        )

    @staticmethod
    def flip() -> "EditOp":
        return EditOp(op="flip", axis="vertical")


def parse_edit(obj: Mapping) -> EditOp:
    """Parse one wire-format edit object; raises :class:`BadEdit`."""
    if not isinstance(obj, Mapping):
        raise BadEdit("edit must be an object")
    op = obj.get("op")
    try:
        if op == "crop":
            return EditOp.crop(*(_edit_int(obj, k) for k in ("x", "y", "w", "h")))
        if op == "stroke":
            points = obj.get("points")
            if not isinstance(points, Sequence) or isinstance(points, (str, bytes)):
                raise BadEdit("stroke points must be a list of [x, y] pairs")
            parsed = []
            for p in points:
                if not isinstance(p, Sequence) or len(p) != 2:
                    raise BadEdit("stroke points must be a list of [x, y] pairs")
                parsed.append((_round_coord(p[0]), _round_coord(p[1])))
            color = obj.get("color")
            if not isinstance(color, Sequence) or len(color) != 3:
                raise BadEdit("stroke color must be [r, g, b]")
            return EditOp.stroke([_edit_byte(c) for c in color], _edit_int(obj, "radius"), parsed)
        if op == "flip":
            if obj.get("axis") != "vertical":
                raise BadEdit("flip axis must be 'vertical'")
            return EditOp.flip()
    except BadEdit:
        raise
    except (TypeError, ValueError) as exc:
        raise BadEdit(f"malformed {op} edit: {exc}") from exc
    raise BadEdit(f"unknown edit op {op!r}")


def _edit_int(obj: Mapping, key: str) -> int:
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadEdit(f"edit field {key!r} must be a number")
    return _round_coord(value)


def _round_coord(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadEdit("coordinates must be numbers")
    return int(math.floor(float(value) + 0.5))


def _edit_byte(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadEdit("color channels must be numbers")
    b = int(value)
    if b != value or not 0 <= b <= 255:
        raise BadEdit("color channels must be integers in [0, 255]")
    return b


def _segment_mask(
    shape: tuple[int, int], a: tuple[int, int], b: tuple[int, int], radius: int
) -> np.ndarray:
    """Boolean mask of pixels within ``radius`` of segment a-b.

    The predicate is evaluated in exact integer arithmetic:
    for interior projections,  |ap|^2*|ab|^2 - (ap.ab)^2 <= r^2*|ab|^2.
    """
    h, w = shape
    x1, y1 = a
    x2, y2 = b
    x_lo = max(0, min(x1, x2) - radius)
    x_hi = min(w - 1, max(x1, x2) + radius)
    y_lo = max(0, min(y1, y2) - radius)
    y_hi = min(h - 1, max(y1, y2) + radius)
    mask = np.zeros((h, w), dtype=bool)
    if x_lo > x_hi or y_lo > y_hi:
        return mask

    ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    xs = xs.astype(np.int64)
    ys = ys.astype(np.int64)
    r2 = radius * radius

    abx, aby = x2 - x1, y2 - y1
    len2 = abx * abx + aby * aby
    apx, apy = xs - x1, ys - y1
    ap2 = apx * apx + apy * apy
    if len2 == 0:
        inside = ap2 <= r2
    else:
        t_num = apx * abx + apy * aby
        bpx, bpy = xs - x2, ys - y2
        bp2 = bpx * bpx + bpy * bpy
        inside = np.where(
            t_num <= 0,
            ap2 <= r2,
            np.where(t_num >= len2, bp2 <= r2, ap2 * len2 - t_num * t_num <= r2 * len2),
        )
    mask[y_lo : y_hi + 1, x_lo : x_hi + 1] = inside
    return mask


def _paint_stroke(arr: np.ndarray, edit: EditOp) -> np.ndarray:
    h, w = arr.shape[:2]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    mask = np.zeros((h, w), dtype=bool)
    points = list(edit.points)
    if len(points) == 1:
        points = points * 2
    for a, b in zip(points, points[1:]):
        mask |= _segment_mask((h, w), a, b, edit.radius)
    arr = arr.copy()
    arr[mask, 0] = edit.color[0]
    arr[mask, 1] = edit.color[1]
    arr[mask, 2] = edit.color[2]
    if arr.shape[2] == 4:
        arr[mask, 3] = 255  # paint is opaque
    return arr


def apply_edits(payload: MediaPayload, edits: Sequence[EditOp]) -> MediaPayload:
    """Apply edits in order to an image payload.

    Raises :class:`EditOutOfBounds` naming the offending edit index when a
    crop rectangle does not fit the image state it applies to.
    """
    if payload.kind != "image":
        raise MediaError("edits apply to images only")
    arr = payload.pixels()
    for index, edit in enumerate(edits):
        h, w = arr.shape[:2]
        if edit.op == "crop":
            if not (
                edit.w >= 1
                and edit.h >= 1
                and 0 <= edit.x
                and edit.x + edit.w <= w
                and 0 <= edit.y
                and edit.y + edit.h <= h
            ):
                raise EditOutOfBounds(
                    f"edit {index}: crop ({edit.x},{edit.y},{edit.w},{edit.h}) "
                    f"does not fit {w}x{h} image",
                    index,
                )
            arr = arr[edit.y : edit.y + edit.h, edit.x : edit.x + edit.w]
        elif edit.op == "flip":
            arr = arr[:, ::-1]
        elif edit.op == "stroke":
            arr = _paint_stroke(np.ascontiguousarray(arr), edit)
        else:
            raise BadEdit(f"unknown edit op {edit.op!r}")
    return from_pixels(np.ascontiguousarray(arr), mime=payload.mime)


# ---------------------------------------------------------------------------
# Component-level pre/post-processing


def _composite_over_white(arr: np.ndarray) -> np.ndarray:
    """RGBA -> RGB over a white background; integer round-half-up."""
    rgb = arr[:, :, :3].astype(np.uint32)
    alpha = arr[:, :, 3:4].astype(np.uint32)
    out = (rgb * alpha + 255 * (255 - alpha) + 127) // 255
    return out.astype(np.uint8)


def _to_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.shape[2] == 1:
        return np.repeat(arr, 3, axis=2)
    if arr.shape[2] == 4:
        return _composite_over_white(arr)
    return arr


def _resize_bilinear(arr: np.ndarray, tw: int, th: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; identity at equal size.

    Output sample (i, j) reads source position ((j+0.5)*w/tw - 0.5,
    (i+0.5)*h/th - 0.5) clamped to the image; values round half up.
    """
    h, w = arr.shape[:2]
    if (w, h) == (tw, th):
        return arr
    src_x = (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5
    src_y = (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5
    src_x = np.clip(src_x, 0.0, w - 1.0)
    src_y = np.clip(src_y, 0.0, h - 1.0)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (src_x - x0)[np.newaxis, :, np.newaxis]
    fy = (src_y - y0)[:, np.newaxis, np.newaxis]
    a = arr.astype(np.float64)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def preprocess_image(payload: MediaPayload, component: "ComponentSpec") -> str:
    """Normalize a decoded, edited image for the backend.

    Channels become 3 (alpha composited over white, gray replicated), the
    image is bilinearly resized to the component's target size when one is
    configured, and the result is re-encoded as a PNG data URL.
    """
    arr = _to_rgb(payload.pixels())
    if component.target_width is not None and component.target_height is not None:
        arr = _resize_bilinear(arr, component.target_width, component.target_height)
    return encode_payload(from_pixels(np.ascontiguousarray(arr)))


def trim_audio(payload: MediaPayload, start_s: float, end_s: float) -> MediaPayload:
    """Keep samples in [round(start*rate), round(end*rate)); round half up."""
    if payload.kind != "audio":
        raise MediaError("trim applies to audio only")
    duration = payload.sample_count / payload.sample_rate
    if not (0 <= start_s < end_s <= duration + 1e-9):
        raise BadRange(
            f"trim range [{start_s}, {end_s}) invalid for a {duration:.6g} s clip"
        )
    start = int(math.floor(start_s * payload.sample_rate + 0.5))
    end = min(int(math.floor(end_s * payload.sample_rate + 0.5)), payload.sample_count)
    if start >= end:
        raise BadRange("trim range contains no samples")
    return from_samples(payload.samples()[start:end].copy(), payload.sample_rate)


# ---------------------------------------------------------------------------
# Label post-processing


@dataclass(frozen=True)
class LabelResult:
    """Ranked label confidences: sorted by score descending, ties by label."""

    top_label: str
    confidences: tuple[tuple[str, float], ...]


def postprocess_label(scores: Mapping[str, float], top_k: int) -> LabelResult:
    """Clamp scores to [0, 1], rank them, and keep the top ``top_k``.

    Ties break by ascending lexicographic byte order of the label.  Scores
    are not renormalized; backends may emit unnormalized values.
    """
    if not scores:
        raise EmptyScores("label map has no entries")
    items = []
    for label, score in scores.items():
        value = float(score)
        if not math.isfinite(value):
            raise BadScores(f"score for {label!r} is not finite")
        items.append((str(label), min(1.0, max(0.0, value))))
    items.sort(key=lambda kv: (-kv[1], kv[0].encode("utf-8")))
    kept = tuple(items[:top_k])
    return LabelResult(top_label=kept[0][0], confidences=kept)


# ---------------------------------------------------------------------------
# Named pipeline steps

# Steps transform wire values and are type-dispatched: image steps act on
# image data URLs, text steps on plain strings, score steps on label maps;
# any other value passes through unchanged.


def _is_image_url(value) -> bool:
    return isinstance(value, str) and value.startswith("data:image/")


def _map_image(value: str, fn: Callable[[np.ndarray], np.ndarray]) -> str:
    payload = decode_payload(value, "image")
    return encode_payload(from_pixels(fn(payload.pixels())))


def _step_grayscale(value):
    if not _is_image_url(value):
        return value

    def gray(arr: np.ndarray) -> np.ndarray:
        if arr.shape[2] == 1:
            return arr
        rgb = arr[:, :, :3].astype(np.uint32)
        # BT.601 luma, integer rounding
        y = (299 * rgb[:, :, 0] + 587 * rgb[:, :, 1] + 114 * rgb[:, :, 2] + 500) // 1000
        out = arr.copy()
        out[:, :, 0] = out[:, :, 1] = out[:, :, 2] = y.astype(np.uint8)
        return out

    return _map_image(value, gray)


def _step_invert(value):
    if not _is_image_url(value):
        return value

    def invert(arr: np.ndarray) -> np.ndarray:
        out = arr.copy()
        out[:, :, :3] = 255 - out[:, :, :3]
        return out

    return _map_image(value, invert)


def _is_plain_text(value) -> bool:
    return isinstance(value, str) and not value.startswith("data:")


def _step_lowercase(value):
    return value.lower() if _is_plain_text(value) else value


def _step_uppercase(value):
    return value.upper() if _is_plain_text(value) else value


def _step_strip(value):
    return value.strip() if _is_plain_text(value) else value


def _step_softmax(value):
    if not isinstance(value, Mapping) or not value:
        return value
    try:
        raw = {str(k): float(v) for k, v in value.items()}
    except (TypeError, ValueError):
        return value
    peak = max(raw.values())
    exps = {k: math.exp(v - peak) for k, v in raw.items()}
    total = sum(exps.values())
    return {k: v / total for k, v in exps.items()}


PIPELINE_STEPS: dict[str, Callable] = {
    "grayscale": _step_grayscale,
    "invert": _step_invert,
    "lowercase": _step_lowercase,
    "uppercase": _step_uppercase,
    "strip": _step_strip,
    "softmax": _step_softmax,
}


def run_steps(step_names: Sequence[str], values: Sequence) -> list:
    """Apply named pipeline steps, in order, to every value."""
    out = list(values)
    for name in step_names:
        step = PIPELINE_STEPS[name]
        out = [step(v) for v in out]
    return out
