"""Append-only persistence of flagged samples.

Layout: ``<flag_dir>/index.jsonl`` holds one JSON record per line;
``<flag_dir>/media/`` holds the referenced media files, named
``<id>_<in|inedit|out><index>.<ext>``.  Text values are stored inline in
the index; media values are stored as files and referenced by relative
path.  Ids are zero-padded per-store counters, strictly increasing in
append order.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import media


class FlagStoreError(Exception):
    """Base class for flag persistence failures."""


class IoFailure(FlagStoreError):
    """The index line or a media file could not be written durably."""


class CorruptIndex(FlagStoreError):
    """A complete index line failed to parse.

    Carries the 1-based ``line_number`` and the ``records`` that parsed
    before it.
    """

    def __init__(self, message: str, line_number: int, records: list["FlagRecord"]):
        super().__init__(message)
        self.line_number = line_number
        self.records = records


@dataclass(frozen=True)
class FlagRecord:
    """One persisted flag: inputs, outputs, and the collaborator's message."""

    id: str
    timestamp: str
    inputs_original: tuple
    inputs_edited: tuple | None
    output: tuple
    message: str

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "timestamp": self.timestamp,
            "inputs_original": list(self.inputs_original),
            "inputs_edited": list(self.inputs_edited) if self.inputs_edited is not None else None,
            "output": list(self.output),
            "message": self.message,
        }
        return json.dumps(doc, ensure_ascii=False)

    @staticmethod
    def from_json(line: str) -> "FlagRecord":
        doc = json.loads(line)
        if not isinstance(doc, dict):
            raise ValueError("record line is not an object")
        edited = doc["inputs_edited"]
        return FlagRecord(
            id=doc["id"],
            timestamp=doc["timestamp"],
            inputs_original=tuple(doc["inputs_original"]),
            inputs_edited=tuple(edited) if edited is not None else None,
            output=tuple(doc["output"]),
            message=doc["message"],
        )


_EXT_BY_MIME = {
    "image/png": "png",
    "image/jpeg": "jpg",
    "audio/wav": "wav",
    "audio/x-wav": "wav",
}


class FlagStore:
    """Durable append-only store; appends are serialized by a single writer."""

    def __init__(self, flag_dir: str | Path):
        self.root = Path(flag_dir)
        self.media_dir = self.root / "media"
        self.media_dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.jsonl"
        self._lock = threading.Lock()
        self._repair_torn_tail()
        self._next_id = self._scan_last_id() + 1

    def _repair_torn_tail(self) -> None:
        """Drop a torn final line (no trailing newline) left by a crash."""
        if not self.index_path.exists():
            return
        raw = self.index_path.read_bytes()
        if not raw or raw.endswith(b"\n"):
            return
        keep = raw.rfind(b"\n") + 1
        with open(self.index_path, "r+b") as fh:
            fh.truncate(keep)
            fh.flush()
            os.fsync(fh.fileno())

    def _scan_last_id(self) -> int:
        last = 0
        if not self.index_path.exists():
            return last
        with open(self.index_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    last = max(last, int(json.loads(line)["id"]))
                except (ValueError, KeyError, TypeError):
                    continue  # corrupt lines are reported by list_flags
        return last

    def _store_value(self, value, flag_id: str, tag: str, index: int):
        """Store one value: media goes to a file, everything else inline."""
        if isinstance(value, str) and value.startswith("data:"):
            try:
                mime, raw = media.parse_data_url(value)
            except media.BadDataUrl:
                return value  # text that merely looks like a data URL
            ext = _EXT_BY_MIME.get(mime, "bin")
            name = f"{flag_id}_{tag}{index}.{ext}"
            path = self.media_dir / name
            try:
                with open(path, "wb") as fh:
                    fh.write(raw)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise IoFailure(f"cannot write media file {name}: {exc}") from exc
            return {"file": f"media/{name}"}
        return value

    def append_flag(
        self,
        inputs_original: Sequence,
        output: Sequence,
        message: str,
        inputs_edited: Sequence | None = None,
        timestamp: str | None = None,
    ) -> str:
        """Persist one flag and return its id; fsyncs before returning."""
        with self._lock:
            flag_id = f"{self._next_id:06d}"
            stored_inputs = [
                self._store_value(v, flag_id, "in", i) for i, v in enumerate(inputs_original)
            ]
            stored_edited = None
            if inputs_edited is not None:
                stored_edited = [
                    self._store_value(v, flag_id, "inedit", i) if v is not None else None
                    for i, v in enumerate(inputs_edited)
                ]
            stored_output = [
                self._store_value(v, flag_id, "out", i) for i, v in enumerate(output)
            ]
            record = FlagRecord(
                id=flag_id,
                timestamp=timestamp or datetime.now(timezone.utc).isoformat(),
                inputs_original=tuple(stored_inputs),
                inputs_edited=tuple(stored_edited) if stored_edited is not None else None,
                output=tuple(stored_output),
                message=message,
            )
            line = record.to_json() + "\n"
            try:
                # One write call plus fsync: a crash leaves either no line
                # or the whole line (desk-scale atomic append).
                with open(self.index_path, "ab") as fh:
                    fh.write(line.encode("utf-8"))
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise IoFailure(f"cannot append index line: {exc}") from exc
            self._next_id += 1
            return flag_id

    def list_flags(self, since: str | None = None) -> list[FlagRecord]:
        """Return records with id > ``since`` (all records when absent).

        Raises :class:`CorruptIndex` on the first unparseable complete
        line; the exception carries everything parsed before it.
        """
        records: list[FlagRecord] = []
        if not self.index_path.exists():
            return records
        floor = int(since) if since is not None else 0
        raw = self.index_path.read_bytes()
        # A concurrent append may leave a partial tail; complete lines only.
        # Split strictly on \n: JSON strings may contain other Unicode line
        # separators that are not record boundaries.
        complete = raw[: raw.rfind(b"\n") + 1] if b"\n" in raw else b""
        for number, line in enumerate(complete.decode("utf-8").split("\n")[:-1], start=1):
            if not line.strip():
                continue
            try:
                record = FlagRecord.from_json(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptIndex(
                    f"index line {number} failed to parse: {exc}", number, records
                ) from exc
            if int(record.id) > floor:
                records.append(record)
        return records

    def media_path(self, ref: Mapping) -> Path:
        """Absolute path of a ``{"file": ...}`` reference from a record."""
        return self.root / ref["file"]
