"""Session event records: the append-only substrate everything learns from.

One session produces one JSONL file with exactly these fields per line:
``ts_ms, session_id, client_id, actor, kind, payload``.  A sidecar
``<session_id>.meta.json`` carries session-level facts (operating mode, seed,
schema hash) that the event schema itself does not record.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import CorruptLogError, UnorderedLogError
from .ioutil import read_json, read_jsonl, write_json

ACTORS = ("client", "operator", "agent")
KINDS = ("message", "tag", "advice", "advice_accepted", "resource_use", "session_end")


class Mode(str, enum.Enum):
    """Operating phases: collect only, advise while collecting, advise only."""

    COLLECT = "collect"
    ADVISE_AND_COLLECT = "advise_and_collect"
    ADVISE_ONLY = "advise_only"

    @property
    def advises(self) -> bool:
        return self is not Mode.COLLECT

    @property
    def collects(self) -> bool:
        return self is not Mode.ADVISE_ONLY


@dataclass(frozen=True)
class Event:
    ts_ms: int
    session_id: str
    client_id: str
    actor: str
    kind: str
    payload: dict

    def __post_init__(self) -> None:
        if self.actor not in ACTORS:
            raise ValueError(f"unknown actor {self.actor!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.ts_ms < 0:
            raise ValueError("ts_ms must be non-negative")

    def to_record(self) -> dict:
        return {
            "ts_ms": self.ts_ms,
            "session_id": self.session_id,
            "client_id": self.client_id,
            "actor": self.actor,
            "kind": self.kind,
            "payload": self.payload,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False)

    @classmethod
    def from_record(cls, record: Mapping) -> "Event":
        try:
            return cls(
                ts_ms=int(record["ts_ms"]),
                session_id=str(record["session_id"]),
                client_id=str(record["client_id"]),
                actor=str(record["actor"]),
                kind=str(record["kind"]),
                payload=dict(record["payload"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptLogError(f"bad event record: {exc}") from exc


@dataclass(frozen=True)
class SessionMeta:
    session_id: str
    mode: Mode
    operator_id: str
    client_ids: tuple[str, ...]
    seed: int = 0
    schema_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "mode": self.mode.value,
            "operator_id": self.operator_id,
            "client_ids": list(self.client_ids),
            "seed": self.seed,
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SessionMeta":
        return cls(
            session_id=payload["session_id"],
            mode=Mode(payload["mode"]),
            operator_id=payload["operator_id"],
            client_ids=tuple(payload["client_ids"]),
            seed=int(payload.get("seed", 0)),
            schema_hash=payload.get("schema_hash"),
        )


@dataclass
class SessionLog:
    """An ordered event stream for one session, with optional sidecar meta."""

    session_id: str
    events: list[Event] = field(default_factory=list)
    meta: SessionMeta | None = None

    def validate_order(self) -> None:
        last = -1
        for event in self.events:
            if event.ts_ms < last:
                raise UnorderedLogError(
                    f"event at ts {event.ts_ms} after ts {last} in {self.session_id}"
                )
            last = event.ts_ms

    @property
    def client_ids(self) -> tuple[str, ...]:
        if self.meta is not None:
            return self.meta.client_ids
        seen: dict[str, None] = {}
        for event in self.events:
            seen.setdefault(event.client_id)
        return tuple(seen)

    def for_client(self, client_id: str) -> list[Event]:
        return [e for e in self.events if e.client_id == client_id]


def log_path(directory: str | Path, session_id: str) -> Path:
    return Path(directory) / f"{session_id}.jsonl"


def meta_path(directory: str | Path, session_id: str) -> Path:
    return Path(directory) / f"{session_id}.meta.json"


def write_session_log(log: SessionLog, directory: str | Path) -> Path:
    path = log_path(directory, log.session_id)
    with open(path, "w", encoding="utf-8") as handle:
        for event in log.events:
            handle.write(event.to_json_line() + "\n")
    if log.meta is not None:
        write_json(meta_path(directory, log.session_id), log.meta.to_dict())
    return path


def load_session_log(path: str | Path, tolerate_truncation: bool = True) -> SessionLog:
    """Read one session file; the sidecar meta file is picked up when present.

    A truncated final line (writer killed mid-append) is dropped so a crashed
    session stays replayable.
    """
    path = Path(path)
    events = [
        Event.from_record(record)
        for record in read_jsonl(path, skip_partial_tail=tolerate_truncation)
    ]
    session_id = events[0].session_id if events else path.stem
    meta = None
    sidecar = path.with_name(f"{session_id}.meta.json")
    if sidecar.exists():
        meta = SessionMeta.from_dict(read_json(sidecar))
    return SessionLog(session_id=session_id, events=events, meta=meta)


def scan_log_directory(
    directory: str | Path,
) -> tuple[list[SessionLog], list[tuple[str, str]]]:
    """Load every ``*.jsonl`` session file; unparseable files are reported, not fatal.

    Returns ``(logs, skipped)`` where each skipped entry is ``(filename, reason)``.
    """
    logs: list[SessionLog] = []
    skipped: list[tuple[str, str]] = []
    for path in sorted(Path(directory).glob("*.jsonl")):
        try:
            log = load_session_log(path)
            log.validate_order()
        except (CorruptLogError, UnorderedLogError, json.JSONDecodeError, OSError) as exc:
            skipped.append((path.name, str(exc)))
            continue
        logs.append(log)
    return logs, skipped
