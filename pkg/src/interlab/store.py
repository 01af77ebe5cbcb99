"""Append-only JSONL persistence for sessions, impressions, clicks, and traffic.

One JSON object per line, written with a trailing newline and flushed before
the append returns, so every complete line survives a crash. A line cut off
mid-write has no newline; loading skips exactly that case and nothing else.
Forwarding to an external sink is at-least-once: entries are delivered, then
a cursor record marks how far the log has been shipped.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx

from .model import ClickEvent, Impression, InterleavedEntry, InterleavedList, Session, TaskType, TeamLabel

logger = logging.getLogger(__name__)


class StoreError(Exception):
    pass


class FeedbackSink(Protocol):
    def deliver(self, key: str, record: dict) -> None: ...


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _impression_record(imp: Impression) -> dict:
    return {
        "kind": "impression",
        "id": imp.impression_id,
        "sid": imp.session_id,
        "request": imp.query_or_item,
        "task": imp.task.value,
        "page": imp.page,
        "rpp": imp.rpp,
        "ts": imp.ts,
        "exp": imp.interleaved.exp_system,
        "base": imp.interleaved.base_system,
        "entries": [[e.doc_id, e.team.value] for e in imp.interleaved.entries],
    }


def _impression_from_record(record: dict) -> Impression:
    return Impression(
        impression_id=record["id"],
        session_id=record["sid"],
        query_or_item=record["request"],
        task=TaskType(record["task"]),
        page=record["page"],
        rpp=record["rpp"],
        ts=record["ts"],
        interleaved=InterleavedList(
            entries=tuple(
                InterleavedEntry(doc_id=doc, team=TeamLabel(team)) for doc, team in record["entries"]
            ),
            exp_system=record["exp"],
            base_system=record["base"],
        ),
    )


@dataclass(frozen=True)
class StoreSnapshot:
    """Immutable view of a loaded log, the input to every metric."""

    impressions: dict[str, Impression]
    clicks: dict[str, tuple[ClickEvent, ...]]
    sessions: dict[str, Session]
    traffic: dict[str, int]
    last_seq: int
    forwarded_through: int

    @property
    def total_clicks(self) -> int:
        return sum(len(events) for events in self.clicks.values())


class _State:
    def __init__(self) -> None:
        self.records: list[dict] = []
        self.impressions: dict[str, Impression] = {}
        self.clicks: dict[str, list[ClickEvent]] = {}
        self.click_keys: dict[str, set[tuple[float, str, str]]] = {}
        # sid -> [site_user, start_ts, last_ts, [impression ids]]
        self.sessions: dict[str, list] = {}
        self.traffic: dict[str, int] = {}
        self.seq = 0
        self.forwarded_through = 0

    def absorb(self, record: dict) -> None:
        self.seq = max(self.seq, int(record.get("seq", 0)))
        kind = record.get("kind")
        if kind == "session":
            self.sessions[record["sid"]] = [record["site_user"], record["ts"], record["ts"], []]
        elif kind == "impression":
            imp = _impression_from_record(record)
            self.impressions[imp.impression_id] = imp
            self.click_keys.setdefault(imp.impression_id, set())
            session = self.sessions.get(imp.session_id)
            if session is not None:
                session[2] = max(session[2], imp.ts)
                session[3].append(imp.impression_id)
        elif kind == "feedback":
            impression_id = record["impression_id"]
            keys = self.click_keys.setdefault(impression_id, set())
            for doc, element, ts in record["clicks"]:
                key = (ts, doc, element)
                if key in keys:
                    continue
                keys.add(key)
                self.clicks.setdefault(impression_id, []).append(
                    ClickEvent(doc_id=doc, serp_element=element, ts=ts)
                )
        elif kind == "traffic":
            self.traffic[record["task"]] = self.traffic.get(record["task"], 0) + 1
            session = self.sessions.get(record["sid"])
            if session is not None:
                session[2] = max(session[2], record["ts"])
        elif kind == "forward_cursor":
            self.forwarded_through = max(self.forwarded_through, int(record["through"]))

    def snapshot(self) -> StoreSnapshot:
        return StoreSnapshot(
            impressions=dict(self.impressions),
            clicks={imp_id: tuple(events) for imp_id, events in self.clicks.items()},
            sessions={
                sid: Session(
                    session_id=sid,
                    site_user=user,
                    start_ts=start,
                    end_ts=last,
                    impression_ids=tuple(imp_ids),
                )
                for sid, (user, start, last, imp_ids) in self.sessions.items()
            },
            traffic=dict(self.traffic),
            last_seq=self.seq,
            forwarded_through=self.forwarded_through,
        )


def _read_records(path: str | Path) -> tuple[list[dict], bool]:
    """All complete records in file order; second value reports a truncated tail."""
    records: list[dict] = []
    truncated = False
    with open(path, "rb") as handle:
        raw = handle.read()
    lines = raw.split(b"\n")
    trailing = lines.pop()  # bytes after the final newline; empty when the log is clean
    if trailing.strip():
        truncated = True
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StoreError(f"{path}:{line_no}: corrupt log record ({exc})") from exc
        if not isinstance(record, dict) or "kind" not in record:
            raise StoreError(f"{path}:{line_no}: corrupt log record (not an object with 'kind')")
        records.append(record)
    return records, truncated


def load_snapshot(path: str | Path) -> StoreSnapshot:
    """Read a log without opening it for writing; a cut-off final line is skipped."""
    state = _State()
    records, truncated = _read_records(path)
    if truncated:
        logger.warning("%s: ignoring truncated final line", path)
    for record in records:
        state.absorb(record)
    return state.snapshot()


class FeedbackStore:
    """The gateway's durable click log; also replayable after a restart."""

    def __init__(self, path: str | Path, fsync: bool = False) -> None:
        self.path = Path(path)
        self._fsync = fsync
        self._lock = threading.RLock()
        self._state = _State()
        if self.path.exists():
            records, truncated = _read_records(self.path)
            if truncated:
                # Drop the partial tail so the next append starts on a fresh line.
                logger.warning("%s: truncating partial final line", self.path)
                with open(self.path, "r+b") as handle:
                    data = handle.read()
                    handle.seek(0)
                    handle.truncate(data.rfind(b"\n") + 1)
            for record in records:
                self._state.absorb(record)
                self._state.records.append(record)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "a", encoding="utf-8")

    def _append(self, record: dict) -> dict:
        self._state.seq += 1
        record["seq"] = self._state.seq
        self._handle.write(_dumps(record) + "\n")
        self._handle.flush()
        if self._fsync:
            os.fsync(self._handle.fileno())
        self._state.absorb(record)
        self._state.records.append(record)
        return record

    def append_session(self, session_id: str, site_user: str, ts: float) -> None:
        with self._lock:
            self._append({"kind": "session", "sid": session_id, "site_user": site_user, "ts": ts})

    def append_impression(self, impression: Impression) -> None:
        with self._lock:
            if impression.impression_id in self._state.impressions:
                raise StoreError(f"impression {impression.impression_id!r} already stored")
            self._append(_impression_record(impression))

    def append_feedback(
        self, impression_id: str, clicks: Sequence[ClickEvent]
    ) -> tuple[int, int]:
        """Store new clicks for a known impression; returns (stored, duplicates)."""
        with self._lock:
            if impression_id not in self._state.impressions:
                raise KeyError(impression_id)
            keys = self._state.click_keys[impression_id]
            fresh = []
            seen_now: set[tuple[float, str, str]] = set()
            for click in clicks:
                key = (click.ts, click.doc_id, click.serp_element)
                if key in keys or key in seen_now:
                    continue
                seen_now.add(key)
                fresh.append(click)
            if fresh:
                self._append(
                    {
                        "kind": "feedback",
                        "impression_id": impression_id,
                        "clicks": [[c.doc_id, c.serp_element, c.ts] for c in fresh],
                    }
                )
            return len(fresh), len(clicks) - len(fresh)

    def append_traffic(self, session_id: str, task: TaskType, request: str, ts: float) -> None:
        with self._lock:
            self._append(
                {"kind": "traffic", "sid": session_id, "task": task.value, "request": request, "ts": ts}
            )

    def has_impression(self, impression_id: str) -> bool:
        with self._lock:
            return impression_id in self._state.impressions

    def get_impression(self, impression_id: str) -> Impression | None:
        with self._lock:
            return self._state.impressions.get(impression_id)

    def impression_ids(self) -> list[str]:
        with self._lock:
            return list(self._state.impressions)

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            return self._state.snapshot()

    def flush(self, sink: FeedbackSink) -> int:
        """Forward unshipped entries, then record the new cursor.

        Delivery happens before the cursor is written, so a sink failure
        leaves the cursor untouched and the next flush retries everything;
        sinks deduplicate by key, keeping the result exactly-once downstream.
        """
        with self._lock:
            pending = [
                record
                for record in self._state.records
                if record["seq"] > self._state.forwarded_through
                and record["kind"] != "forward_cursor"
            ]
            if not pending:
                return 0
            for record in pending:
                sink.deliver(f"{record['kind']}-{record['seq']:08d}", record)
            through = max(record["seq"] for record in pending)
            self._append({"kind": "forward_cursor", "through": through})
            return len(pending)

    def close(self) -> None:
        with self._lock:
            self._handle.close()


def flush_feedback(store: FeedbackStore, sink: FeedbackSink) -> int:
    return store.flush(sink)


class DirectorySink:
    """Writes each forwarded record to ``root/<key>.json``; repeat keys are no-ops."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def deliver(self, key: str, record: dict) -> None:
        target = self.root / f"{key}.json"
        if target.exists():
            return
        tmp = target.with_suffix(".tmp")
        tmp.write_text(_dumps(record) + "\n", encoding="utf-8")
        tmp.rename(target)

    def keys(self) -> set[str]:
        return {p.stem for p in self.root.glob("*.json")}


class HttpSink:
    """PUTs each record to ``<endpoint>/<key>``; any non-2xx response raises."""

    def __init__(self, endpoint: str, client: httpx.Client | None = None, timeout: float = 5.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def deliver(self, key: str, record: dict) -> None:
        response = self._client.put(f"{self.endpoint}/{key}", json=record)
        response.raise_for_status()
