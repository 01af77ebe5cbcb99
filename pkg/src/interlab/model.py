"""Core domain types shared by every other module.

Everything here is a plain value object: frozen dataclasses with validation
in ``__post_init__`` so that a constructed instance is always well-formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class TaskType(str, Enum):
    RANKING = "ranking"
    RECOMMENDATION = "recommendation"


class SystemKind(str, Enum):
    PRECOMPUTED = "precomputed"
    LIVE_REMOTE = "live_remote"
    BUILTIN = "builtin"


class TeamLabel(str, Enum):
    EXP = "EXP"
    BASE = "BASE"


@dataclass(frozen=True)
class DocumentRecord:
    """One corpus document: an id plus named text fields.

    Field values are stored as tuples of strings regardless of whether the
    source serialized them as a scalar or a list.
    """

    doc_id: str
    fields: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        for name in self.fields:
            if not name:
                raise ValueError(f"document {self.doc_id!r}: empty field name")

    def text(self, field_names: tuple[str, ...] | list[str]) -> str:
        """Concatenate the values of the selected fields, skipping absent ones."""
        parts: list[str] = []
        for name in field_names:
            parts.extend(self.fields.get(name, ()))
        return " ".join(parts)


@dataclass(frozen=True)
class HeadQuery:
    """A popular query with its observed frequency."""

    qid: int
    qstr: str
    freq: int

    def __post_init__(self) -> None:
        if not isinstance(self.qid, int) or isinstance(self.qid, bool):
            raise ValueError("qid must be an integer")
        if not self.qstr or not self.qstr.strip():
            raise ValueError(f"query {self.qid}: empty query string")
        if not isinstance(self.freq, int) or isinstance(self.freq, bool) or self.freq < 0:
            raise ValueError(f"query {self.qid}: freq must be a non-negative integer")


@dataclass(frozen=True)
class ScoredCandidate:
    doc_id: str
    score: float | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("candidate doc_id must be non-empty")
        if self.score is not None and not math.isfinite(self.score):
            raise ValueError(f"candidate {self.doc_id!r}: score must be finite")


@dataclass(frozen=True)
class CandidateList:
    """Pre-computed candidates for one request key (query id or seed item id)."""

    key: str
    candidates: tuple[ScoredCandidate, ...]

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("candidate list key must be non-empty")
        seen: set[str] = set()
        for cand in self.candidates:
            if cand.doc_id in seen:
                raise ValueError(f"candidate list {self.key!r}: duplicate doc_id {cand.doc_id!r}")
            seen.add(cand.doc_id)

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(c.doc_id for c in self.candidates)


@dataclass(frozen=True)
class RankedResult:
    """One row of a ranked result list."""

    doc_id: str
    rank: int
    score: float

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("result doc_id must be non-empty")
        if self.rank < 1:
            raise ValueError(f"result {self.doc_id!r}: rank must be >= 1")
        if not math.isfinite(self.score):
            raise ValueError(f"result {self.doc_id!r}: score must be finite")


def validate_ranking(results: tuple[RankedResult, ...] | list[RankedResult]) -> None:
    """Check that a result list is contiguous from rank 1 with unique doc ids."""
    seen: set[str] = set()
    for i, res in enumerate(results):
        if res.rank != i + 1:
            raise ValueError(f"rank {res.rank} at position {i}: expected {i + 1}")
        if res.doc_id in seen:
            raise ValueError(f"duplicate doc_id {res.doc_id!r} in ranking")
        seen.add(res.doc_id)


@dataclass(frozen=True)
class InterleavedEntry:
    doc_id: str
    team: TeamLabel


@dataclass(frozen=True)
class InterleavedList:
    """The merged result page shown to a user, each entry credited to a team."""

    entries: tuple[InterleavedEntry, ...]
    exp_system: str
    base_system: str

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.doc_id in seen:
                raise ValueError(f"interleaved list repeats doc_id {entry.doc_id!r}")
            seen.add(entry.doc_id)

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(e.doc_id for e in self.entries)

    def team_of(self, doc_id: str) -> TeamLabel:
        for entry in self.entries:
            if entry.doc_id == doc_id:
                return entry.team
        raise KeyError(doc_id)


@dataclass(frozen=True)
class ClickEvent:
    """One user click on a displayed document, via some page element."""

    doc_id: str
    serp_element: str
    ts: float

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("click doc_id must be non-empty")
        if not self.serp_element:
            raise ValueError("click serp_element must be non-empty")
        if not math.isfinite(self.ts):
            raise ValueError("click ts must be finite")


@dataclass(frozen=True)
class Impression:
    """One served interleaved result page."""

    impression_id: str
    session_id: str
    query_or_item: str
    task: TaskType
    page: int
    rpp: int
    interleaved: InterleavedList
    ts: float

    def __post_init__(self) -> None:
        if not self.impression_id:
            raise ValueError("impression_id must be non-empty")
        if self.page < 0:
            raise ValueError("page must be >= 0")
        if self.rpp < 1:
            raise ValueError("rpp must be >= 1")
        if len(self.interleaved.entries) > self.rpp:
            raise ValueError(
                f"impression {self.impression_id!r}: {len(self.interleaved.entries)} entries exceed rpp={self.rpp}"
            )


@dataclass(frozen=True)
class FeedbackEvent:
    """Click feedback reported for one impression."""

    impression_id: str
    clicks: tuple[ClickEvent, ...]


@dataclass(frozen=True)
class Session:
    """A contiguous stretch of activity by one site user."""

    session_id: str
    site_user: str
    start_ts: float
    end_ts: float
    impression_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.end_ts < self.start_ts:
            raise ValueError(f"session {self.session_id!r}: end_ts before start_ts")


@dataclass(frozen=True)
class SystemDescriptor:
    """Registration record for one participating system."""

    name: str
    kind: SystemKind
    task: TaskType
    is_baseline: bool = False
    source: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("system name must be non-empty")
