"""Parsers and writers for corpora, head queries, candidate files, and run files.

All readers are line-oriented and report problems with a 1-based line number.
Writers are inverses of the corresponding parsers: parse(write(parse(f)))
equals parse(f).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .model import CandidateList, DocumentRecord, HeadQuery, RankedResult, ScoredCandidate, TaskType

LITERATURE_SCHEMA = "literature"
SOCIAL_SCIENCE_SCHEMA = "social-science"

ID_FIELDS = {
    LITERATURE_SCHEMA: "DBRECORDID",
    SOCIAL_SCIENCE_SCHEMA: "id",
}


class IngestError(ValueError):
    """A malformed input file, positioned at a specific line."""

    def __init__(self, path: str | Path, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no
        self.message = message


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise IngestError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise IngestError(path, line_no, "expected a JSON object")
            yield line_no, obj


def _field_values(path: str | Path, line_no: int, name: str, value: object) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if isinstance(value, (int, float)):
        return (str(value),)
    if isinstance(value, list):
        out: list[str] = []
        for element in value:
            if element is None:
                continue
            if isinstance(element, (dict, list)):
                raise IngestError(path, line_no, f"field {name!r}: nested values are not supported")
            out.append(element if isinstance(element, str) else str(element))
        return tuple(out)
    raise IngestError(path, line_no, f"field {name!r}: unsupported value type {type(value).__name__}")


def parse_documents(path: str | Path, schema: str) -> list[DocumentRecord]:
    """Read a JSONL corpus in the named schema; one document per line."""
    try:
        id_field = ID_FIELDS[schema]
    except KeyError:
        raise ValueError(f"unknown corpus schema {schema!r}; expected one of {sorted(ID_FIELDS)}")
    docs: list[DocumentRecord] = []
    seen: dict[str, int] = {}
    for line_no, obj in _iter_jsonl(path):
        raw_id = obj.get(id_field)
        if raw_id is None:
            raise IngestError(path, line_no, f"missing id field {id_field!r}")
        doc_id = str(raw_id)
        if not doc_id:
            raise IngestError(path, line_no, f"empty id field {id_field!r}")
        if doc_id in seen:
            raise IngestError(
                path, line_no, f"duplicate document id {doc_id!r} (first seen at line {seen[doc_id]})"
            )
        seen[doc_id] = line_no
        fields = {
            name: _field_values(path, line_no, name, value)
            for name, value in obj.items()
            if name != id_field
        }
        docs.append(DocumentRecord(doc_id=doc_id, fields=fields))
    return docs


def parse_head_queries(path: str | Path) -> list[HeadQuery]:
    """Read the popular-query file: one {qid, qstr, freq} object per line."""
    queries: list[HeadQuery] = []
    seen: dict[int, int] = {}
    for line_no, obj in _iter_jsonl(path):
        qid = obj.get("qid")
        if not isinstance(qid, int) or isinstance(qid, bool):
            raise IngestError(path, line_no, "qid must be an integer")
        if qid in seen:
            raise IngestError(path, line_no, f"duplicate qid {qid} (first seen at line {seen[qid]})")
        seen[qid] = line_no
        qstr = obj.get("qstr")
        freq = obj.get("freq")
        if not isinstance(qstr, str) or not qstr.strip():
            raise IngestError(path, line_no, f"qid {qid}: qstr must be a non-empty string")
        if not isinstance(freq, int) or isinstance(freq, bool) or freq < 0:
            raise IngestError(path, line_no, f"qid {qid}: freq must be a non-negative integer")
        queries.append(HeadQuery(qid=qid, qstr=qstr, freq=freq))
    return queries


def parse_candidates(path: str | Path, task: TaskType) -> dict[str, CandidateList]:
    """Read pre-computed candidates.

    Ranking files carry ordered id arrays keyed by qid; recommendation files
    carry score maps keyed by seed item id, ordered by descending score with
    ties broken by ascending doc id.
    """
    lists: dict[str, CandidateList] = {}
    first_line: dict[str, int] = {}
    for line_no, obj in _iter_jsonl(path):
        if task is TaskType.RANKING:
            qid = obj.get("qid")
            if not isinstance(qid, int) or isinstance(qid, bool):
                raise IngestError(path, line_no, "qid must be an integer")
            key = str(qid)
            raw = obj.get("candidates")
            if not isinstance(raw, list) or not raw:
                raise IngestError(path, line_no, f"qid {qid}: candidates must be a non-empty array")
            candidates = []
            for doc in raw:
                if not isinstance(doc, str) or not doc:
                    raise IngestError(path, line_no, f"qid {qid}: candidate ids must be non-empty strings")
                candidates.append(ScoredCandidate(doc_id=doc))
        else:
            key = obj.get("s_id")
            if not isinstance(key, str) or not key:
                raise IngestError(path, line_no, "s_id must be a non-empty string")
            raw_map = obj.get("candidate_docs")
            if not isinstance(raw_map, dict) or not raw_map:
                raise IngestError(path, line_no, f"{key}: candidate_docs must be a non-empty object")
            scored: list[tuple[str, float]] = []
            for doc, score in raw_map.items():
                if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
                    raise IngestError(path, line_no, f"{key}: score for {doc!r} must be a finite number")
                scored.append((doc, float(score)))
            scored.sort(key=lambda pair: (-pair[1], pair[0]))
            candidates = [ScoredCandidate(doc_id=doc, score=score) for doc, score in scored]
        if key in lists:
            raise IngestError(
                path, line_no, f"duplicate key {key!r} (first seen at line {first_line[key]})"
            )
        try:
            lists[key] = CandidateList(key=key, candidates=tuple(candidates))
        except ValueError as exc:
            raise IngestError(path, line_no, str(exc)) from exc
        first_line[key] = line_no
    return lists


def write_candidates(lists: Iterable[CandidateList], task: TaskType, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for cand_list in lists:
            if task is TaskType.RANKING:
                obj: dict = {"qid": int(cand_list.key), "candidates": list(cand_list.doc_ids())}
            else:
                obj = {
                    "s_id": cand_list.key,
                    "candidate_docs": {c.doc_id: c.score for c in cand_list.candidates},
                }
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class RunFile:
    """A parsed six-column run: per-request rankings under one tag."""

    tag: str
    entries: dict[str, tuple[RankedResult, ...]] = field(default_factory=dict)

    def result_count(self) -> int:
        return sum(len(results) for results in self.entries.values())


@dataclass
class ValidationReport:
    """Outcome of scanning a run file: positioned errors and warnings."""

    path: str
    errors: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "ok": self.ok,
            "errors": [{"line": line, "message": msg} for line, msg in self.errors],
            "warnings": [{"line": line, "message": msg} for line, msg in self.warnings],
        }


def _scan_run_file(path: str | Path) -> Iterator[tuple[str, int, object]]:
    """Yield ("entry", line, (qid, doc, rank, score, tag)), ("error", ...) or ("warning", ...) events."""
    tag_seen: str | None = None
    next_rank: dict[str, int] = {}
    docs_by_qid: dict[str, set[str]] = {}
    prev_score: dict[str, float] = {}
    any_entries = False
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != 6:
                yield "error", line_no, f"expected 6 whitespace-separated columns, found {len(parts)}"
                continue
            qid, literal, doc_id, rank_str, score_str, tag = parts
            bad = False
            if literal != "Q0":
                yield "error", line_no, f"second column must be 'Q0', found {literal!r}"
                bad = True
            try:
                rank = int(rank_str)
            except ValueError:
                yield "error", line_no, f"rank must be an integer, found {rank_str!r}"
                bad = True
            try:
                score = float(score_str)
                if not math.isfinite(score):
                    yield "error", line_no, f"score must be finite, found {score_str!r}"
                    bad = True
            except ValueError:
                yield "error", line_no, f"score must be a number, found {score_str!r}"
                bad = True
            if tag_seen is None:
                tag_seen = tag
            elif tag != tag_seen:
                yield "error", line_no, f"mixed run tags: {tag!r} after {tag_seen!r}"
                bad = True
            if bad:
                continue
            if doc_id in docs_by_qid.setdefault(qid, set()):
                yield "error", line_no, f"duplicate document {doc_id!r} for qid {qid}"
                continue
            expected = next_rank.get(qid, 1)
            if rank != expected:
                yield "error", line_no, f"qid {qid}: rank {rank} out of order, expected {expected}"
                continue
            if qid in prev_score and score > prev_score[qid]:
                yield "warning", line_no, f"qid {qid}: score increases at rank {rank}"
            docs_by_qid[qid].add(doc_id)
            next_rank[qid] = expected + 1
            prev_score[qid] = score
            any_entries = True
            yield "entry", line_no, (qid, doc_id, rank, score, tag)
    if not any_entries:
        yield "warning", 0, "run file has no entries"


def parse_run_file(path: str | Path) -> RunFile:
    """Strictly parse a run file; the first malformed line raises."""
    entries: dict[str, list[RankedResult]] = {}
    tag = ""
    for kind, line_no, payload in _scan_run_file(path):
        if kind == "error":
            raise IngestError(path, line_no, str(payload))
        if kind != "entry":
            continue
        qid, doc_id, rank, score, tag = payload  # type: ignore[misc]
        entries.setdefault(qid, []).append(RankedResult(doc_id=doc_id, rank=rank, score=score))
    return RunFile(tag=tag, entries={qid: tuple(results) for qid, results in entries.items()})


def write_run_file(run: RunFile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for qid, results in run.entries.items():
            for res in results:
                handle.write(f"{qid} Q0 {res.doc_id} {res.rank} {res.score!r} {run.tag}\n")


def validate_run_file(
    path: str | Path,
    known_qids: set[str] | None = None,
    known_doc_ids: set[str] | None = None,
) -> ValidationReport:
    """Scan a run file and collect every problem instead of stopping at the first."""
    report = ValidationReport(path=str(path))
    seen_qids: set[str] = set()
    for kind, line_no, payload in _scan_run_file(path):
        if kind == "error":
            report.errors.append((line_no, str(payload)))
        elif kind == "warning":
            report.warnings.append((line_no, str(payload)))
        else:
            qid, doc_id, _rank, _score, _tag = payload  # type: ignore[misc]
            if known_qids is not None and qid not in known_qids and qid not in seen_qids:
                report.warnings.append((line_no, f"qid {qid} not in the known query set"))
            seen_qids.add(qid)
            if known_doc_ids is not None and doc_id not in known_doc_ids:
                report.warnings.append((line_no, f"document {doc_id!r} not in the corpus"))
    if known_qids is not None:
        for qid in sorted(known_qids - seen_qids):
            report.warnings.append((0, f"known qid {qid} has no results"))
    return report
