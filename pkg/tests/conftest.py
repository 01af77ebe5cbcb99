"""Shared fixtures and reference implementations used as independent oracles."""
from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from interlab.model import (
    ClickEvent,
    Impression,
    InterleavedEntry,
    InterleavedList,
    Session,
    TaskType,
    TeamLabel,
)
from interlab.store import StoreSnapshot

# Filled by the acceptance tests; one verdict line per criterion is printed
# with the terminal summary so every full run shows the release-gate status.
ACCEPTANCE_VERDICTS: list[tuple[str, bool, float]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for label, ok, elapsed in ACCEPTANCE_VERDICTS:
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {label} ({elapsed:.1f}s)")


class ScriptedCoin:
    """Coin that replays a fixed flip sequence and fails if asked for more."""

    def __init__(self, flips):
        self.flips = list(flips)
        self.used = 0

    def flip(self) -> bool:
        if self.used >= len(self.flips):
            raise AssertionError("coin stream exhausted")
        value = self.flips[self.used]
        self.used += 1
        return value


def reference_draft(exp, base, k, flips):
    """Independent team-draft reference: simulates the draft round by round.

    One flip is consumed per round; the flip winner picks first, then the
    other team; each pick takes the team's best not-yet-shown document.
    Returns (entries, flips_used) with entries as (doc_id, "EXP"|"BASE").
    """
    shown = []
    shown_docs = set()
    used = 0

    def best(docs):
        for doc in docs:
            if doc not in shown_docs:
                return doc
        return None

    while len(shown) < k and (best(exp) is not None or best(base) is not None):
        exp_first = flips[used]
        used += 1
        for team in ("EXP", "BASE") if exp_first else ("BASE", "EXP"):
            if len(shown) >= k:
                break
            doc = best(exp if team == "EXP" else base)
            if doc is not None:
                shown.append((doc, team))
                shown_docs.add(doc)
    return shown, used


def enumerate_draft_outcomes(exp, base, k):
    """All (flip_script, expected_entries) leaves of the draft decision tree."""
    leaves = []

    def walk(script):
        probe = list(script) + [True] * (k + 1)
        entries, used = reference_draft(exp, base, k, probe)
        if used <= len(script):
            leaves.append((tuple(script[:used]), entries))
            return
        for flip in (True, False):
            walk(script + [flip])

    walk([])
    return leaves


def make_entries(pairs):
    return tuple(InterleavedEntry(doc_id=doc, team=TeamLabel(team)) for doc, team in pairs)


def make_impression(
    imp_id,
    pairs,
    exp="exp-a",
    base="base",
    sid="s-00000001",
    query="covid",
    task=TaskType.RANKING,
    page=0,
    rpp=10,
    ts=1000.0,
):
    return Impression(
        impression_id=imp_id,
        session_id=sid,
        query_or_item=query,
        task=task,
        page=page,
        rpp=rpp,
        ts=ts,
        interleaved=InterleavedList(entries=make_entries(pairs), exp_system=exp, base_system=base),
    )


def make_snapshot(impressions, clicks=None, sessions=None, traffic=None):
    clicks = clicks or {}
    sessions = sessions or {}
    return StoreSnapshot(
        impressions={imp.impression_id: imp for imp in impressions},
        clicks={imp_id: tuple(events) for imp_id, events in clicks.items()},
        sessions=sessions,
        traffic=traffic or {},
        last_seq=0,
        forwarded_through=0,
    )


def click(doc, element="Details", ts=1.0):
    return ClickEvent(doc_id=doc, serp_element=element, ts=ts)


WORD_POOL = [
    "covid", "vaccine", "cancer", "therapy", "genome", "nutrition", "influenza",
    "diabetes", "surgery", "antibiotic", "virus", "protein", "clinical", "trial",
    "health", "pandemic", "immunity", "pathogen", "screening", "biomarker",
    "cardiology", "neurology", "pediatric", "oncology", "epidemiology", "sepsis",
]


def write_jsonl(path: Path, rows) -> Path:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def literature_docs(n=120, seed=11):
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        words = rng.sample(WORD_POOL, rng.randint(3, 6))
        rows.append(
            {
                "DBRECORDID": f"doc{i:04d}",
                "TITLE": " ".join(words),
                "AUTHOR": [f"Author {i}"],
                "SOURCE": "Sample Journal",
                "LANGUAGE": ["eng"],
                "DATABASE": ["SAMPLE"],
            }
        )
    return rows


def head_query_rows(n=100, seed=5, max_terms=3):
    rng = random.Random(seed)
    rows = []
    seen = set()
    qid = 1000
    while len(rows) < n:
        qstr = " ".join(rng.sample(WORD_POOL, rng.randint(1, max_terms)))
        if qstr in seen:
            continue
        seen.add(qstr)
        rows.append({"qid": qid, "qstr": qstr, "freq": max(1, 4000 // (len(rows) + 1))})
        qid += 1
    return rows


def social_docs(prefix, n=40, seed=23, id_offset=0):
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        words = rng.sample(WORD_POOL, rng.randint(4, 8))
        rows.append(
            {
                "id": f"{prefix}{i + id_offset:04d}",
                "title": " ".join(words[:4]),
                "abstract": " ".join(words),
                "topic": [words[0], words[1]],
                "title_en": " ".join(words[:4]),
            }
        )
    return rows


@pytest.fixture()
def site(tmp_path):
    """A ready-to-serve sandbox site: corpora, head queries, and a config file."""
    return build_site(tmp_path)


def build_site(
    root: Path,
    n_docs=120,
    n_queries=100,
    extra_systems="",
    rotation_seed=7,
    session_timeout_minutes=30,
    forward_to=None,
    name="site",
):
    root = Path(root)
    docs_path = write_jsonl(root / "documents.jsonl", literature_docs(n_docs))
    queries_path = write_jsonl(root / "head_queries.jsonl", head_query_rows(n_queries))
    pubs_path = write_jsonl(root / "publications.jsonl", social_docs("pub", 30, seed=31))
    datasets_path = write_jsonl(root / "datasets.jsonl", social_docs("ds", 40, seed=47))
    forward_line = f"forward_to: {forward_to}\n" if forward_to else ""
    config_path = root / "config.yaml"
    config_path.write_text(
        f"""site: {name}
task: ranking
feedback_log: runtime/feedback.jsonl
rotation_seed: {rotation_seed}
session_timeout_minutes: {session_timeout_minutes}
flush_interval_seconds: 60
{forward_line}corpora:
  documents: documents.jsonl
  schema: literature
  head_queries: head_queries.jsonl
  publications: publications.jsonl
  datasets: datasets.jsonl
systems:
  - name: base-bm25
    kind: builtin
    task: ranking
    baseline: true
  - name: exp-bm25
    kind: builtin
    task: ranking
{extra_systems}""",
        encoding="utf-8",
    )
    return {
        "root": root,
        "config": config_path,
        "documents": docs_path,
        "head_queries": queries_path,
        "publications": pubs_path,
        "datasets": datasets_path,
        "feedback_log": root / "runtime" / "feedback.jsonl",
    }


# Twelve malformed run files, each with the line number and message fragment
# the validator must report. Shared by the format tests and the acceptance
# suite.
MALFORMED_RUNS: list[tuple[str, str, int, str]] = [
    (
        "five-columns",
        "1001 Q0 doc0001 1 14.2 tag-a\n1001 Q0 doc0002 2 13.9\n",
        2,
        "expected 6 whitespace-separated columns, found 5",
    ),
    (
        "seven-columns",
        "1001 Q0 doc0001 1 14.2 tag-a extra\n",
        1,
        "expected 6 whitespace-separated columns, found 7",
    ),
    (
        "non-integer-rank",
        "1001 Q0 doc0001 first 14.2 tag-a\n",
        1,
        "rank must be an integer",
    ),
    (
        "non-numeric-score",
        "1001 Q0 doc0001 1 abc tag-a\n",
        1,
        "score must be a number",
    ),
    (
        "non-finite-score",
        "1001 Q0 doc0001 1 inf tag-a\n",
        1,
        "score must be finite",
    ),
    (
        "rank-gap",
        "1001 Q0 doc0001 1 14.2 tag-a\n1001 Q0 doc0002 3 13.9 tag-a\n",
        2,
        "rank 3 out of order, expected 2",
    ),
    (
        "duplicate-document",
        "1001 Q0 doc0001 1 14.2 tag-a\n1001 Q0 doc0001 2 13.9 tag-a\n",
        2,
        "duplicate document 'doc0001'",
    ),
    (
        "mixed-tags",
        "1001 Q0 doc0001 1 14.2 tag-a\n1001 Q0 doc0002 2 13.9 tag-b\n",
        2,
        "mixed run tags",
    ),
    (
        "rank-starts-at-two",
        "1001 Q0 doc0001 2 14.2 tag-a\n",
        1,
        "rank 2 out of order, expected 1",
    ),
    (
        "duplicate-rank",
        "1001 Q0 doc0001 1 14.2 tag-a\n1001 Q0 doc0002 1 13.9 tag-a\n",
        2,
        "rank 1 out of order, expected 2",
    ),
    (
        "wrong-literal",
        "1001 QO doc0001 1 14.2 tag-a\n",
        1,
        "second column must be 'Q0'",
    ),
    (
        "one-token-line",
        "garbage\n",
        1,
        "expected 6 whitespace-separated columns, found 1",
    ),
]
