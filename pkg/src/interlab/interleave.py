"""Team-draft interleaving, click attribution, and per-impression judging.

Two ranked lists (experimental and baseline) are merged into one result page
by a team draft: in every round a coin decides which team drafts first, then
each team in that order appends its highest-ranked document not already on
the page and labels it as its own. The draft stops when the page reaches the
requested length or both lists run dry.

Clicks on the merged page are credited to the team that drafted the clicked
document; comparing the two credit totals judges the impression.
"""
from __future__ import annotations

import random
from enum import Enum
from typing import Iterable, Protocol, Sequence

from .model import ClickEvent, InterleavedEntry, InterleavedList, TeamLabel


class JudgeResult(str, Enum):
    WIN = "win"
    LOSS = "loss"
    TIE = "tie"
    NO_CLICK = "no_click"


class Coin(Protocol):
    def flip(self) -> bool: ...


class CoinSource:
    """Seeded pseudo-random boolean stream; same seed, same flips."""

    def __init__(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def flip(self) -> bool:
        """True means the experimental team drafts first this round."""
        return self._rng.getrandbits(1) == 1


class ClickAttributionError(ValueError):
    """A click referenced a document that is not on the page."""

    def __init__(self, doc_id: str) -> None:
        super().__init__(f"click on document {doc_id!r} which is not on the page")
        self.doc_id = doc_id


def _check_no_duplicates(docs: Sequence[str], label: str) -> None:
    if len(set(docs)) != len(docs):
        seen: set[str] = set()
        for doc in docs:
            if doc in seen:
                raise ValueError(f"{label} list contains duplicate document {doc!r}")
            seen.add(doc)


def team_draft_interleave(
    exp_docs: Sequence[str],
    base_docs: Sequence[str],
    k: int,
    coin: Coin,
    exp_system: str = "exp",
    base_system: str = "base",
) -> InterleavedList:
    """Merge two ranked document lists into a page of at most ``k`` entries.

    One coin flip is drawn per round, before anything is drafted, even when
    only one team still has documents left; that keeps the flip stream aligned
    with the round number regardless of exhaustion. Within a round the first
    drafter is the flip winner, then the other team drafts. A team whose
    remaining documents are all on the page already simply contributes nothing
    that round.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_no_duplicates(exp_docs, "experimental")
    _check_no_duplicates(base_docs, "baseline")

    chosen: list[InterleavedEntry] = []
    on_page: set[str] = set()
    cursors = {TeamLabel.EXP: 0, TeamLabel.BASE: 0}
    lists = {TeamLabel.EXP: exp_docs, TeamLabel.BASE: base_docs}

    def skip_used(team: TeamLabel) -> int:
        docs = lists[team]
        i = cursors[team]
        while i < len(docs) and docs[i] in on_page:
            i += 1
        cursors[team] = i
        return i

    while len(chosen) < k:
        exhausted_exp = skip_used(TeamLabel.EXP) >= len(exp_docs)
        exhausted_base = skip_used(TeamLabel.BASE) >= len(base_docs)
        if exhausted_exp and exhausted_base:
            break
        order = (
            (TeamLabel.EXP, TeamLabel.BASE)
            if coin.flip()
            else (TeamLabel.BASE, TeamLabel.EXP)
        )
        for team in order:
            if len(chosen) >= k:
                break
            i = skip_used(team)
            docs = lists[team]
            if i >= len(docs):
                continue
            chosen.append(InterleavedEntry(doc_id=docs[i], team=team))
            on_page.add(docs[i])
            cursors[team] = i + 1

    return InterleavedList(entries=tuple(chosen), exp_system=exp_system, base_system=base_system)


def attribute_clicks(
    interleaved: InterleavedList, clicks: Iterable[ClickEvent]
) -> tuple[int, int]:
    """Count clicks per drafting team; returns ``(experimental, baseline)``."""
    team_by_doc = {entry.doc_id: entry.team for entry in interleaved.entries}
    clicks_exp = 0
    clicks_base = 0
    for click in clicks:
        team = team_by_doc.get(click.doc_id)
        if team is None:
            raise ClickAttributionError(click.doc_id)
        if team is TeamLabel.EXP:
            clicks_exp += 1
        else:
            clicks_base += 1
    return clicks_exp, clicks_base


def judge(clicks_exp: int, clicks_base: int) -> JudgeResult:
    """Decide one impression from the experimental team's perspective.

    More experimental clicks is a win, fewer a loss, equal nonzero counts a
    tie; an impression nobody clicked is set aside and never tallied.
    """
    if clicks_exp < 0 or clicks_base < 0:
        raise ValueError("click counts must be non-negative")
    if clicks_exp == 0 and clicks_base == 0:
        return JudgeResult.NO_CLICK
    if clicks_exp > clicks_base:
        return JudgeResult.WIN
    if clicks_exp < clicks_base:
        return JudgeResult.LOSS
    return JudgeResult.TIE


def highest_exp_rank(interleaved: InterleavedList) -> int | None:
    """1-based page position of the best-placed experimental document, if any."""
    for position, entry in enumerate(interleaved.entries, start=1):
        if entry.team is TeamLabel.EXP:
            return position
    return None
