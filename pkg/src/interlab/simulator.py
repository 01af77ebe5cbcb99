"""Synthetic user traffic: power-law query sampling and position-biased clicks.

The click model is a position-based examination/attractiveness model: a user
examines each page position with a rank-decaying probability, and clicks an
examined document only if it is relevant, with a per-team attractiveness.
Relevance is the top slice of a hidden oracle ranking, so a simulated
system's measured quality is controlled by its distance from the oracle.

A run is deterministic for a given seed: every session derives its own
sub-seed, so the sampled traffic does not depend on how sessions are
scheduled.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Callable, Iterator, Protocol, Sequence

import httpx

from .gateway import Gateway, PageResult
from .model import ClickEvent, InterleavedEntry, TaskType, TeamLabel
from .systems import SystemAdapter

DEFAULT_ELEMENT_DISTRIBUTION: tuple[tuple[str, float], ...] = (
    ("Details", 0.35),
    ("Title", 0.30),
    ("Fulltext", 0.15),
    ("In Stock", 0.08),
    ("Bookmark", 0.06),
    ("More Links", 0.04),
    ("Order", 0.02),
)


@dataclass(frozen=True)
class ClickModel:
    """Position-based click model with per-team attractiveness."""

    decay: float = 0.7
    examination: tuple[float, ...] | None = None
    attract_exp: float = 0.6
    attract_base: float = 0.6
    elements: tuple[tuple[str, float], ...] = DEFAULT_ELEMENT_DISTRIBUTION

    def __post_init__(self) -> None:
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        for prob in (self.attract_exp, self.attract_base):
            if not 0.0 <= prob <= 1.0:
                raise ValueError("attractiveness must be in [0, 1]")
        if self.examination is not None:
            for prob in self.examination:
                if not 0.0 <= prob <= 1.0:
                    raise ValueError("examination probabilities must be in [0, 1]")
        if not self.elements:
            raise ValueError("element distribution must be non-empty")
        total = sum(weight for _, weight in self.elements)
        if any(weight < 0 for _, weight in self.elements) or abs(total - 1.0) > 1e-9:
            raise ValueError("element distribution must be non-negative and sum to 1")

    def examine_prob(self, rank: int) -> float:
        """Probability that the user looks at the 1-based page position."""
        if self.examination is not None:
            return self.examination[rank - 1] if rank <= len(self.examination) else 0.0
        return self.decay ** (rank - 1)

    @classmethod
    def for_task(cls, task: TaskType, **overrides) -> "ClickModel":
        # Search results get clicked far more readily than an unfamiliar
        # recommendation panel; the two defaults keep that asymmetry visible.
        attract = 0.65 if task is TaskType.RANKING else 0.05
        values = {"attract_exp": attract, "attract_base": attract}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class TrafficConfig:
    sessions: int
    queries_per_session: float = 2.0
    zipf_exponent: float = 1.0
    seed: int = 0
    task: TaskType = TaskType.RANKING
    relevant_top_m: int = 3
    rpp: int | None = None
    site_user_prefix: str = "sim-user"
    start_ts: float = 1_600_000_000.0
    max_session_queries: int = 50

    def __post_init__(self) -> None:
        if self.sessions < 0:
            raise ValueError("sessions must be >= 0")
        if self.queries_per_session < 1.0:
            raise ValueError("queries_per_session must be >= 1")
        if self.zipf_exponent < 0.0:
            raise ValueError("zipf_exponent must be >= 0")
        if self.relevant_top_m < 0:
            raise ValueError("relevant_top_m must be >= 0")


def zipf_weights(n: int, exponent: float) -> list[float]:
    return [(rank + 1) ** (-exponent) for rank in range(n)]


def _cumulative(weights: Sequence[float]) -> list[float]:
    return list(accumulate(weights))


def sample_queries(vocabulary: Sequence[str], config: TrafficConfig) -> Iterator[str]:
    """Endless request stream: item i of the vocabulary drawn with p ∝ (i+1)^-exponent."""
    if not vocabulary:
        raise ValueError("vocabulary must be non-empty")
    rng = random.Random(config.seed)
    cum = _cumulative(zipf_weights(len(vocabulary), config.zipf_exponent))
    while True:
        yield rng.choices(vocabulary, cum_weights=cum)[0]


def simulate_clicks(
    entries: Sequence[InterleavedEntry],
    relevant: frozenset[str] | set[str],
    model: ClickModel,
    rng: random.Random | int,
    ts: float = 0.0,
) -> list[ClickEvent]:
    """Roll the click model over one served page, top to bottom."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    element_names = [name for name, _ in model.elements]
    element_cum = _cumulative([weight for _, weight in model.elements])
    clicks: list[ClickEvent] = []
    for position, entry in enumerate(entries, start=1):
        if rng.random() >= model.examine_prob(position):
            continue
        if entry.doc_id not in relevant:
            continue
        attract = model.attract_exp if entry.team is TeamLabel.EXP else model.attract_base
        if rng.random() >= attract:
            continue
        element = rng.choices(element_names, cum_weights=element_cum)[0]
        clicks.append(ClickEvent(doc_id=entry.doc_id, serp_element=element, ts=ts + position))
    return clicks


class RelevanceOracle:
    """Relevant docs per request: the top slice of a hidden reference ranking."""

    def __init__(self, adapter: SystemAdapter, top_m: int) -> None:
        self._adapter = adapter
        self._top_m = top_m
        self._cache: dict[str, frozenset[str]] = {}

    def __call__(self, request: str) -> frozenset[str]:
        hit = self._cache.get(request)
        if hit is None:
            response = self._adapter.respond(request, 0, max(self._top_m, 1))
            docs = response.doc_ids()[: self._top_m] if response.responded else []
            hit = self._cache[request] = frozenset(docs)
        return hit


class Driver(Protocol):
    """How the simulator talks to a gateway: in-process or over HTTP."""

    def page(
        self, task: TaskType, request: str, site_user: str, ts: float, rpp: int | None
    ) -> PageResult: ...
    def feedback(self, impression_id: str, clicks: Sequence[ClickEvent]) -> None: ...


class InProcessDriver:
    def __init__(self, gateway: Gateway) -> None:
        self._gateway = gateway

    def page(
        self, task: TaskType, request: str, site_user: str, ts: float, rpp: int | None
    ) -> PageResult:
        if task is TaskType.RANKING:
            return self._gateway.ranking_page(request, site_user, rpp=rpp, ts=ts)
        return self._gateway.recommendation_page(request, site_user, rpp=rpp, ts=ts)

    def feedback(self, impression_id: str, clicks: Sequence[ClickEvent]) -> None:
        self._gateway.accept_feedback(
            impression_id, [(c.doc_id, c.serp_element, c.ts) for c in clicks]
        )


class HttpDriver:
    """Speaks the gateway wire schema against a live endpoint."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 10.0) -> None:
        self._base = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def page(
        self, task: TaskType, request: str, site_user: str, ts: float, rpp: int | None
    ) -> PageResult:
        if task is TaskType.RANKING:
            url = self._base + "/api/v1/ranking"
            params: dict[str, object] = {"q": request, "site_user": site_user, "ts": ts}
        else:
            url = self._base + "/api/v1/recommendation/datasets"
            params = {"itemid": request, "site_user": site_user, "ts": ts}
        if rpp is not None:
            params["rpp"] = rpp
        response = self._client.get(url, params=params)
        response.raise_for_status()
        data = response.json()
        header = data["header"]
        return PageResult(
            session_id=header["sid"],
            impression_id=header["impression_id"],
            request=request,
            task=task,
            page=header["page"],
            rpp=header["rpp"],
            num_found=header["num_found"],
            exp_system=header["container"]["exp"],
            base_system=header["container"]["base"],
            entries=tuple(
                InterleavedEntry(doc_id=item["docid"], team=TeamLabel(item["type"]))
                for item in data["body"]
            ),
        )

    def feedback(self, impression_id: str, clicks: Sequence[ClickEvent]) -> None:
        payload = {
            "impression_id": impression_id,
            "clicks": [
                {"docid": c.doc_id, "element": c.serp_element, "ts": c.ts} for c in clicks
            ],
        }
        self._client.post(self._base + "/api/v1/feedback", json=payload).raise_for_status()


@dataclass
class SimulationSummary:
    sessions: int = 0
    requests: int = 0
    interleaved_impressions: int = 0
    baseline_only_pages: int = 0
    clicks: int = 0
    feedback_posts: int = 0
    aborted: str | None = None

    def to_dict(self) -> dict:
        return {
            "sessions": self.sessions,
            "requests": self.requests,
            "interleaved_impressions": self.interleaved_impressions,
            "baseline_only_pages": self.baseline_only_pages,
            "clicks": self.clicks,
            "feedback_posts": self.feedback_posts,
            "aborted": self.aborted,
        }


def _session_length(rng: random.Random, mean: float, cap: int) -> int:
    # Geometric with success probability 1/mean, truncated at cap.
    p = 1.0 / mean
    length = 1
    while length < cap and rng.random() > p:
        length += 1
    return length


def run_simulation(
    driver: Driver,
    config: TrafficConfig,
    model: ClickModel,
    vocabulary: Sequence[str],
    oracle: Callable[[str], frozenset[str]],
) -> SimulationSummary:
    """Drive complete sessions end-to-end: request, page, clicks, feedback.

    The vocabulary must be ordered by popularity rank; request i is drawn
    with probability proportional to (i+1)^-exponent. If the gateway becomes
    unreachable mid-run the partial summary is returned with ``aborted`` set.
    """
    if not vocabulary and config.sessions > 0:
        raise ValueError("vocabulary must be non-empty")
    summary = SimulationSummary()
    cum = _cumulative(zipf_weights(len(vocabulary), config.zipf_exponent))
    for i in range(config.sessions):
        rng = random.Random(config.seed * 1_000_003 + i + 1)
        site_user = f"{config.site_user_prefix}-{i:06d}"
        ts = config.start_ts + i * 60.0
        length = _session_length(rng, config.queries_per_session, config.max_session_queries)
        summary.sessions += 1
        for _ in range(length):
            request = rng.choices(vocabulary, cum_weights=cum)[0]
            try:
                result = driver.page(config.task, request, site_user, ts=ts, rpp=config.rpp)
            except (httpx.HTTPError, ConnectionError) as exc:
                summary.aborted = f"gateway unreachable: {exc}"
                return summary
            summary.requests += 1
            if result.impression_id is None:
                summary.baseline_only_pages += 1
            else:
                summary.interleaved_impressions += 1
                clicks = simulate_clicks(result.entries, oracle(request), model, rng, ts=ts)
                if clicks:
                    try:
                        driver.feedback(result.impression_id, clicks)
                    except (httpx.HTTPError, ConnectionError) as exc:
                        summary.aborted = f"gateway unreachable: {exc}"
                        return summary
                    summary.clicks += len(clicks)
                    summary.feedback_posts += 1
            ts += 30.0
    return summary
