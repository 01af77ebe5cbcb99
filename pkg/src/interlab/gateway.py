"""Request handling for one site: rotation, interleaving, logging, feedback.

This module is HTTP-free; the FastAPI layer in ``service`` translates wire
requests into these calls. Every page request resolves a session, draws one
experimental system uniformly at random from the ready ones, interleaves its
results with the baseline's, and stores the impression. A failing or silent
experimental system degrades the page to baseline-only; a failing baseline is
a service error, because the baseline is the availability contract.
"""
from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from .baseline import Bm25Params, build_index
from .config import GatewayConfig, SystemEntry
from .ingest import parse_documents, parse_head_queries, parse_run_file
from .interleave import CoinSource, team_draft_interleave
from .model import (
    ClickEvent,
    Impression,
    InterleavedEntry,
    SystemDescriptor,
    SystemKind,
    TaskType,
    TeamLabel,
)
from .sessions import ImpressionIdSequence, SessionStore
from .store import DirectorySink, FeedbackSink, FeedbackStore, HttpSink
from .systems import (
    BuiltinRanker,
    BuiltinRecommender,
    PrecomputedSystem,
    RemoteContract,
    RemoteSystem,
    SystemAdapter,
)

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    pass


class RequestInvalid(GatewayError):
    pass


class BaselineUnavailable(GatewayError):
    pass


class UnknownImpression(GatewayError):
    pass


class InvalidFeedback(GatewayError):
    pass


@dataclass(frozen=True)
class PageResult:
    session_id: str
    impression_id: str | None
    request: str
    task: TaskType
    page: int
    rpp: int
    num_found: int
    exp_system: str | None
    base_system: str
    entries: tuple[InterleavedEntry, ...]


@dataclass(frozen=True)
class FeedbackAck:
    impression_id: str
    stored: int
    duplicates: int


class Gateway:
    def __init__(
        self,
        config: GatewayConfig,
        adapters: dict[str, SystemAdapter],
        store: FeedbackStore,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.config = config
        self.adapters = adapters
        self.store = store
        self.clock = clock
        self._baseline: dict[TaskType, SystemAdapter] = {}
        self._experimental: dict[TaskType, list[SystemAdapter]] = {}
        for entry in config.systems:
            adapter = adapters.get(entry.descriptor.name)
            if adapter is None:
                raise GatewayError(f"no adapter for registered system {entry.descriptor.name!r}")
            task = entry.descriptor.task
            if entry.descriptor.is_baseline:
                self._baseline[task] = adapter
            else:
                self._experimental.setdefault(task, []).append(adapter)

        snapshot = store.snapshot()
        self._ids = ImpressionIdSequence.resuming_after(snapshot.impressions)
        self.sessions = SessionStore(
            timeout=config.session_timeout, on_create=store.append_session
        )
        latest: dict[str, tuple[str, float]] = {}
        for session in snapshot.sessions.values():
            known = latest.get(session.site_user)
            if known is None or known[1] <= session.end_ts:
                latest[session.site_user] = (session.session_id, session.end_ts)
        for site_user, (session_id, end_ts) in latest.items():
            self.sessions.seed_activity(site_user, session_id, end_ts)

        self._rotation = random.Random(config.rotation_seed)
        self._coin = CoinSource(config.rotation_seed + 1)
        self._sink = _build_sink(config.forward_to)

    @classmethod
    def from_config(cls, config: GatewayConfig, clock: Callable[[], float] = time.time) -> "Gateway":
        adapters = build_adapters(config)
        gateway = cls(config, adapters, FeedbackStore(config.feedback_log), clock=clock)
        gateway.initialize()
        return gateway

    def initialize(self) -> None:
        """Trigger indexing on every adapter; remote failures just stay not-ready."""
        for adapter in self.adapters.values():
            try:
                adapter.index()
            except Exception as exc:  # noqa: BLE001 - startup must not die on one system
                logger.warning("index trigger for %s failed: %s", adapter.descriptor.name, exc)

    # -- page serving ----------------------------------------------------

    def ranking_page(
        self,
        query: str,
        site_user: str,
        page: int = 0,
        rpp: int | None = None,
        ts: float | None = None,
    ) -> PageResult:
        return self._serve(TaskType.RANKING, query, site_user, page, rpp, ts)

    def recommendation_page(
        self,
        item_id: str,
        site_user: str,
        page: int = 0,
        rpp: int | None = None,
        ts: float | None = None,
    ) -> PageResult:
        return self._serve(TaskType.RECOMMENDATION, item_id, site_user, page, rpp, ts)

    def _serve(
        self,
        task: TaskType,
        request: str,
        site_user: str,
        page: int,
        rpp: int | None,
        ts: float | None,
    ) -> PageResult:
        if not request or not request.strip():
            raise RequestInvalid("request must be non-empty")
        if not site_user or not site_user.strip():
            raise RequestInvalid("site_user must be non-empty")
        if page < 0:
            raise RequestInvalid("page must be >= 0")
        if rpp is None:
            rpp = self.config.rpp.get(task, 10)
        if rpp < 1:
            raise RequestInvalid("rpp must be >= 1")
        if ts is None:
            ts = self.clock()

        baseline = self._baseline.get(task)
        if baseline is None:
            raise BaselineUnavailable(f"no baseline registered for task {task.value!r}")
        session_id = self.sessions.resolve(site_user.strip(), ts)

        try:
            base_response = baseline.respond(request, page, rpp)
        except Exception as exc:  # noqa: BLE001 - surfaced as a service error below
            logger.error("baseline %s failed: %s", baseline.descriptor.name, exc)
            raise BaselineUnavailable(f"baseline {baseline.descriptor.name!r} failed") from exc
        if not base_response.responded:
            raise BaselineUnavailable(f"baseline {baseline.descriptor.name!r} did not respond")

        candidates = [a for a in self._experimental.get(task, []) if a.ready()]
        exp_adapter = self._rotation.choice(candidates) if candidates else None
        exp_response = None
        if exp_adapter is not None:
            try:
                exp_response = exp_adapter.respond(request, page, rpp)
            except Exception as exc:  # noqa: BLE001 - experimental failure must not break the page
                logger.warning("experimental %s failed: %s", exp_adapter.descriptor.name, exc)
                exp_response = None

        if exp_adapter is not None and exp_response is not None and exp_response.responded:
            interleaved = team_draft_interleave(
                exp_response.doc_ids(),
                base_response.doc_ids(),
                k=rpp,
                coin=self._coin,
                exp_system=exp_adapter.descriptor.name,
                base_system=baseline.descriptor.name,
            )
            impression = Impression(
                impression_id=self._ids.next(),
                session_id=session_id,
                query_or_item=request,
                task=task,
                page=page,
                rpp=rpp,
                interleaved=interleaved,
                ts=ts,
            )
            self.store.append_impression(impression)
            return PageResult(
                session_id=session_id,
                impression_id=impression.impression_id,
                request=request,
                task=task,
                page=page,
                rpp=rpp,
                num_found=max(exp_response.num_found, base_response.num_found),
                exp_system=exp_adapter.descriptor.name,
                base_system=baseline.descriptor.name,
                entries=interleaved.entries,
            )

        # Baseline-only page: logged as plain traffic, not as an experiment.
        self.store.append_traffic(session_id, task, request, ts)
        entries = tuple(
            InterleavedEntry(doc_id=doc, team=TeamLabel.BASE) for doc in base_response.doc_ids()
        )
        return PageResult(
            session_id=session_id,
            impression_id=None,
            request=request,
            task=task,
            page=page,
            rpp=rpp,
            num_found=base_response.num_found,
            exp_system=None,
            base_system=baseline.descriptor.name,
            entries=entries[:rpp],
        )

    # -- feedback --------------------------------------------------------

    def accept_feedback(
        self, impression_id: str, clicks: Sequence[tuple[str, str | None, float | None]]
    ) -> FeedbackAck:
        """Validate and store clicks: (doc_id, element, ts) triples.

        A missing element maps to the configured default element; a missing
        timestamp takes the gateway clock. Storage is idempotent per
        (impression, timestamp, document, element).
        """
        impression = self.store.get_impression(impression_id)
        if impression is None:
            raise UnknownImpression(f"unknown impression_id {impression_id!r}")
        on_page = set(impression.interleaved.doc_ids())
        events = []
        for doc_id, element, ts in clicks:
            if doc_id not in on_page:
                raise InvalidFeedback(
                    f"click on document {doc_id!r} which is not part of impression {impression_id}"
                )
            normalized = self.config.weights.normalize(element) if element else self.config.weights.default_element
            events.append(
                ClickEvent(doc_id=doc_id, serp_element=normalized, ts=ts if ts is not None else self.clock())
            )
        stored, duplicates = self.store.append_feedback(impression_id, events)
        return FeedbackAck(impression_id=impression_id, stored=stored, duplicates=duplicates)

    def flush(self, sink: FeedbackSink | None = None) -> int:
        sink = sink or self._sink
        if sink is None:
            raise GatewayError("no feedback sink configured")
        return self.store.flush(sink)

    # -- introspection ---------------------------------------------------

    def descriptors(self) -> list[SystemDescriptor]:
        return [entry.descriptor for entry in self.config.systems]

    def system_readiness(self) -> dict[str, bool]:
        return {name: adapter.ready() for name, adapter in self.adapters.items()}

    def ready(self) -> bool:
        return all(adapter.ready() for adapter in self._baseline.values())

    @property
    def has_sink(self) -> bool:
        return self._sink is not None


def _build_sink(forward_to: str | None) -> FeedbackSink | None:
    if not forward_to:
        return None
    if forward_to.startswith(("http://", "https://")):
        return HttpSink(forward_to)
    return DirectorySink(forward_to)


def build_adapters(config: GatewayConfig) -> dict[str, SystemAdapter]:
    """Construct one adapter per registered system, loading corpora on demand."""
    corpora = config.corpora
    documents = None
    head_queries = None
    ranking_index = None
    seeds = None
    dataset_index = None

    def need_ranking_index():
        nonlocal documents, ranking_index
        if ranking_index is None:
            if corpora.documents is None:
                raise GatewayError("builtin ranking system needs a documents corpus")
            documents = parse_documents(corpora.documents, corpora.schema)
            ranking_index = build_index(documents, config.index_fields_for(corpora.schema))
        return ranking_index

    def need_recommendation_data():
        nonlocal seeds, dataset_index
        if dataset_index is None:
            if corpora.publications is None or corpora.datasets is None:
                raise GatewayError(
                    "builtin recommendation system needs publications and datasets corpora"
                )
            publications = parse_documents(corpora.publications, "social-science")
            datasets = parse_documents(corpora.datasets, "social-science")
            seeds = {doc.doc_id: doc for doc in publications}
            dataset_index = build_index(datasets, config.index_fields_for("social-science"))
        return seeds, dataset_index

    def need_head_queries():
        nonlocal head_queries
        if head_queries is None and corpora.head_queries is not None:
            head_queries = parse_head_queries(corpora.head_queries)
        return head_queries

    adapters: dict[str, SystemAdapter] = {}
    for entry in config.systems:
        descriptor = entry.descriptor
        if descriptor.kind is SystemKind.BUILTIN:
            if descriptor.task is TaskType.RANKING:
                adapters[descriptor.name] = BuiltinRanker(descriptor, need_ranking_index(), Bm25Params())
            else:
                seed_map, index = need_recommendation_data()
                adapters[descriptor.name] = BuiltinRecommender(descriptor, seed_map, index)
        elif descriptor.kind is SystemKind.PRECOMPUTED:
            assert entry.run_file is not None
            run = parse_run_file(entry.run_file)
            queries = need_head_queries() if descriptor.task is TaskType.RANKING else None
            adapters[descriptor.name] = PrecomputedSystem(descriptor, run, queries)
        else:
            assert entry.url is not None
            adapters[descriptor.name] = RemoteSystem(
                descriptor,
                RemoteContract(base_url=entry.url),
                task=descriptor.task,
                timeout=entry.timeout,
                max_in_flight=entry.max_in_flight,
            )
    return adapters
