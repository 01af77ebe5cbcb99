"""Adapters that make every participating system look the same to the gateway.

Three kinds exist: pre-computed run files answering only their head queries
or seed items, live systems called over HTTP, and the built-in reference
rankers. All of them expose ``respond(request, page, rpp)`` returning a
``SystemResponse``; a system that cannot answer says so instead of raising.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import httpx

from .baseline import Bm25Params, InvertedIndex, bm25_rank, recommend_for_publication
from .ingest import RunFile
from .model import DocumentRecord, HeadQuery, RankedResult, SystemDescriptor, TaskType

logger = logging.getLogger(__name__)

DEFAULT_REMOTE_TIMEOUT = 2.0
DEFAULT_MAX_IN_FLIGHT = 8


@dataclass(frozen=True)
class SystemResponse:
    results: tuple[RankedResult, ...]
    num_found: int
    responded: bool

    def __post_init__(self) -> None:
        if not self.responded and self.results:
            raise ValueError("a non-response cannot carry results")
        if self.num_found < 0:
            raise ValueError("num_found must be >= 0")

    def doc_ids(self) -> list[str]:
        return [r.doc_id for r in self.results]


NO_RESPONSE = SystemResponse(results=(), num_found=0, responded=False)


@dataclass(frozen=True)
class RemoteContract:
    """Where a live participant system listens."""

    base_url: str
    index_path: str = "/index"
    ranking_path: str = "/ranking"
    recommendation_path: str = "/recommendation"

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        for path in (self.index_path, self.ranking_path, self.recommendation_path):
            if not path:
                raise ValueError("contract paths must be non-empty")


class SystemAdapter(Protocol):
    descriptor: SystemDescriptor

    def index(self) -> bool: ...
    def ready(self) -> bool: ...
    def respond(self, request: str, page: int, rpp: int) -> SystemResponse: ...


def _normalize(request: str) -> str:
    return request.strip().casefold()


def precomputed_respond(
    run: RunFile,
    head_queries: Sequence[HeadQuery] | None,
    request: str,
    page: int,
    rpp: int,
) -> SystemResponse:
    """Answer from a run file.

    With head queries, the request string is matched exactly (after trim and
    case-fold) against qstr and translated to its qid; without them the
    request is matched against the run's own keys, which is how seed item ids
    work. Anything off that closed set is a non-response.
    """
    if page < 0:
        raise ValueError("page must be >= 0")
    if rpp < 1:
        raise ValueError("rpp must be >= 1")
    wanted = _normalize(request)
    key: str | None = None
    if head_queries is not None:
        for query in head_queries:
            if _normalize(query.qstr) == wanted:
                key = str(query.qid)
                break
    else:
        for run_key in run.entries:
            if _normalize(run_key) == wanted:
                key = run_key
                break
    if key is None or key not in run.entries:
        return NO_RESPONSE
    entries = run.entries[key]
    window = entries[page * rpp : page * rpp + rpp]
    return SystemResponse(results=tuple(window), num_found=len(entries), responded=True)


class PrecomputedSystem:
    """Type A participant: a run file restricted to head queries or seed items."""

    def __init__(
        self,
        descriptor: SystemDescriptor,
        run: RunFile,
        head_queries: Sequence[HeadQuery] | None = None,
    ) -> None:
        self.descriptor = descriptor
        self.run = run
        self.head_queries = list(head_queries) if head_queries is not None else None

    def index(self) -> bool:
        return True

    def ready(self) -> bool:
        return True

    def respond(self, request: str, page: int, rpp: int) -> SystemResponse:
        return precomputed_respond(self.run, self.head_queries, request, page, rpp)


class BuiltinRanker:
    """Reference BM25 ranking over an indexed corpus."""

    def __init__(
        self,
        descriptor: SystemDescriptor,
        index: InvertedIndex,
        params: Bm25Params = Bm25Params(),
    ) -> None:
        self.descriptor = descriptor
        self._index = index
        self._params = params

    def index(self) -> bool:
        return True

    def ready(self) -> bool:
        return True

    def respond(self, request: str, page: int, rpp: int) -> SystemResponse:
        full = bm25_rank(self._index, request, k=None, params=self._params)
        window = full[page * rpp : page * rpp + rpp]
        return SystemResponse(results=tuple(window), num_found=len(full), responded=True)


class BuiltinRecommender:
    """Reference recommender: BM25 over the target corpus, queried with the seed's title."""

    def __init__(
        self,
        descriptor: SystemDescriptor,
        seeds: Mapping[str, DocumentRecord],
        target_index: InvertedIndex,
        params: Bm25Params = Bm25Params(),
        title_fields: Sequence[str] = ("title", "title_en"),
    ) -> None:
        self.descriptor = descriptor
        self._seeds = {_normalize(doc_id): doc for doc_id, doc in seeds.items()}
        self._index = target_index
        self._params = params
        self._title_fields = tuple(title_fields)

    def index(self) -> bool:
        return True

    def ready(self) -> bool:
        return True

    def respond(self, request: str, page: int, rpp: int) -> SystemResponse:
        seed = self._seeds.get(_normalize(request))
        if seed is None:
            return NO_RESPONSE
        try:
            full = recommend_for_publication(
                self._index, seed, k=None, params=self._params, title_fields=self._title_fields
            )
        except ValueError as exc:
            logger.warning("%s: %s", self.descriptor.name, exc)
            return NO_RESPONSE
        window = full[page * rpp : page * rpp + rpp]
        return SystemResponse(results=tuple(window), num_found=len(full), responded=True)


class ProtocolError(ValueError):
    pass


def _parse_remote_body(body: object, page: int, rpp: int) -> SystemResponse:
    if not isinstance(body, dict):
        raise ProtocolError("response body is not an object")
    header = body.get("header")
    itemlist = body.get("itemlist")
    if not isinstance(header, dict) or not isinstance(itemlist, list):
        raise ProtocolError("response must carry a header object and an itemlist array")
    num_found = header.get("num_found", len(itemlist))
    if not isinstance(num_found, int) or num_found < 0:
        raise ProtocolError("header num_found must be a non-negative integer")
    seen: set[str] = set()
    results = []
    offset = page * rpp
    for position, doc in enumerate(itemlist, start=1):
        if not isinstance(doc, str) or not doc:
            raise ProtocolError(f"itemlist entry {position} is not a non-empty string")
        if doc in seen:
            raise ProtocolError(f"itemlist repeats document {doc!r}")
        seen.add(doc)
        results.append(RankedResult(doc_id=doc, rank=offset + position, score=0.0))
    return SystemResponse(results=tuple(results), num_found=num_found, responded=True)


def remote_respond(
    contract: RemoteContract,
    request: str,
    page: int,
    rpp: int,
    timeout: float = DEFAULT_REMOTE_TIMEOUT,
    task: TaskType = TaskType.RANKING,
    client: httpx.Client | None = None,
) -> SystemResponse:
    """Call a live system; every failure mode degrades to a non-response.

    Timeouts, transport errors, non-success statuses, and malformed bodies
    are logged and reported as ``responded = false`` so the caller can fall
    back to a baseline-only page instead of stalling the user.
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    owned = client is None
    client = client or httpx.Client()
    try:
        if task is TaskType.RANKING:
            url = contract.base_url.rstrip("/") + contract.ranking_path
            params: dict[str, object] = {"query": request, "page": page, "rpp": rpp}
        else:
            url = contract.base_url.rstrip("/") + contract.recommendation_path
            params = {"itemid": request, "page": page, "rpp": rpp}
        try:
            response = client.get(url, params=params, timeout=timeout)
        except httpx.HTTPError as exc:
            logger.warning("remote %s: %s", url, exc)
            return NO_RESPONSE
        if response.status_code != 200:
            logger.warning("remote %s: status %d", url, response.status_code)
            return NO_RESPONSE
        try:
            return _parse_remote_body(response.json(), page, rpp)
        except (ProtocolError, ValueError) as exc:
            logger.warning("remote %s: protocol error: %s", url, exc)
            return NO_RESPONSE
    finally:
        if owned:
            client.close()


class RemoteSystem:
    """Type B participant behind the HTTP contract, with an in-flight bound."""

    def __init__(
        self,
        descriptor: SystemDescriptor,
        contract: RemoteContract,
        task: TaskType | None = None,
        timeout: float = DEFAULT_REMOTE_TIMEOUT,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        client: httpx.Client | None = None,
    ) -> None:
        self.descriptor = descriptor
        self.contract = contract
        self.task = task if task is not None else descriptor.task
        self.timeout = timeout
        self._slots = threading.Semaphore(max_in_flight)
        self._client = client or httpx.Client()
        self._ready = False

    def index(self) -> bool:
        url = self.contract.base_url.rstrip("/") + self.contract.index_path
        try:
            response = self._client.post(url, timeout=self.timeout)
        except httpx.HTTPError as exc:
            logger.warning("remote index %s: %s", url, exc)
            self._ready = False
            return False
        self._ready = response.status_code == 200
        return self._ready

    def ready(self) -> bool:
        return self._ready

    def respond(self, request: str, page: int, rpp: int) -> SystemResponse:
        if not self._slots.acquire(timeout=self.timeout):
            logger.warning("%s: in-flight bound reached, skipping", self.descriptor.name)
            return NO_RESPONSE
        try:
            return remote_respond(
                self.contract,
                request,
                page,
                rpp,
                timeout=self.timeout,
                task=self.task,
                client=self._client,
            )
        finally:
            self._slots.release()


@dataclass(frozen=True)
class ProbeCheck:
    request: str
    passed: bool
    message: str


@dataclass(frozen=True)
class SanityReport:
    system: str
    passed: bool
    checks: tuple[ProbeCheck, ...]
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "passed": self.passed,
            "checks": [
                {"request": c.request, "passed": c.passed, "message": c.message}
                for c in self.checks
            ],
            "warnings": list(self.warnings),
        }


def sanity_check(
    adapter: SystemAdapter, probes: Sequence[str], page: int = 0, rpp: int = 10
) -> SanityReport:
    """Probe an adapter and verify each answer is a well-formed ranking.

    A probe fails on exceptions, duplicate documents, rank gaps, or
    non-finite scores. Non-responses are allowed (Type A systems only cover
    their head queries), but a system that answers no probe at all earns a
    warning.
    """
    if not probes:
        raise ValueError("at least one probe request is required")
    checks: list[ProbeCheck] = []
    responded_any = False
    for probe in probes:
        try:
            response = adapter.respond(probe, page, rpp)
        except Exception as exc:  # noqa: BLE001 - a probe must never crash the check
            checks.append(ProbeCheck(request=probe, passed=False, message=f"exception: {exc}"))
            continue
        if not response.responded:
            checks.append(ProbeCheck(request=probe, passed=True, message="no response"))
            continue
        responded_any = True
        message = "ok"
        passed = True
        seen: set[str] = set()
        previous_rank: int | None = None
        for result in response.results:
            if result.doc_id in seen:
                passed, message = False, f"duplicate document {result.doc_id!r}"
                break
            seen.add(result.doc_id)
            if previous_rank is not None and result.rank != previous_rank + 1:
                passed, message = False, f"rank gap: {previous_rank} then {result.rank}"
                break
            previous_rank = result.rank
            if not math.isfinite(result.score):
                passed, message = False, f"non-finite score at rank {result.rank}"
                break
        if passed and len(response.results) > rpp:
            passed, message = False, f"{len(response.results)} results exceed rpp={rpp}"
        checks.append(ProbeCheck(request=probe, passed=passed, message=message))
    warnings = () if responded_any else ("no responses observed",)
    return SanityReport(
        system=adapter.descriptor.name,
        passed=all(c.passed for c in checks),
        checks=tuple(checks),
        warnings=warnings,
    )
