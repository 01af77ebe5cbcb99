"""HTTP surface of the gateway.

Thin translation layer: pydantic models define the wire schema, endpoint
handlers delegate to the ``Gateway`` and map its errors onto status codes.
When a forwarding sink is configured, a background thread flushes the
feedback store on a fixed interval without blocking request handling.
"""
from __future__ import annotations

import logging
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .gateway import (
    BaselineUnavailable,
    Gateway,
    InvalidFeedback,
    PageResult,
    RequestInvalid,
    UnknownImpression,
)
from .model import TaskType

logger = logging.getLogger(__name__)


class WireContainer(BaseModel):
    exp: str | None
    base: str


class WireHeader(BaseModel):
    sid: str
    impression_id: str | None
    q: str | None = None
    itemid: str | None = None
    page: int
    rpp: int
    num_found: int
    container: WireContainer


class WireItem(BaseModel):
    docid: str
    type: str  # "EXP" | "BASE"


class WirePage(BaseModel):
    header: WireHeader
    body: list[WireItem]


class WireClick(BaseModel):
    docid: str
    element: str | None = None
    ts: float | None = None


class WireFeedback(BaseModel):
    impression_id: str
    clicks: list[WireClick] = Field(default_factory=list)


class WireAck(BaseModel):
    impression_id: str
    stored: int
    duplicates: int


class WireSystem(BaseModel):
    name: str
    kind: str
    task: str
    baseline: bool
    source: str | None = None


class WireHealth(BaseModel):
    status: str
    site: str
    systems: dict[str, bool]


def page_to_wire(result: PageResult) -> WirePage:
    header = WireHeader(
        sid=result.session_id,
        impression_id=result.impression_id,
        page=result.page,
        rpp=result.rpp,
        num_found=result.num_found,
        container=WireContainer(exp=result.exp_system, base=result.base_system),
    )
    if result.task is TaskType.RANKING:
        header.q = result.request
    else:
        header.itemid = result.request
    return WirePage(
        header=header,
        body=[WireItem(docid=e.doc_id, type=e.team.value) for e in result.entries],
    )


class _FlushLoop:
    def __init__(self, gateway: Gateway, interval: float) -> None:
        self._gateway = gateway
        self._interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="feedback-flush", daemon=True)

    def _run(self) -> None:
        while not self._stop.wait(self._interval):
            try:
                self._gateway.flush()
            except Exception as exc:  # noqa: BLE001 - flush errors must not kill the loop
                logger.warning("scheduled flush failed: %s", exc)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)


def create_app(gateway: Gateway) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        loop = None
        if gateway.has_sink and gateway.config.flush_interval > 0:
            loop = _FlushLoop(gateway, gateway.config.flush_interval)
            loop.start()
        yield
        if loop is not None:
            loop.stop()

    app = FastAPI(title="interlab gateway", lifespan=lifespan)

    @app.exception_handler(RequestInvalid)
    async def _invalid(request, exc):  # noqa: ANN001
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(InvalidFeedback)
    async def _bad_feedback(request, exc):  # noqa: ANN001
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(UnknownImpression)
    async def _unknown(request, exc):  # noqa: ANN001
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(BaselineUnavailable)
    async def _unavailable(request, exc):  # noqa: ANN001
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.get("/api/v1/ranking", response_model=WirePage)
    def ranking(
        q: str,
        site_user: str,
        page: int = 0,
        rpp: int | None = Query(default=None, ge=1),
        ts: float | None = None,
    ) -> WirePage:
        return page_to_wire(gateway.ranking_page(q, site_user, page=page, rpp=rpp, ts=ts))

    @app.get("/api/v1/recommendation/datasets", response_model=WirePage)
    def recommendation(
        itemid: str,
        site_user: str,
        page: int = 0,
        rpp: int | None = Query(default=None, ge=1),
        ts: float | None = None,
    ) -> WirePage:
        return page_to_wire(gateway.recommendation_page(itemid, site_user, page=page, rpp=rpp, ts=ts))

    @app.post("/api/v1/feedback", response_model=WireAck)
    def feedback(payload: WireFeedback) -> WireAck:
        ack = gateway.accept_feedback(
            payload.impression_id,
            [(click.docid, click.element, click.ts) for click in payload.clicks],
        )
        return WireAck(
            impression_id=ack.impression_id, stored=ack.stored, duplicates=ack.duplicates
        )

    @app.get("/api/v1/systems", response_model=list[WireSystem])
    def systems() -> list[WireSystem]:
        return [
            WireSystem(
                name=d.name,
                kind=d.kind.value,
                task=d.task.value,
                baseline=d.is_baseline,
                source=d.source,
            )
            for d in gateway.descriptors()
        ]

    @app.get("/api/v1/health", response_model=WireHealth)
    def health() -> WireHealth:
        return WireHealth(
            status="ready" if gateway.ready() else "starting",
            site=gateway.config.site,
            systems=gateway.system_readiness(),
        )

    return app
