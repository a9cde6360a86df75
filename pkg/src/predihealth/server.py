"""REST and WebSocket API over the monitoring service.

Device traffic enters at /v1/ingest (single message or batch); the
clinician console consumes the stratification queue, patient scores,
alerts, the alert WebSocket stream, and the FHIR export endpoint.
"""

from __future__ import annotations

import asyncio
import json
import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from typing import Any, Optional

from fastapi import Depends, FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .fhir import FhirError
from .gateway import AuthFailed, GatewayError
from .model import (
    InvalidTransition,
    ModelError,
    parse_rfc3339,
    patient_from_json,
    patient_to_json,
)
from .rules import AlertEvent, AlertState, RuleError
from .service import MonitoringService, UnknownPatientError

logger = logging.getLogger(__name__)

_STATUS_BY_CODE = {
    "auth_failed": 401,
    "patient_not_enrolled": 409,
    "duplicate_binding": 409,
    "bad_state": 409,
    "invalid_transition": 409,
    "not_found": 404,
    "unknown_patient": 404,
    "unmapped_metric": 400,
}


def _error_response(exc: Exception) -> JSONResponse:
    code = getattr(exc, "code", "internal_error")
    status = _STATUS_BY_CODE.get(code, 400)
    return JSONResponse(status_code=status, content={"error": code, "detail": str(exc)})


class AlertBroadcaster:
    """Fans alert events from worker threads out to WebSocket subscribers."""

    def __init__(self) -> None:
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._queues: set[asyncio.Queue] = set()

    def bind_loop(self, loop: asyncio.AbstractEventLoop) -> None:
        self._loop = loop

    def subscribe(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue()
        self._queues.add(queue)
        return queue

    def unsubscribe(self, queue: asyncio.Queue) -> None:
        self._queues.discard(queue)

    def publish(self, alert: AlertEvent) -> None:
        loop = self._loop
        if loop is None or loop.is_closed():
            return
        payload = alert.to_json()
        for queue in list(self._queues):
            loop.call_soon_threadsafe(queue.put_nowait, payload)


def create_app(service: MonitoringService, api_token: Optional[str] = None,
               static_dir: Optional[str] = None) -> FastAPI:
    broadcaster = AlertBroadcaster()
    service.alerts.add_listener(broadcaster.publish)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        broadcaster.bind_loop(asyncio.get_running_loop())
        yield

    app = FastAPI(title="predihealth", version="0.1.0", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def require_token(request: Request) -> None:
        if api_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {api_token}":
            raise AuthFailed("missing or invalid API token")

    clinician = Depends(require_token)

    @app.exception_handler(GatewayError)
    @app.exception_handler(RuleError)
    @app.exception_handler(ModelError)
    @app.exception_handler(FhirError)
    @app.exception_handler(UnknownPatientError)
    async def _domain_error(request: Request, exc: Exception) -> JSONResponse:
        return _error_response(exc)

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    # -- ingestion ---------------------------------------------------------

    @app.post("/v1/ingest")
    async def ingest(request: Request) -> dict[str, Any]:
        body = await request.body()
        ack = service.gateway.ingest_raw(body)
        return {"seq": ack.seq, "duplicate": ack.duplicate}

    @app.post("/v1/ingest/batch")
    async def ingest_batch(request: Request) -> dict[str, Any]:
        body = await request.body()
        try:
            items = json.loads(body)
        except ValueError:
            return JSONResponse(status_code=400, content={"error": "malformed_json",
                                                          "detail": "body must be a JSON array"})
        if not isinstance(items, list):
            return JSONResponse(status_code=400, content={"error": "malformed_json",
                                                          "detail": "body must be a JSON array"})
        results = []
        for index, item in enumerate(items):
            try:
                ack = service.gateway.ingest_raw(item)
                results.append({"index": index, "ok": True, "seq": ack.seq,
                                "duplicate": ack.duplicate})
            except (GatewayError, ModelError) as exc:
                results.append({"index": index, "ok": False,
                                "error": getattr(exc, "code", "error"),
                                "detail": str(exc)})
        return {"results": results}

    # -- patients and stratification ----------------------------------------

    @app.get("/v1/patients", dependencies=[clinician])
    def list_patients() -> list[dict[str, Any]]:
        return [patient_to_json(p) for p in service.patients.list()]

    @app.post("/v1/patients", dependencies=[clinician])
    async def import_patient(request: Request) -> dict[str, Any]:
        record = patient_from_json(await request.json())
        added = service.patients.seed([record])
        return {"patient_id": record.patient_id, "imported": bool(added)}

    @app.get("/v1/patients/{patient_id}", dependencies=[clinician])
    def get_patient(patient_id: str) -> dict[str, Any]:
        record = service.patients.require(patient_id)
        score = service.latest_score(patient_id)
        return {"patient": patient_to_json(record), "score": score.to_json()}

    @app.get("/v1/patients/{patient_id}/score", dependencies=[clinician])
    def get_score(patient_id: str) -> dict[str, Any]:
        return service.latest_score(patient_id).to_json()

    @app.post("/v1/patients/{patient_id}/enroll", dependencies=[clinician])
    def enroll(patient_id: str) -> dict[str, Any]:
        try:
            return patient_to_json(service.enroll(patient_id))
        except InvalidTransition as exc:
            return _error_response(exc)

    @app.post("/v1/patients/{patient_id}/decline", dependencies=[clinician])
    def decline(patient_id: str) -> dict[str, Any]:
        try:
            return patient_to_json(service.decline(patient_id))
        except InvalidTransition as exc:
            return _error_response(exc)

    @app.get("/v1/stratify/queue", dependencies=[clinician])
    def stratify_queue() -> list[dict[str, Any]]:
        return service.stratify_queue()

    @app.post("/v1/devices", dependencies=[clinician])
    async def register_device(request: Request) -> dict[str, str]:
        data = await request.json()
        device_id, token = service.register_device(
            str(data.get("kind", "")),
            str(data.get("patient_id", "")),
            replace=bool(data.get("replace", False)),
        )
        return {"device_id": device_id, "token": token}

    # -- alerts --------------------------------------------------------------

    @app.get("/v1/alerts", dependencies=[clinician])
    def list_alerts(state: Optional[str] = None) -> list[dict[str, Any]]:
        parsed = None
        if state is not None:
            parsed = AlertState(state.capitalize())
        return [a.to_json() for a in service.alerts.list_alerts(parsed)]

    @app.post("/v1/alerts/{alert_id}/ack", dependencies=[clinician])
    async def ack_alert(alert_id: str, request: Request) -> dict[str, Any]:
        body = await request.body()
        clinician_id = "unknown"
        if body:
            try:
                clinician_id = str(json.loads(body).get("clinician_id", "unknown"))
            except ValueError:
                pass
        return service.alerts.ack_alert(alert_id, clinician_id).to_json()

    @app.post("/v1/alerts/{alert_id}/resolve", dependencies=[clinician])
    def resolve_alert(alert_id: str) -> dict[str, Any]:
        return service.alerts.resolve_alert(alert_id).to_json()

    @app.websocket("/v1/stream/alerts")
    async def stream_alerts(websocket: WebSocket) -> None:
        await websocket.accept()
        broadcaster.bind_loop(asyncio.get_running_loop())
        queue = broadcaster.subscribe()
        try:
            while True:
                payload = await queue.get()
                await websocket.send_json(payload)
        except WebSocketDisconnect:
            pass
        finally:
            broadcaster.unsubscribe(queue)

    # -- FHIR ----------------------------------------------------------------

    @app.get("/v1/fhir/patients/{patient_id}/observations", dependencies=[clinician])
    def fhir_observations(
        patient_id: str,
        window_from: Optional[str] = Query(default=None, alias="from"),
        window_to: Optional[str] = Query(default=None, alias="to"),
    ) -> dict[str, Any]:
        t0 = parse_rfc3339(window_from) if window_from else datetime(1970, 1, 1, tzinfo=timezone.utc)
        t1 = parse_rfc3339(window_to) if window_to else datetime.now(timezone.utc)
        return service.export_patient_bundle(patient_id, t0, t1)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
