"""HTTP edit service: submit jobs, poll status, fetch artifacts."""

from __future__ import annotations

import base64
import hashlib
import importlib.util
import json
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import ValidationError

from ..backends import BACKEND_NAMES
from ..backends.toy import ToyDenoiser
from ..errors import InvalidInputError
from ..imageio import decode_mask
from .config import Settings
from .models import (
    BackendInfo,
    CapabilitiesResponse,
    EditSubmission,
    JobProgress,
    JobStatusResponse,
    MaskDecodeResponse,
    SubmitResponse,
)
from .store import DONE, JobStore
from .worker import WorkerPool, build_edit_request


def _error(status: int, code: str, message: str, detail=None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )


def _status_payload(rec) -> JobStatusResponse:
    result_url = f"/v1/edits/{rec.id}/result" if rec.state == DONE else None
    config_url = f"/v1/edits/{rec.id}/config" if rec.state == DONE else None
    return JobStatusResponse(
        id=rec.id,
        state=rec.state,
        progress=JobProgress(step=rec.progress_step, total=rec.progress_total),
        created_at=rec.created_at,
        started_at=rec.started_at,
        finished_at=rec.finished_at,
        error=rec.error,
        result_url=result_url,
        config_url=config_url,
    )


def create_app(settings: Optional[Settings] = None) -> FastAPI:
    settings = settings or Settings.from_env()
    store = JobStore(settings.store_path)
    pool = WorkerPool(store, settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        store.recover_interrupted()
        for job_id in store.queued_ids():
            pool.enqueue(job_id)
        pool.start()
        yield
        pool.shutdown()

    app = FastAPI(title="maskedit edit service", lifespan=lifespan)
    app.state.settings = settings
    app.state.store = store
    app.state.pool = pool

    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(settings.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(InvalidInputError)
    async def _invalid_input(_req, exc: InvalidInputError):
        return _error(400, "invalid_request", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _request_validation(_req, exc: RequestValidationError):
        return _error(400, "invalid_request", "request validation failed", exc.errors())

    @app.get("/v1/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/v1/capabilities", response_model=CapabilitiesResponse)
    async def capabilities():
        backends = [BackendInfo(name="toy", available=True)]
        have_real = importlib.util.find_spec("diffusers") is not None
        backends.append(
            BackendInfo(
                name="ip2p",
                available=have_real,
                detail=None if have_real else "install maskedit[real] and fetch weights",
            )
        )
        reference = ToyDenoiser((8, 8))
        return CapabilitiesResponse(
            backends=backends,
            limits={"max_upload_bytes": settings.max_upload_bytes},
            workers=settings.workers,
            attention_sites=[
                {"site_id": s.site_id, "kind": s.kind, "resolution": list(s.resolution)}
                for s in reference.attention_sites
            ],
        )

    @app.post("/v1/edits", status_code=202, response_model=SubmitResponse)
    async def submit(
        request: Request,
        image: UploadFile = File(...),
        masks: list[UploadFile] = File(...),
        payload: str = Form(..., alias="request"),
    ):
        declared = request.headers.get("content-length")
        if declared and int(declared) > settings.max_upload_bytes:
            return _error(413, "payload_too_large", "request exceeds upload limit")
        image_bytes = await image.read()
        mask_bytes = [await m.read() for m in masks]
        total = len(image_bytes) + sum(len(b) for b in mask_bytes)
        if total > settings.max_upload_bytes:
            return _error(413, "payload_too_large", "uploaded files exceed upload limit")

        try:
            submission = EditSubmission.model_validate_json(payload)
        except ValidationError as e:
            return _error(400, "invalid_request", "bad request JSON", e.errors())

        backend_name = submission.config.backend or settings.backend
        if backend_name not in BACKEND_NAMES:
            return _error(400, "invalid_request", f"unknown backend {backend_name!r}")

        # full validation now so queued jobs cannot fail on malformed input
        build_edit_request(image_bytes, mask_bytes, submission)

        canonical = json.dumps(submission.model_dump(), sort_keys=True)
        fingerprint = hashlib.sha256(
            b"|".join(
                [hashlib.sha256(image_bytes).digest()]
                + [hashlib.sha256(b).digest() for b in mask_bytes]
                + [canonical.encode(), backend_name.encode()]
            )
        ).hexdigest()
        existing = store.find_fingerprint(fingerprint, settings.idempotency_ttl_s)
        if existing is not None:
            return SubmitResponse(id=existing.id, state=existing.state)

        record = store.create(
            request={
                "image_blob": store.put_blob(image_bytes),
                "mask_blobs": [store.put_blob(b) for b in mask_bytes],
                "submission": submission.model_dump(),
                "backend": backend_name,
                "config": submission.config.model_dump(),
            },
            fingerprint=fingerprint,
        )
        pool.enqueue(record.id)
        return SubmitResponse(id=record.id, state=record.state)

    @app.get("/v1/edits/{job_id}", response_model=JobStatusResponse)
    async def status(job_id: str):
        rec = store.get(job_id)
        if rec is None:
            return _error(404, "not_found", f"no job {job_id!r}")
        return _status_payload(rec)

    @app.get("/v1/edits/{job_id}/result")
    async def result(job_id: str):
        rec = store.get(job_id)
        if rec is None:
            return _error(404, "not_found", f"no job {job_id!r}")
        if rec.state != DONE:
            return _error(
                409, "not_done", f"job is {rec.state}", {"error": rec.error}
            )
        return FileResponse(
            store.blob_path(rec.result_blob), media_type="image/png", filename=f"{job_id}.png"
        )

    @app.get("/v1/edits/{job_id}/config")
    async def result_config(job_id: str):
        rec = store.get(job_id)
        if rec is None:
            return _error(404, "not_found", f"no job {job_id!r}")
        if rec.state != DONE:
            return _error(409, "not_done", f"job is {rec.state}", {"error": rec.error})
        return JSONResponse(content=json.loads(store.get_blob(rec.config_blob)))

    @app.post("/v1/masks/decode", response_model=MaskDecodeResponse)
    async def mask_decode(mask: UploadFile = File(...)):
        data = await mask.read()
        if len(data) > settings.max_upload_bytes:
            return _error(413, "payload_too_large", "mask exceeds upload limit")
        raster = decode_mask(data)
        return MaskDecodeResponse(
            width=raster.shape[1],
            height=raster.shape[0],
            pixels_base64=base64.b64encode(raster.astype("uint8").tobytes()).decode(),
        )

    if settings.ui_dist is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=settings.ui_dist, html=True), name="ui")

    return app
