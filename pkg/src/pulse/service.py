"""HTTP + WebSocket front door.

Every request except /healthz needs a bearer token (Authorization header
or ?token= for tile/WS URLs). Errors use one JSON envelope:
{"error": {"code": ..., "message": ...}}. Handlers never block on worker
execution; jobs are submitted asynchronously and observed via polling or
the per-project WS event stream.
"""

from __future__ import annotations

import asyncio
import json
import threading
from contextlib import asynccontextmanager

from fastapi import Depends, FastAPI, Request, Response, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pathlib import Path
from starlette.websockets import WebSocket, WebSocketDisconnect

from . import geo
from .annotations import Correction
from .config import ServiceConfig
from .errors import (AuthError, InvalidPayloadError, PulseError, ValidationError)
from .orchestrator import JOB_KINDS
from .platform import Platform
from .worker import ReferenceWorker

WS_POLL_SECONDS = 0.02


def error_response(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}},
                        status_code=status)


def _token_of(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[7:].strip()
    return request.query_params.get("token")


def create_app(platform: Platform, tokens: dict[str, str],
               config: ServiceConfig | None = None,
               start_worker: bool = False,
               static_dir: str | None = None) -> FastAPI:
    config = config or ServiceConfig()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if start_worker:
            app.state.worker = ReferenceWorker(
                platform, poll_interval=min(config.heartbeat_interval, 0.5))
            app.state.worker.start()

        def sweep_loop():
            while not app.state.sweeper_stop.wait(config.sweep_interval):
                try:
                    platform.queue.heartbeat_sweep()
                except Exception:
                    pass

        app.state.sweeper = threading.Thread(target=sweep_loop, daemon=True)
        app.state.sweeper.start()
        yield
        app.state.sweeper_stop.set()
        if app.state.worker is not None:
            app.state.worker.stop()

    app = FastAPI(title="pulse", docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.platform = platform
    app.state.tokens = dict(tokens)
    app.state.worker = None
    app.state.sweeper_stop = threading.Event()

    def auth(request: Request) -> str:
        token = _token_of(request)
        user = app.state.tokens.get(token or "")
        if user is None:
            raise AuthError("missing or unknown token")
        return user

    @app.exception_handler(PulseError)
    async def pulse_error_handler(_req, exc: PulseError):
        return error_response(exc.code, str(exc), exc.http_status)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_req, exc: RequestValidationError):
        return error_response("invalid-payload", str(exc.errors()[:2]), 422)

    # -- health --------------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    # -- projects --------------------------------------------------------------

    @app.post("/api/projects", status_code=201)
    def create_project(body: dict, user: str = Depends(auth)):
        name = body.get("name")
        if not name:
            raise InvalidPayloadError("project needs a name")
        members = body.get("members") or [user]
        return platform.create_project(name, members)

    @app.get("/api/projects/{project_id}")
    def get_project(project_id: str, user: str = Depends(auth)):
        return platform.get_project(project_id)

    @app.post("/api/projects/{project_id}/rasters", status_code=201)
    async def upload_raster(project_id: str, request: Request,
                            image: UploadFile, sidecar: UploadFile | None = None,
                            user: str = Depends(auth)):
        platform.get_project(project_id)
        declared = request.headers.get("content-length")
        if declared and int(declared) > config.upload_limit_bytes:
            raise ValidationError("upload exceeds the 512 MB limit")
        png = await image.read()
        if len(png) > config.upload_limit_bytes:
            raise ValidationError("upload exceeds the 512 MB limit")
        if sidecar is not None:
            sidecar_raw = await sidecar.read()
        else:
            form = await request.form()
            sidecar_raw = form.get("sidecar_json")
            if sidecar_raw is None:
                raise InvalidPayloadError("missing sidecar (file or sidecar_json field)")
        raster = platform.rasters.ingest(png, sidecar_raw, project_id=project_id)
        platform.attach_raster(project_id, raster.id)
        platform.publish_raster_event("raster.ingested", {"raster": raster.meta()},
                                      raster.id)
        job = platform.submit_job("tile_pyramid", {"raster_id": raster.id,
                                                   "resampling": config.resampling})
        return {**raster.meta(), "pyramid_job_id": job.id}

    @app.get("/api/rasters/{raster_id}")
    def get_raster(raster_id: str, user: str = Depends(auth)):
        return platform.rasters.meta(raster_id)

    @app.get("/api/rasters/{raster_id}/data.npy")
    def get_raster_data(raster_id: str, user: str = Depends(auth)):
        platform.rasters.meta(raster_id)
        blob = platform.store.blobs.get(f"rasters/{raster_id}.npy")
        return Response(content=blob, media_type="application/octet-stream")

    @app.get("/tiles/{raster_id}/{z}/{x}/{y}.png")
    def get_tile(raster_id: str, z: int, x: int, y: int, user: str = Depends(auth)):
        png = platform.rasters.get_display_tile(raster_id, geo.TileAddress(z, x, y))
        return Response(content=png, media_type="image/png",
                        headers={"Cache-Control": "no-cache"})

    # -- models -------------------------------------------------------------------

    @app.get("/api/models")
    def list_models(task: str | None = None, user: str = Depends(auth)):
        return {"models": platform.models.model_tree(task=task)}

    @app.post("/api/models", status_code=201)
    def create_model(body: dict, user: str = Depends(auth)):
        for key in ("name", "task", "params"):
            if key not in body:
                raise InvalidPayloadError(f"model needs {key}")
        node = platform.models.create_model(
            name=body["name"], task=body["task"], params=body["params"],
            parent_id=body.get("parent_id"))
        return node.to_dict()

    @app.get("/api/models/{model_id}")
    def get_model(model_id: str, user: str = Depends(auth)):
        return platform.models.get(model_id).to_dict()

    @app.delete("/api/models/{model_id}")
    def delete_model(model_id: str, user: str = Depends(auth)):
        platform.models.delete(model_id)
        return {"deleted": model_id}

    @app.get("/api/models/{model_id}/adaptation")
    def get_model_adaptation(model_id: str, user: str = Depends(auth)):
        node = platform.models.get(model_id)
        if not node.created_from:
            raise InvalidPayloadError(f"model {model_id!r} was not adapted")
        return platform.models.get_adaptation(node.created_from)

    # -- detection sets -------------------------------------------------------------

    @app.post("/api/sets", status_code=201)
    def create_set(body: dict, user: str = Depends(auth)):
        if "raster_id" not in body:
            raise InvalidPayloadError("set needs raster_id")
        data = platform.annotations.create_set(body["raster_id"],
                                               model_id=body.get("model_id"))
        project_id = platform.project_id_for_raster(body["raster_id"])
        if project_id:
            platform.attach_set(project_id, data["id"])
        return data

    @app.get("/api/sets/{set_id}")
    def get_set(set_id: str, user: str = Depends(auth)):
        data = platform.annotations.get_set(set_id)
        reviewed = platform.annotations.reviewed_fraction(set_id)
        return {**data, "reviewed_fraction": reviewed}

    @app.get("/api/sets/{set_id}/features")
    def list_features(set_id: str, states: str | None = None,
                      tile: str | None = None, user: str = Depends(auth)):
        tile_index = None
        if tile:
            c, r = tile.split(",")
            tile_index = (int(c), int(r))
        wanted = states.split(",") if states else None
        feats = platform.annotations.features(set_id, states=wanted,
                                              tile_index=tile_index)
        return {"features": [f.to_dict() for f in feats]}

    @app.post("/api/sets/{set_id}/features", status_code=201)
    def add_features(set_id: str, body: dict, user: str = Depends(auth)):
        items = body.get("features")
        if not isinstance(items, list):
            raise InvalidPayloadError("body must carry a features list")
        created = []
        for item in items:
            rings = [item["geometry"]] if "geometry" in item else []
            if not rings:
                raise InvalidPayloadError("each feature needs a geometry ring")
            created.extend(platform.annotations.add_features(
                set_id, rings,
                source=item.get("source", "analyst"),
                state=item.get("state", "added"),
                user=user,
                classification=item.get("classification")))
        return {"features": [f.to_dict() for f in created]}

    @app.post("/api/sets/{set_id}/corrections", status_code=201)
    def post_correction(set_id: str, body: dict, user: str = Depends(auth)):
        correction = Correction.from_dict({**body, "user": user})
        feature = platform.annotations.apply_correction(set_id, correction)
        return feature.to_dict()

    @app.post("/api/sets/{set_id}/tiles/{col}/{row}/reviewed")
    def mark_reviewed(set_id: str, col: int, row: int, user: str = Depends(auth)):
        status = platform.annotations.mark_tile_reviewed(set_id, (col, row))
        return {"set_id": set_id, "tile": [col, row], "status": status,
                "reviewed_fraction": platform.annotations.reviewed_fraction(set_id)}

    @app.get("/api/sets/{set_id}/export.geojson")
    def export_geojson(set_id: str, states: str | None = None,
                       user: str = Depends(auth)):
        wanted = states.split(",") if states else None
        return platform.annotations.export_geojson(set_id, states=wanted)

    @app.post("/api/sets/{set_id}/import", status_code=201)
    def import_geojson(set_id: str, body: dict, state: str = "added",
                       user: str = Depends(auth)):
        feats = platform.annotations.import_geojson(set_id, body, state=state,
                                                    user=user)
        return {"features": [f.to_dict() for f in feats]}

    @app.post("/api/sets/{set_id}/merge-borders")
    def merge_borders(set_id: str, user: str = Depends(auth)):
        return {"merged": platform.annotations.merge_border_features(set_id)}

    @app.post("/api/sets/{set_id}/mask")
    async def upload_mask(set_id: str, request: Request, user: str = Depends(auth)):
        platform.annotations.get_set(set_id)
        raw = await request.body()
        if len(raw) > config.upload_limit_bytes:
            raise ValidationError("mask exceeds the upload limit")
        key = f"masks/{set_id}.npy"
        platform.store.blobs.put(key, raw)
        platform.annotations.set_mask_key(set_id, key)
        return {"mask_key": key}

    # -- evaluation --------------------------------------------------------------------

    @app.get("/api/evaluate")
    def evaluate(set: str, truth: str, mode: str = "objects", iou: float = 0.5,
                 tiles: str = "all", review_set: str | None = None,
                 exclude_tiles: str | None = None, user: str = Depends(auth)):
        excludes = None
        if exclude_tiles:
            excludes = []
            for part in exclude_tiles.split(";"):
                c, r = part.split(",")
                excludes.append((int(c), int(r)))
        report = platform.evaluate(set_id=set, truth_set_id=truth, mode=mode,
                                   iou_threshold=iou, tiles=tiles,
                                   review_set=review_set, exclude_tiles=excludes)
        return report.to_dict()

    # -- jobs ---------------------------------------------------------------------------

    @app.post("/api/jobs", status_code=201)
    def submit_job(body: dict, user: str = Depends(auth)):
        kind = body.get("kind")
        if kind not in JOB_KINDS:
            raise InvalidPayloadError(f"kind must be one of {JOB_KINDS}")
        job = platform.submit_job(kind, body.get("payload") or {})
        return job.to_public()

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str, user: str = Depends(auth)):
        return platform.queue.get(job_id).to_public()

    @app.post("/api/jobs/{job_id}/cancel")
    def cancel_job(job_id: str, user: str = Depends(auth)):
        return platform.queue.cancel(job_id).to_public()

    @app.get("/api/jobs")
    def list_jobs(state: str | None = None, kind: str | None = None,
                  user: str = Depends(auth)):
        return {"jobs": [j.to_public() for j in platform.queue.jobs(state=state,
                                                                    kind=kind)]}

    # -- collaborator event stream ---------------------------------------------------------

    @app.websocket("/ws")
    async def client_ws(ws: WebSocket):
        token = ws.query_params.get("token")
        project_id = ws.query_params.get("project")
        user = app.state.tokens.get(token or "")
        if user is None or not project_id:
            await ws.close(code=1008)
            return
        try:
            platform.get_project(project_id)
        except PulseError:
            await ws.close(code=1008)
            return
        topic = f"project.{project_id}"
        after = ws.query_params.get("after")
        cursor = int(after) if after is not None else platform.store.events.last_seq(topic)
        await ws.accept()
        try:
            while True:
                events = platform.store.events.read(topic, after_seq=cursor)
                for event in events:
                    await ws.send_json(event.to_json())
                    cursor = event.seq
                if not events:
                    # Drain control frames so disconnects surface promptly.
                    try:
                        await asyncio.wait_for(ws.receive_text(),
                                               timeout=WS_POLL_SECONDS)
                    except asyncio.TimeoutError:
                        pass
        except (WebSocketDisconnect, RuntimeError):
            return

    # -- worker channel ----------------------------------------------------------------------

    @app.websocket("/ws/worker")
    async def worker_ws(ws: WebSocket):
        token = ws.query_params.get("token")
        if app.state.tokens.get(token or "") is None:
            await ws.close(code=1008)
            return
        await ws.accept()
        queue = platform.queue
        worker_id = None
        try:
            first = json.loads(await ws.receive_text())
            if first.get("type") != "register":
                await ws.send_text(json.dumps(
                    {"type": "error", "message": "first message must be register"}))
                await ws.close(code=1002)
                return
            worker_id = first["worker_id"]
            queue.register_worker(worker_id, first.get("capabilities") or [])
            await ws.send_text(json.dumps({"type": "registered",
                                           "worker_id": worker_id}))
            while True:
                try:
                    raw = await asyncio.wait_for(ws.receive_text(), timeout=0.05)
                except asyncio.TimeoutError:
                    raw = None
                if raw is not None:
                    msg = json.loads(raw)
                    mtype = msg.get("type")
                    if mtype == "heartbeat":
                        queue.heartbeat(worker_id)
                    elif mtype == "progress":
                        job = queue.get(msg["job_id"])
                        if job.assigned_worker == worker_id and job.current_attempt:
                            queue.report_progress(msg["job_id"], worker_id,
                                                  job.current_attempt,
                                                  float(msg.get("fraction", 0.0)))
                    elif mtype == "result":
                        accepted = queue.complete(msg["job_id"], worker_id,
                                                  int(msg["attempt"]),
                                                  msg.get("payload"))
                        await ws.send_text(json.dumps(
                            {"type": "ack", "job_id": msg["job_id"],
                             "accepted": accepted}))
                    elif mtype == "error":
                        queue.fail_attempt(msg["job_id"], worker_id,
                                           int(msg["attempt"]),
                                           str(msg.get("message", "worker error")))
                    else:
                        await ws.send_text(json.dumps(
                            {"type": "error", "message": f"unknown type {mtype!r}"}))
                session = queue.session(worker_id)
                if session is not None and not session.in_flight:
                    job = queue.assign_next(worker_id)
                    if job is not None:
                        await ws.send_text(json.dumps(
                            {"type": "assign", "job": job.to_public()}))
        except (WebSocketDisconnect, RuntimeError):
            pass
        except (KeyError, ValueError, json.JSONDecodeError):
            try:
                await ws.close(code=1002)
            except RuntimeError:
                pass
        finally:
            if worker_id is not None:
                queue.mark_worker_dead(worker_id)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
