"""Out-of-process worker client speaking the orchestrator WS protocol.

The wire protocol carries newline-delimited JSON messages (one per WS text
frame): register, assign, heartbeat, progress, result, error. This client
executes the wire-executable kinds (infer, adapt) by fetching inputs over
the HTTP API; pyramid and evaluation jobs stay with the in-process worker
that lives next to the blob store.
"""

from __future__ import annotations

import asyncio
import io
import json
import uuid
from types import SimpleNamespace

import httpx
import numpy as np
import websockets

from .adapt import AdaptSearchSpace, adapt
from .detector import DetectorParams, to_grayscale_u8
from .errors import ValidationError
from .worker import (WIRE_CAPABILITIES, detect_raster_tiles,
                     training_tiles_from_ground_truth)


class WireWorker:
    def __init__(self, server_url: str, token: str, worker_id: str | None = None,
                 capabilities=WIRE_CAPABILITIES, heartbeat_interval: float = 10.0,
                 reconnect_backoff: float = 1.0):
        self.server_url = server_url.rstrip("/")
        self.token = token
        self.worker_id = worker_id or f"wire-{uuid.uuid4().hex[:8]}"
        self.capabilities = tuple(capabilities)
        unsupported = set(self.capabilities) - set(WIRE_CAPABILITIES)
        if unsupported:
            raise ValidationError(
                f"kinds {sorted(unsupported)} are not wire-executable")
        self.heartbeat_interval = heartbeat_interval
        self.reconnect_backoff = reconnect_backoff
        self._http = httpx.Client(
            base_url=self._http_base(),
            headers={"Authorization": f"Bearer {token}"}, timeout=60.0)

    def _http_base(self) -> str:
        url = self.server_url
        for ws_scheme, http_scheme in (("wss://", "https://"), ("ws://", "http://")):
            if url.startswith(ws_scheme):
                url = http_scheme + url[len(ws_scheme):]
        return url.split("/ws")[0]

    def _ws_url(self) -> str:
        url = self.server_url
        if not url.endswith("/ws/worker"):
            url = url + "/ws/worker"
        return f"{url}?token={self.token}"

    # -- API fetch helpers -------------------------------------------------

    def _get_json(self, path: str) -> dict:
        resp = self._http.get(path)
        resp.raise_for_status()
        return resp.json()

    def _fetch_gray(self, raster_id: str) -> np.ndarray:
        resp = self._http.get(f"/api/rasters/{raster_id}/data.npy")
        resp.raise_for_status()
        return to_grayscale_u8(np.load(io.BytesIO(resp.content)))

    # -- job execution -------------------------------------------------------

    def execute(self, job: dict) -> dict:
        kind, payload = job["kind"], job["payload"]
        if kind == "infer":
            return self._execute_infer(job["id"], payload)
        if kind == "adapt":
            return self._execute_adapt(payload)
        raise ValidationError(f"kind {kind!r} is not wire-executable")

    def _execute_infer(self, job_id: str, payload: dict) -> dict:
        model = self._get_json(f"/api/models/{payload['model_id']}")
        if model["task"] != "structures":
            raise ValidationError("wire workers only run structure inference")
        params = DetectorParams.from_dict(model["params"])
        gray = self._fetch_gray(payload["raster_id"])
        tiles = detect_raster_tiles(gray, params, raster_id=payload["raster_id"])
        return {"mode": "structures",
                "set_id": payload.get("set_id") or f"set-{job_id}",
                "tiles": tiles}

    def _execute_adapt(self, payload: dict) -> dict:
        parent = self._get_json(f"/api/models/{payload['parent_model_id']}")
        set_data = self._get_json(f"/api/sets/{payload['set_id']}")
        feats = self._get_json(
            f"/api/sets/{payload['set_id']}/features?states=accepted,added")
        reviewed = {tuple(int(v) for v in key.split(","))
                    for key, tile in set_data["tiles"].items()
                    if tile["review"] == "reviewed"}
        gt_map: dict[tuple[int, int], list] = {t: [] for t in reviewed}
        for f in feats["features"]:
            index = (f["tile_index"][0], f["tile_index"][1])
            if index in reviewed:
                gt_map[index].append(SimpleNamespace(
                    geometry=[(x, y) for x, y in f["geometry"]]))
        gray = self._fetch_gray(set_data["raster_id"])
        tiles, tile_ids = training_tiles_from_ground_truth(gray, gt_map)
        space = (AdaptSearchSpace.from_dict(payload["search_space"])
                 if payload.get("search_space") else None)
        outcome = adapt(DetectorParams.from_dict(parent["params"]), tiles, space)
        return {
            "parent_model_id": parent["id"],
            "set_id": payload["set_id"],
            "name": payload.get("name"),
            "corrected_tiles": tile_ids,
            "selected_params": outcome.selected.to_dict(),
            "search_log": [[p.to_dict(), f1] for p, f1 in outcome.search_log],
            "before_f1": outcome.before_f1,
            "after_f1": outcome.after_f1,
            "before_metrics": outcome.before_report.to_dict(),
            "after_metrics": outcome.after_report.to_dict(),
        }

    # -- protocol loop -----------------------------------------------------------

    async def run(self, stop: asyncio.Event | None = None):
        """Register, heartbeat, execute assignments; reconnect with backoff."""
        stop = stop or asyncio.Event()
        backoff = self.reconnect_backoff
        while not stop.is_set():
            try:
                async with websockets.connect(self._ws_url()) as ws:
                    backoff = self.reconnect_backoff
                    await self._session(ws, stop)
            except (OSError, websockets.WebSocketException):
                if stop.is_set():
                    break
                await asyncio.sleep(backoff)
                backoff = min(backoff * 2, 30.0)

    async def _session(self, ws, stop: asyncio.Event):
        await ws.send(json.dumps({"type": "register", "worker_id": self.worker_id,
                                  "capabilities": list(self.capabilities)}))

        async def heartbeats():
            while True:
                await asyncio.sleep(self.heartbeat_interval)
                await ws.send(json.dumps({"type": "heartbeat"}))

        beat = asyncio.create_task(heartbeats())
        try:
            while not stop.is_set():
                raw = await ws.recv()
                msg = json.loads(raw)
                if msg.get("type") != "assign":
                    continue
                job = msg["job"]
                attempt = job["current_attempt"]
                try:
                    result = await asyncio.to_thread(self.execute, job)
                except Exception as exc:
                    await ws.send(json.dumps({
                        "type": "error", "job_id": job["id"],
                        "attempt": attempt, "message": repr(exc)}))
                    continue
                await ws.send(json.dumps({
                    "type": "result", "job_id": job["id"],
                    "attempt": attempt, "payload": result}))
        finally:
            beat.cancel()
