"""Worker protocol client: register, heartbeat, execute infer jobs.

Speaks the platform's worker WebSocket channel (JSON messages: register /
assign / heartbeat / progress / result / error) and fetches raster pixels
and model parameters over the HTTP API. One job at a time; heartbeats run
on a timer independent of job execution; connection loss triggers
reconnection with exponential backoff and any in-flight job is recovered
by the server's heartbeat sweep.
"""

from __future__ import annotations

import asyncio
import io
import json
import math
import uuid

import httpx
import numpy as np
import websockets

from .detector import Ring, detect_tile, to_grayscale

ANALYSIS_TILE = 300


class WorkerConfig:
    def __init__(self, server_url: str, token: str, worker_id: str | None = None,
                 capabilities: tuple[str, ...] = ("infer",),
                 params_override: dict | None = None,
                 heartbeat_interval: float = 10.0,
                 reconnect_backoff: float = 1.0):
        if not capabilities:
            raise ValueError("capabilities must be non-empty")
        unsupported = set(capabilities) - {"infer"}
        if unsupported:
            raise ValueError(f"this example only implements infer, not {sorted(unsupported)}")
        self.server_url = server_url.rstrip("/")
        self.token = token
        self.worker_id = worker_id or f"example-{uuid.uuid4().hex[:8]}"
        self.capabilities = capabilities
        self.params_override = params_override
        self.heartbeat_interval = heartbeat_interval
        self.reconnect_backoff = reconnect_backoff


def partition_windows(width: int, height: int) -> list[tuple[tuple[int, int],
                                                             tuple[int, int, int, int]]]:
    """Row-major (index, window) pairs of the 300x300 analysis grid."""
    out = []
    for r in range(math.ceil(height / ANALYSIS_TILE)):
        for c in range(math.ceil(width / ANALYSIS_TILE)):
            x0, y0 = c * ANALYSIS_TILE, r * ANALYSIS_TILE
            out.append(((c, r), (x0, y0, min(ANALYSIS_TILE, width - x0),
                                 min(ANALYSIS_TILE, height - y0))))
    return out


def infer_tiles(gray: np.ndarray, params: dict) -> list[dict]:
    """Detection payload for every analysis tile, reference-compatible."""
    height, width = gray.shape
    entries = []
    for index, (x0, y0, w, h) in partition_windows(width, height):
        padded = np.zeros((ANALYSIS_TILE, ANALYSIS_TILE), dtype=gray.dtype)
        padded[:h, :w] = gray[y0:y0 + h, x0:x0 + w]
        rings = detect_tile(padded, params)
        entries.append({
            "index": [index[0], index[1]],
            "polygons": [[[float(x), float(y)] for x, y in ring] for ring in rings],
        })
    return entries


class ExampleWorker:
    def __init__(self, config: WorkerConfig):
        self.config = config
        self._http = httpx.Client(
            base_url=self._http_base(),
            headers={"Authorization": f"Bearer {config.token}"}, timeout=60.0)

    def _http_base(self) -> str:
        url = self.config.server_url
        for ws_scheme, http_scheme in (("wss://", "https://"), ("ws://", "http://")):
            if url.startswith(ws_scheme):
                url = http_scheme + url[len(ws_scheme):]
        return url.split("/ws")[0]

    def _ws_url(self) -> str:
        url = self.config.server_url
        if not url.endswith("/ws/worker"):
            url += "/ws/worker"
        return f"{url}?token={self.config.token}"

    # -- job execution ---------------------------------------------------

    def execute_infer(self, job: dict) -> dict:
        payload = job["payload"]
        model = self._http.get(f"/api/models/{payload['model_id']}")
        model.raise_for_status()
        model = model.json()
        if model["task"] != "structures":
            raise RuntimeError("this example worker only runs structure inference")
        params = self.config.params_override or model["params"]
        raster = self._http.get(f"/api/rasters/{payload['raster_id']}/data.npy")
        raster.raise_for_status()
        gray = to_grayscale(np.load(io.BytesIO(raster.content)))
        return {
            "mode": "structures",
            "set_id": payload.get("set_id") or f"set-{job['id']}",
            "tiles": infer_tiles(gray, params),
        }

    # -- protocol loop -----------------------------------------------------

    async def run(self, stop: asyncio.Event | None = None):
        stop = stop or asyncio.Event()
        backoff = self.config.reconnect_backoff
        while not stop.is_set():
            try:
                async with websockets.connect(self._ws_url()) as ws:
                    backoff = self.config.reconnect_backoff
                    await self._session(ws, stop)
            except (OSError, websockets.WebSocketException):
                if stop.is_set():
                    break
                await asyncio.sleep(backoff)
                backoff = min(backoff * 2, 30.0)

    async def _session(self, ws, stop: asyncio.Event):
        await ws.send(json.dumps({
            "type": "register",
            "worker_id": self.config.worker_id,
            "capabilities": list(self.config.capabilities),
        }))

        async def heartbeats():
            while True:
                await asyncio.sleep(self.config.heartbeat_interval)
                await ws.send(json.dumps({"type": "heartbeat"}))

        beat = asyncio.create_task(heartbeats())
        try:
            while not stop.is_set():
                msg = json.loads(await ws.recv())
                if msg.get("type") != "assign":
                    continue
                job = msg["job"]
                attempt = job["current_attempt"]
                await ws.send(json.dumps({"type": "progress", "job_id": job["id"],
                                          "fraction": 0.0}))
                try:
                    result = await asyncio.to_thread(self.execute_infer, job)
                except Exception as exc:
                    await ws.send(json.dumps({
                        "type": "error", "job_id": job["id"], "attempt": attempt,
                        "message": repr(exc)}))
                    continue
                await ws.send(json.dumps({
                    "type": "result", "job_id": job["id"], "attempt": attempt,
                    "payload": result}))
        finally:
            beat.cancel()
