"""Reference worker: detector, adaptation, flood, and pyramid job execution.

The worker polls the queue, heartbeats, and reports results; all heavy
computation is deterministic so a retried job reproduces the same output.
Inference and adaptation results are *materialized* by the platform's
result finalizers, which is what lets an out-of-process worker execute
the same kinds over the wire protocol and stay byte-compatible.
"""

from __future__ import annotations

import io
import threading
import time
import uuid

import numpy as np
from shapely.geometry import Polygon, box

from .adapt import AdaptSearchSpace, adapt
from .detector import Ring, detect_tile, flood_map
from .errors import EmptyTrainingSetError, MultiBandInputError, PulseError
from .orchestrator import JOB_KINDS, Job
from .raster import extract_window, partition_analysis_tiles

ALL_CAPABILITIES = tuple(JOB_KINDS)
# Kinds executable over the wire protocol (no direct blob access needed).
WIRE_CAPABILITIES = ("infer", "adapt")


def clip_ring_to_window(ring: Ring, window: tuple[int, int, int, int],
                        local: bool = True) -> list[Ring]:
    """Clip a tile-local ring to the true (unpadded) window.

    Detections can spill into the zero padding of edge tiles; they are cut
    back here. Rings already inside the window pass through verbatim, so
    the common case is bit-stable. Returns 0..n rings (clipping may split
    a polygon).
    """
    x0, y0, w, h = window
    ox, oy = (0.0, 0.0) if local else (float(x0), float(y0))
    if (min(p[0] for p in ring) >= 0 and max(p[0] for p in ring) <= w
            and min(p[1] for p in ring) >= 0 and max(p[1] for p in ring) <= h):
        return [[(x + ox, y + oy) for x, y in ring]] if (ox or oy) else [list(ring)]
    poly = Polygon(ring).buffer(0)
    clipped = poly.intersection(box(0, 0, w, h))
    out: list[Ring] = []
    geoms = getattr(clipped, "geoms", [clipped])
    for g in geoms:
        if g.is_empty or g.geom_type != "Polygon" or g.area <= 0:
            continue
        out.append([(x + ox, y + oy) for x, y in g.exterior.coords])
    return out


def detect_raster_tiles(gray: np.ndarray, params, raster_id: str = "",
                        progress=None) -> list[dict]:
    """Run the detector over every analysis tile of a raster.

    Returns [{"index": [c, r], "polygons": [ring, ...]}, ...] with rings in
    tile-local coordinates, already clipped to the true window, in
    deterministic tile order.
    """
    tiles = partition_analysis_tiles((gray.shape[1], gray.shape[0]), raster_id=raster_id)
    out = []
    for i, tile in enumerate(tiles):
        pixels = extract_window(gray, tile.window)
        rings = detect_tile(pixels, params)
        clipped: list[Ring] = []
        for ring in rings:
            clipped.extend(clip_ring_to_window(ring, tile.window))
        out.append({"index": list(tile.index),
                    "polygons": [[[float(x), float(y)] for x, y in ring]
                                 for ring in clipped]})
        if progress is not None:
            progress((i + 1) / len(tiles))
    return out


def training_tiles_from_ground_truth(gray: np.ndarray,
                                     gt_map: dict[tuple[int, int], list],
                                     raster_id: str = "") -> tuple[list, list]:
    """Assemble (pixels, rings) training pairs for adaptation.

    Ground-truth geometries are clipped to their tile window and shifted to
    tile-local coordinates so they compare directly with detector output.
    """
    windows = {t.index: t.window
               for t in partition_analysis_tiles((gray.shape[1], gray.shape[0]),
                                                 raster_id=raster_id)}
    tiles, tile_ids = [], []
    for index in sorted(gt_map):
        x0, y0, w, h = windows[index]
        pixels = extract_window(gray, windows[index])
        rings: list[Ring] = []
        for feature in gt_map[index]:
            shifted = [(x - x0, y - y0) for x, y in feature.geometry]
            rings.extend(clip_ring_to_window(shifted, windows[index]))
        tiles.append((pixels, rings))
        tile_ids.append(list(index))
    return tiles, tile_ids


class ReferenceWorker:
    """In-process worker executing all job kinds against a Platform."""

    def __init__(self, platform, worker_id: str | None = None,
                 capabilities=ALL_CAPABILITIES, poll_interval: float = 0.02,
                 heartbeat_interval: float | None = None):
        self.platform = platform
        self.worker_id = worker_id or f"worker-{uuid.uuid4().hex[:8]}"
        self.capabilities = tuple(capabilities)
        self.poll_interval = poll_interval
        self.heartbeat_interval = heartbeat_interval or poll_interval
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        platform.queue.register_worker(self.worker_id, self.capabilities)

    # -- lifecycle -------------------------------------------------------

    def start(self):
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True,
                                        name=self.worker_id)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10)
            self._thread = None

    def _loop(self):
        queue = self.platform.queue
        while not self._stop.is_set():
            queue.heartbeat(self.worker_id)
            job = queue.assign_next(self.worker_id)
            if job is None:
                self._stop.wait(self.poll_interval)
                continue
            self.execute_job(job)

    def run_once(self) -> bool:
        """Poll and execute a single job; returns whether one ran."""
        self.platform.queue.heartbeat(self.worker_id)
        job = self.platform.queue.assign_next(self.worker_id)
        if job is None:
            return False
        self.execute_job(job)
        return True

    # -- execution -------------------------------------------------------

    def execute_job(self, job: Job):
        queue = self.platform.queue
        attempt = job.current_attempt
        queue.start(job.id, self.worker_id, attempt)
        try:
            result = self._execute(job, attempt)
        except PulseError as exc:
            queue.fail_attempt(job.id, self.worker_id, attempt,
                               f"{exc.code}: {exc}")
            return
        except Exception as exc:
            queue.fail_attempt(job.id, self.worker_id, attempt, repr(exc))
            return
        queue.complete(job.id, self.worker_id, attempt, result)

    def _execute(self, job: Job, attempt: int) -> dict:
        def progress(fraction: float):
            self.platform.queue.heartbeat(self.worker_id)
            self.platform.queue.report_progress(job.id, self.worker_id, attempt,
                                                fraction)

        if job.kind == "infer":
            return self._run_infer(job, progress)
        if job.kind == "adapt":
            return self._run_adapt(job, progress)
        if job.kind == "tile_pyramid":
            return self._run_tile_pyramid(job, progress)
        if job.kind == "evaluate":
            return self._run_evaluate(job)
        raise PulseError(f"unsupported job kind {job.kind!r}")

    def _run_infer(self, job: Job, progress) -> dict:
        payload = job.payload
        raster = self.platform.rasters.get(payload["raster_id"])
        model = self.platform.models.get(payload["model_id"])
        set_id = payload.get("set_id") or f"set-{job.id}"
        if model.task == "flood":
            if raster.bands != 1:
                raise MultiBandInputError("flood mapping needs a single-band raster")
            mask, polygons = flood_map(raster.pixels, model.params)
            buf = io.BytesIO()
            np.save(buf, mask)
            mask_key = f"masks/{set_id}.npy"
            self.platform.store.blobs.put(mask_key, buf.getvalue())
            progress(1.0)
            return {"mode": "flood", "set_id": set_id, "mask_key": mask_key,
                    "polygons": [[[float(x), float(y)] for x, y in ring]
                                 for ring in polygons]}
        tiles = detect_raster_tiles(raster.gray8(), model.params,
                                    raster_id=raster.id, progress=progress)
        return {"mode": "structures", "set_id": set_id, "tiles": tiles}

    def _run_adapt(self, job: Job, progress) -> dict:
        payload = job.payload
        parent = self.platform.models.get(payload["parent_model_id"])
        set_data = self.platform.annotations.get_set(payload["set_id"])
        gt_map = self.platform.annotations.adaptation_ground_truth(payload["set_id"])
        if not gt_map:
            raise EmptyTrainingSetError("no reviewed tiles to adapt from")
        raster = self.platform.rasters.get(set_data["raster_id"])
        tiles, tile_ids = training_tiles_from_ground_truth(
            raster.gray8(), gt_map, raster_id=raster.id)
        space = (AdaptSearchSpace.from_dict(payload["search_space"])
                 if payload.get("search_space") else None)
        progress(0.1)
        outcome = adapt(parent.params, tiles, space)
        progress(0.9)
        return {
            "parent_model_id": parent.id,
            "set_id": payload["set_id"],
            "name": payload.get("name"),
            "corrected_tiles": tile_ids,
            "selected_params": outcome.selected.to_dict(),
            "search_log": [[params.to_dict(), f1] for params, f1 in outcome.search_log],
            "before_f1": outcome.before_f1,
            "after_f1": outcome.after_f1,
            "before_metrics": outcome.before_report.to_dict(),
            "after_metrics": outcome.after_report.to_dict(),
        }

    def _run_tile_pyramid(self, job: Job, progress) -> dict:
        payload = job.payload
        zooms = self.platform.rasters.build_pyramid(
            payload["raster_id"], payload.get("resampling", "bilinear"),
            progress=progress)
        return {"raster_id": payload["raster_id"], "zooms": zooms}

    def _run_evaluate(self, job: Job) -> dict:
        payload = job.payload
        report = self.platform.evaluate(
            set_id=payload["set_id"], truth_set_id=payload["truth_set_id"],
            mode=payload.get("mode", "objects"),
            iou_threshold=payload.get("iou_threshold", 0.5),
            tiles=payload.get("tiles", "all"),
            review_set=payload.get("review_set"),
            exclude_tiles=[tuple(t) for t in payload.get("exclude_tiles", [])] or None)
        return report.to_dict()
