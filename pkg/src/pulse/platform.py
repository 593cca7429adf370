"""Composition root: store, catalogs, queue, finalizers, and evaluation.

One Platform owns one data directory. The HTTP/WS service, the in-process
worker, and the tests all drive the same object, so behaviour cannot
diverge between the API surface and direct module use.
"""

from __future__ import annotations

import io
import time
import uuid

import numpy as np

from . import metrics
from .annotations import GREEN_STATES, AnnotationService
from .detector import DetectorParams
from .errors import (InvalidPayloadError, UnknownProjectError, ValidationError)
from .orchestrator import JobQueue, Job, DEFAULT_HEARTBEAT_TIMEOUT
from .raster import RasterCatalog, partition_analysis_tiles
from .registry import AdaptationRecord, ModelRegistry
from .store import Store
from .worker import clip_ring_to_window

DET_STATES = ("proposed", "accepted", "added")  # detection side of evaluation


class Platform:
    def __init__(self, data_dir, clock=time.time,
                 heartbeat_timeout: float = DEFAULT_HEARTBEAT_TIMEOUT,
                 max_attempts: int = 3):
        self.clock = clock
        self.store = Store(data_dir, clock=clock)
        self.rasters = RasterCatalog(self.store)
        self.models = ModelRegistry(self.store, clock=clock)
        self.annotations = AnnotationService(self.store, self.rasters, clock=clock,
                                             publish=self.publish_raster_event)
        self.queue = JobQueue(self.store, clock=clock, max_attempts=max_attempts,
                              heartbeat_timeout=heartbeat_timeout)
        self.queue.set_finalizer("infer", self._finalize_infer)
        self.queue.set_finalizer("adapt", self._finalize_adapt)

    def close(self):
        self.store.close()

    # -- events ------------------------------------------------------------

    def project_id_for_raster(self, raster_id: str) -> str | None:
        try:
            return self.rasters.meta(raster_id).get("project_id")
        except Exception:
            return None

    def publish_raster_event(self, event_type: str, payload: dict, raster_id: str):
        """Domain events go to the raster topic and, when attached, the
        project topic (the collaborator channel)."""
        self.store.events.publish(f"raster.{raster_id}", event_type, payload)
        project_id = self.project_id_for_raster(raster_id)
        if project_id:
            self.store.events.publish(f"project.{project_id}", event_type, payload)

    # -- projects ------------------------------------------------------------

    def create_project(self, name: str, members: list[str] | None = None) -> dict:
        project = {
            "id": f"proj-{uuid.uuid4().hex[:12]}",
            "name": name,
            "members": members or [],
            "raster_ids": [],
            "set_ids": [],
            "created_at": self.clock(),
        }
        self.store.records.put("projects", project["id"], project)
        return project

    def get_project(self, project_id: str) -> dict:
        rec = self.store.records.get("projects", project_id)
        if rec is None:
            raise UnknownProjectError(f"project {project_id!r} not found")
        return rec.data

    def attach_raster(self, project_id: str, raster_id: str):
        project = self.get_project(project_id)
        if raster_id not in project["raster_ids"]:
            project["raster_ids"].append(raster_id)
            self.store.records.put("projects", project_id, project)

    def attach_set(self, project_id: str, set_id: str):
        project = self.get_project(project_id)
        if set_id not in project["set_ids"]:
            project["set_ids"].append(set_id)
            self.store.records.put("projects", project_id, project)

    # -- job submission ---------------------------------------------------------

    def submit_job(self, kind: str, payload: dict) -> Job:
        """Validate domain references up front, resolve the project channel,
        then enqueue."""
        payload = payload or {}
        raster_id = None
        if kind in ("tile_pyramid", "infer"):
            raster_id = payload.get("raster_id")
            if raster_id:
                self.rasters.meta(raster_id)
        if kind == "infer" and payload.get("model_id"):
            self.models.get(payload["model_id"])
        if kind == "adapt":
            if payload.get("parent_model_id"):
                self.models.get(payload["parent_model_id"])
            if payload.get("set_id"):
                raster_id = self.annotations.get_set(payload["set_id"])["raster_id"]
        if kind == "evaluate":
            for key in ("set_id", "truth_set_id"):
                if payload.get(key):
                    data = self.annotations.get_set(payload[key])
                    raster_id = raster_id or data["raster_id"]
        project_id = self.project_id_for_raster(raster_id) if raster_id else None
        return self.queue.submit(kind, payload, project_id=project_id)

    # -- result finalizers ----------------------------------------------------

    def _finalize_infer(self, job: Job, result: dict | None) -> dict:
        if not isinstance(result, dict) or "set_id" not in result:
            raise InvalidPayloadError("infer result must carry set_id")
        set_id = result["set_id"]
        try:
            set_data = self.annotations.get_set(set_id)
        except Exception:
            set_data = self.annotations.create_set(
                job.payload["raster_id"], model_id=job.payload["model_id"],
                created_by_job=job.id, set_id=set_id)
        self.annotations.wipe_model_features(set_id)
        model_user = f"model:{job.payload['model_id']}"
        count = 0

        if result.get("mode") == "flood":
            if result.get("mask_key"):
                self.annotations.set_mask_key(set_id, result["mask_key"])
            rings = result.get("polygons", [])
            if rings:
                added = self.annotations.add_features(
                    set_id, rings, source="model", state="proposed",
                    user=model_user, strict=False)
                count = len(added)
            set_data = self.annotations.get_set(set_id)
            for tile in set_data["tiles"].values():
                if tile["state"] == "unprocessed":
                    tile["state"] = "detected"
            self.annotations._save_set(set_data)
            return {"set_id": set_id, "feature_count": count, "merged": 0,
                    "mask_key": result.get("mask_key")}

        meta = self.rasters.meta(job.payload["raster_id"])
        windows = {t.index: t.window
                   for t in partition_analysis_tiles((meta["width"], meta["height"]))}
        tile_entries = result.get("tiles", [])
        for entry in tile_entries:
            index = tuple(entry["index"])
            window = windows.get(index)
            if window is None:
                raise InvalidPayloadError(f"tile {index} outside raster grid")
            x0, y0 = window[0], window[1]
            rings = []
            for ring in entry.get("polygons", []):
                for clipped in clip_ring_to_window(
                        [(x, y) for x, y in ring], window, local=True):
                    rings.append([(x + x0, y + y0) for x, y in clipped])
            if rings:
                self.annotations.add_features(set_id, rings, source="model",
                                              state="proposed", user=model_user,
                                              tile_index=index, strict=False)
                count += len(rings)
        set_data = self.annotations.get_set(set_id)
        for entry in tile_entries:
            key = f"{entry['index'][0]},{entry['index'][1]}"
            if set_data["tiles"][key]["state"] == "unprocessed":
                set_data["tiles"][key]["state"] = "detected"
        self.annotations._save_set(set_data)
        merged = self.annotations.merge_border_features(set_id)
        return {"set_id": set_id, "feature_count": count, "merged": merged}

    def _finalize_adapt(self, job: Job, result: dict | None) -> dict:
        if not isinstance(result, dict) or "selected_params" not in result:
            raise InvalidPayloadError("adapt result must carry selected_params")
        if result["after_f1"] < result["before_f1"]:
            raise ValidationError("adaptation regressed on its training tiles")
        parent = self.models.get(result["parent_model_id"])
        set_data = self.annotations.get_set(result["set_id"])
        record = AdaptationRecord(
            id=f"adaptation-{uuid.uuid4().hex[:12]}",
            parent_model_id=parent.id,
            raster_id=set_data["raster_id"],
            corrected_tile_ids=result.get("corrected_tiles", []),
            search_log=[(p, f1) for p, f1 in result.get("search_log", [])],
            selected_params=result["selected_params"],
            before_metrics=result.get("before_metrics", {}),
            after_metrics=result.get("after_metrics", {}),
        )
        self.models.add_adaptation(record)
        child = self.models.create_model(
            name=result.get("name") or f"{parent.name} (adapted)",
            task=parent.task,
            params=DetectorParams.from_dict(result["selected_params"]),
            parent_id=parent.id, created_from=record.id)
        self.publish_raster_event("model.created", {"model": child.to_dict()},
                                  set_data["raster_id"])
        return {"model_id": child.id, "record_id": record.id,
                "before_f1": result["before_f1"], "after_f1": result["after_f1"],
                "selected_params": result["selected_params"]}

    # -- evaluation -------------------------------------------------------------

    def _tile_filter(self, set_id: str, tiles: str, review_set: str | None,
                     exclude_tiles) -> set | None:
        """Allowed tile set, or None for no filtering."""
        if tiles == "all" and not exclude_tiles:
            return None
        ref_set = review_set or set_id
        set_data = self.annotations.get_set(ref_set)
        all_tiles = {tuple(int(v) for v in key.split(","))
                     for key in set_data["tiles"]}
        reviewed = set(self.annotations.reviewed_tiles(ref_set))
        if tiles == "reviewed":
            allowed = reviewed
        elif tiles == "unreviewed":
            allowed = all_tiles - reviewed
        else:
            allowed = all_tiles
        if exclude_tiles:
            allowed = allowed - {tuple(t) for t in exclude_tiles}
        return allowed

    def evaluate(self, set_id: str, truth_set_id: str, mode: str = "objects",
                 iou_threshold: float = 0.5, tiles: str = "all",
                 review_set: str | None = None,
                 exclude_tiles=None) -> metrics.MetricsReport:
        """Score a detection set against a ground-truth set.

        objects mode: detections are the set's non-rejected features, truth
        is the other set's analyst-validated features; optional tile
        filters restrict both sides (held-out evaluation).
        pixels mode: compares the mask blobs attached to both sets.
        """
        if mode == "pixels":
            masks = []
            for sid in (truth_set_id, set_id):
                key = self.annotations.get_set(sid).get("mask_key")
                if not key:
                    raise ValidationError(f"set {sid!r} has no mask attached")
                blob = self.store.blobs.get(key)
                if blob is None:
                    raise ValidationError(f"mask blob {key!r} missing")
                masks.append(np.load(io.BytesIO(blob)))
            return metrics.pixels_report(masks[0], masks[1])
        if mode != "objects":
            raise InvalidPayloadError(f"unknown evaluation mode {mode!r}")

        allowed = self._tile_filter(set_id, tiles, review_set, exclude_tiles)
        det = self.annotations.features(set_id, states=DET_STATES)
        gt = self.annotations.features(truth_set_id, states=GREEN_STATES)
        if allowed is not None:
            det = [f for f in det if f.tile_index in allowed]
            gt = [f for f in gt if f.tile_index in allowed]
        return metrics.objects_report(
            [f.geometry for f in gt], [f.geometry for f in det],
            iou_threshold=iou_threshold,
            gt_ids=[f.id for f in gt], det_ids=[f.id for f in det])
