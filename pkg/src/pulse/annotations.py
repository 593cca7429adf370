"""Detections, analyst corrections, review state, and GeoJSON export.

Features live in raster *pixel* coordinates; export converts them to
lon/lat (EPSG:4326) through the raster geotransform and CRS conversion.
Corrections are applied serially per detection set (the store's writer
lock provides the ordering); conflicts resolve last-writer-wins with the
full prior history retained.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from typing import Iterable, Sequence

from shapely.geometry import Polygon
from shapely.ops import unary_union

from . import geo
from .detector import Ring, ring_area
from .errors import (InvalidGeometryError, InvalidPayloadError, UnknownFeatureError,
                     UnknownSetError, UnknownTileError, ValidationError)
from .raster import ANALYSIS_TILE_SIZE, RasterCatalog, partition_analysis_tiles
from .store import Op, Store

FEATURE_STATES = ("proposed", "accepted", "rejected", "added")
FEATURE_SOURCES = ("model", "analyst")
CORRECTION_ACTIONS = ("accept", "reject", "add", "modify")

GREEN_STATES = ("accepted", "added")  # analyst-validated; rendered green


@dataclass(frozen=True)
class Feature:
    id: str
    set_id: str
    geometry: Ring
    source: str
    state: str
    version: int
    last_editor: str
    tile_index: tuple[int, int]
    classification: str | None = None
    created_at: float = 0.0
    updated_at: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "set_id": self.set_id,
            "geometry": [[float(x), float(y)] for x, y in self.geometry],
            "source": self.source,
            "state": self.state,
            "version": self.version,
            "last_editor": self.last_editor,
            "tile_index": list(self.tile_index),
            "classification": self.classification,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Feature":
        return cls(id=d["id"], set_id=d["set_id"],
                   geometry=[(float(x), float(y)) for x, y in d["geometry"]],
                   source=d["source"], state=d["state"], version=d["version"],
                   last_editor=d["last_editor"],
                   tile_index=(d["tile_index"][0], d["tile_index"][1]),
                   classification=d.get("classification"),
                   created_at=d.get("created_at", 0.0),
                   updated_at=d.get("updated_at", 0.0))


@dataclass(frozen=True)
class Correction:
    """One analyst action against a detection set."""

    action: str
    tile_index: tuple[int, int] | None = None
    feature_id: str | None = None
    new_geometry: Ring | None = None
    user: str = "anonymous"
    timestamp: float = 0.0
    basis_version: int | None = None

    def validate(self) -> "Correction":
        if self.action not in CORRECTION_ACTIONS:
            raise InvalidPayloadError(f"unknown correction action {self.action!r}")
        if self.action == "add":
            if self.feature_id is not None:
                raise InvalidPayloadError("add must not reference a feature")
            if self.new_geometry is None:
                raise InvalidPayloadError("add requires new_geometry")
            if self.tile_index is None:
                raise InvalidPayloadError("add requires tile_index")
        elif self.action == "modify":
            if self.feature_id is None or self.new_geometry is None:
                raise InvalidPayloadError("modify requires feature_id and new_geometry")
        else:
            if self.feature_id is None:
                raise InvalidPayloadError(f"{self.action} requires feature_id")
            if self.new_geometry is not None:
                raise InvalidPayloadError(f"{self.action} must not carry geometry")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "Correction":
        tile = d.get("tile_index")
        geom = d.get("new_geometry")
        return cls(action=d.get("action", ""),
                   tile_index=tuple(tile) if tile is not None else None,
                   feature_id=d.get("feature_id"),
                   new_geometry=[(float(x), float(y)) for x, y in geom]
                   if geom is not None else None,
                   user=d.get("user", "anonymous"),
                   timestamp=float(d.get("timestamp", 0.0)),
                   basis_version=d.get("basis_version")).validate()


def normalize_ring(geometry: Sequence, strict: bool = True) -> Ring:
    """Validate and close a polygon ring.

    strict additionally requires OGC validity (no self-intersection);
    detector output is allowed to self-touch at diagonal pinch corners.
    """
    try:
        pts = [(float(p[0]), float(p[1])) for p in geometry]
    except (TypeError, ValueError, IndexError) as exc:
        raise InvalidGeometryError(f"geometry is not a ring of points: {exc}") from exc
    if len(pts) >= 2 and pts[0] != pts[-1]:
        pts.append(pts[0])
    if len(pts) < 4:
        raise InvalidGeometryError(f"ring needs >= 4 points (closed), got {len(pts)}")
    if abs(ring_area(pts)) <= 0.0:
        raise InvalidGeometryError("ring has zero area")
    if strict and not Polygon(pts).is_valid:
        raise InvalidGeometryError("ring is self-intersecting")
    return pts


def _tile_key(index: tuple[int, int]) -> str:
    return f"{index[0]},{index[1]}"


class AnnotationService:
    """Per-set feature store with review tracking and export."""

    def __init__(self, store: Store, rasters: RasterCatalog, clock=time.time,
                 publish=None):
        self._store = store
        self._rasters = rasters
        self._clock = clock
        # publish(event_type, payload, raster_id) -> None; wired by Platform.
        self._publish = publish or (lambda *_args, **_kw: None)

    # -- detection sets --------------------------------------------------

    def create_set(self, raster_id: str, model_id: str | None = None,
                   created_by_job: str | None = None,
                   set_id: str | None = None) -> dict:
        meta = self._rasters.meta(raster_id)  # raises UnknownRasterError
        tiles = {}
        for tile in partition_analysis_tiles((meta["width"], meta["height"])):
            tiles[_tile_key(tile.index)] = {"review": "unreviewed", "state": "unprocessed"}
        set_id = set_id or f"set-{uuid.uuid4().hex[:12]}"
        data = {
            "id": set_id,
            "raster_id": raster_id,
            "model_id": model_id,
            "created_by_job": created_by_job,
            "tiles": tiles,
            "mask_key": None,
            "created_at": self._clock(),
        }
        self._store.records.put("sets", set_id, data, ref=raster_id)
        self._publish("set.created", {"set": data}, raster_id)
        return data

    def get_set(self, set_id: str) -> dict:
        rec = self._store.records.get("sets", set_id)
        if rec is None:
            raise UnknownSetError(f"detection set {set_id!r} not found")
        return rec.data

    def set_mask_key(self, set_id: str, key: str):
        data = self.get_set(set_id)
        data["mask_key"] = key
        self._store.records.put("sets", set_id, data, ref=data["raster_id"])

    def _save_set(self, data: dict):
        self._store.records.put("sets", data["id"], data, ref=data["raster_id"])

    # -- features ---------------------------------------------------------

    def _tile_for_ring(self, set_data: dict, ring: Ring) -> tuple[int, int]:
        min_x = min(p[0] for p in ring)
        min_y = min(p[1] for p in ring)
        index = (int(min_x // ANALYSIS_TILE_SIZE), int(min_y // ANALYSIS_TILE_SIZE))
        if _tile_key(index) not in set_data["tiles"]:
            raise UnknownTileError(f"geometry at {(min_x, min_y)} falls outside the raster grid")
        return index

    def add_features(self, set_id: str, rings: Iterable[Sequence], source: str,
                     state: str, user: str, tile_index: tuple[int, int] | None = None,
                     strict: bool | None = None,
                     classification: str | None = None) -> list[Feature]:
        """Create features in bulk (one transaction); returns them in order."""
        set_data = self.get_set(set_id)
        if source not in FEATURE_SOURCES:
            raise ValidationError(f"source must be one of {FEATURE_SOURCES}")
        if state not in FEATURE_STATES:
            raise ValidationError(f"state must be one of {FEATURE_STATES}")
        if source == "analyst" and state == "proposed":
            raise ValidationError("analyst features cannot be 'proposed'")
        if strict is None:
            strict = source == "analyst"
        now = self._clock()
        ops, features = [], []
        for ring in rings:
            ring = normalize_ring(ring, strict=strict)
            index = tile_index or self._tile_for_ring(set_data, ring)
            if _tile_key(index) not in set_data["tiles"]:
                raise UnknownTileError(f"tile {index} not in raster grid")
            feature = Feature(id=f"feat-{uuid.uuid4().hex[:12]}", set_id=set_id,
                              geometry=ring, source=source, state=state, version=1,
                              last_editor=user, tile_index=index,
                              classification=classification,
                              created_at=now, updated_at=now)
            d = feature.to_dict()
            ops.append(Op("put", "features", feature.id, d, ref=set_id,
                          ref2=_tile_key(index)))
            ops.append(Op("put", "feature_history", f"{feature.id}:1",
                          {"feature": d, "correction": None, "stale": False},
                          ref=feature.id))
            features.append(feature)
        if ops:
            self._store.records.transact(ops)
        return features

    def get_feature(self, feature_id: str) -> Feature:
        rec = self._store.records.get("features", feature_id)
        if rec is None:
            raise UnknownFeatureError(f"feature {feature_id!r} not found")
        return Feature.from_dict(rec.data)

    def features(self, set_id: str, states: Iterable[str] | None = None,
                 tile_index: tuple[int, int] | None = None) -> list[Feature]:
        self.get_set(set_id)
        recs = self._store.records.list(
            "features", ref=set_id,
            ref2=_tile_key(tile_index) if tile_index is not None else None)
        out = [Feature.from_dict(r.data) for r in recs]
        if states is not None:
            wanted = set(states)
            out = [f for f in out if f.state in wanted]
        return out

    def feature_history(self, feature_id: str) -> list[dict]:
        self.get_feature(feature_id)
        recs = self._store.records.list("feature_history", ref=feature_id)
        return [r.data for r in recs]

    # -- corrections -------------------------------------------------------

    def apply_correction(self, set_id: str, correction: Correction) -> Feature:
        """Apply one correction; emits feature.updated on the project channel.

        A stale basis_version still applies (last writer wins); the prior
        version stays in the feature history.
        """
        correction.validate()
        set_data = self.get_set(set_id)
        now = correction.timestamp or self._clock()

        if correction.action == "add":
            if _tile_key(correction.tile_index) not in set_data["tiles"]:
                raise UnknownTileError(f"tile {correction.tile_index} not in raster grid")
            ring = normalize_ring(correction.new_geometry, strict=True)
            feature = Feature(id=f"feat-{uuid.uuid4().hex[:12]}", set_id=set_id,
                              geometry=ring, source="analyst", state="added",
                              version=1, last_editor=correction.user,
                              tile_index=tuple(correction.tile_index),
                              created_at=now, updated_at=now)
            stale = False
        else:
            current = self.get_feature(correction.feature_id)
            if current.set_id != set_id:
                raise UnknownFeatureError(
                    f"feature {correction.feature_id!r} not in set {set_id!r}")
            stale = (correction.basis_version is not None
                     and correction.basis_version != current.version)
            if correction.action == "accept":
                new_state, geometry = "accepted", current.geometry
            elif correction.action == "reject":
                new_state, geometry = "rejected", current.geometry
            else:  # modify
                geometry = normalize_ring(correction.new_geometry, strict=True)
                # An analyst edit of a bare proposal counts as validation.
                new_state = "accepted" if current.state == "proposed" else current.state
            feature = Feature(id=current.id, set_id=set_id, geometry=geometry,
                              source=current.source, state=new_state,
                              version=current.version + 1,
                              last_editor=correction.user,
                              tile_index=current.tile_index,
                              classification=current.classification,
                              created_at=current.created_at, updated_at=now)

        d = feature.to_dict()
        tile_key = _tile_key(feature.tile_index)
        set_data["tiles"][tile_key]["state"] = "corrected"
        self._store.records.transact([
            Op("put", "features", feature.id, d, ref=set_id, ref2=tile_key),
            Op("put", "feature_history", f"{feature.id}:{feature.version}",
               {"feature": d, "correction": _correction_dict(correction, now),
                "stale": stale}, ref=feature.id),
            Op("put", "sets", set_id, set_data, ref=set_data["raster_id"]),
        ])
        self._publish("feature.updated", {"feature": d}, set_data["raster_id"])
        return feature

    # -- review ------------------------------------------------------------

    def mark_tile_reviewed(self, set_id: str, tile_index: tuple[int, int]) -> dict:
        """Mark a tile reviewed (idempotent); it becomes adaptation ground truth."""
        set_data = self.get_set(set_id)
        key = _tile_key(tile_index)
        if key not in set_data["tiles"]:
            raise UnknownTileError(f"tile {tile_index} not in raster grid")
        tile = set_data["tiles"][key]
        if tile["review"] != "reviewed":
            tile["review"] = "reviewed"
            self._save_set(set_data)
            self._publish("tile.reviewed",
                          {"set_id": set_id, "tile": list(tile_index),
                           "status": dict(tile)}, set_data["raster_id"])
        return dict(tile)

    def reviewed_tiles(self, set_id: str) -> list[tuple[int, int]]:
        set_data = self.get_set(set_id)
        out = []
        for key, tile in set_data["tiles"].items():
            if tile["review"] == "reviewed":
                c, r = key.split(",")
                out.append((int(c), int(r)))
        return sorted(out)

    def reviewed_fraction(self, set_id: str) -> float:
        set_data = self.get_set(set_id)
        total = len(set_data["tiles"])
        reviewed = sum(1 for t in set_data["tiles"].values() if t["review"] == "reviewed")
        return reviewed / total if total else 0.0

    def adaptation_ground_truth(self, set_id: str) -> dict[tuple[int, int], list[Feature]]:
        """Reviewed tiles -> analyst-validated features (accepted/added only).

        Exactly the review-subset contract: nothing from unreviewed tiles,
        nothing rejected or merely proposed.
        """
        reviewed = set(self.reviewed_tiles(set_id))
        out: dict[tuple[int, int], list[Feature]] = {t: [] for t in reviewed}
        for feature in self.features(set_id, states=GREEN_STATES):
            if feature.tile_index in reviewed:
                out[feature.tile_index].append(feature)
        return out

    # -- export / import ----------------------------------------------------

    def export_geojson(self, set_id: str, states: Iterable[str] | None = None) -> dict:
        """FeatureCollection in EPSG:4326 lon/lat, properties carry provenance."""
        set_data = self.get_set(set_id)
        raster = self._rasters.get(set_data["raster_id"])
        features = []
        for f in self.features(set_id, states=states):
            coords = []
            for x, y in f.geometry:
                gx, gy = geo.pixel_to_geo(raster.geotransform, x, y)
                lon, lat = geo.convert_crs(gx, gy, raster.crs, 4326)
                coords.append([lon, lat])
            features.append({
                "type": "Feature",
                "id": f.id,
                "geometry": {"type": "Polygon", "coordinates": [coords]},
                "properties": {
                    "source": f.source,
                    "state": f.state,
                    "model_id": set_data["model_id"],
                    "set_id": set_id,
                    "tile_index": list(f.tile_index),
                    "version": f.version,
                    "classification": f.classification,
                },
            })
        return {"type": "FeatureCollection", "features": features}

    def import_geojson(self, set_id: str, collection: dict, state: str = "added",
                       source: str = "analyst", user: str = "import") -> list[Feature]:
        """Inverse of export: lon/lat polygons -> pixel-space features."""
        set_data = self.get_set(set_id)
        raster = self._rasters.get(set_data["raster_id"])
        if not isinstance(collection, dict) or collection.get("type") != "FeatureCollection":
            raise InvalidPayloadError("expected a GeoJSON FeatureCollection")
        rings = []
        for gj in collection.get("features", []):
            geom = gj.get("geometry") or {}
            if geom.get("type") != "Polygon":
                raise InvalidGeometryError(
                    f"only Polygon features are importable, got {geom.get('type')!r}")
            coords = geom.get("coordinates") or []
            if len(coords) != 1:
                raise InvalidGeometryError("polygon holes are not supported")
            ring = []
            for lon, lat in coords[0]:
                gx, gy = geo.convert_crs(lon, lat, 4326, raster.crs)
                ring.append(geo.geo_to_pixel(raster.geotransform, gx, gy))
            rings.append(ring)
        return self.add_features(set_id, rings, source=source, state=state, user=user)

    # -- border merging -------------------------------------------------------

    def merge_border_features(self, set_id: str) -> int:
        """Union model proposals from different tiles whose polygons meet.

        Polygons merge when they share boundary length or overlap area
        (corner point-touches are left alone: their union would pinch).
        The earliest feature keeps its id; merged-away features are
        tombstoned. Returns the number of features merged away.
        """
        set_data = self.get_set(set_id)
        feats = [f for f in self.features(set_id, states=("proposed",))
                 if f.source == "model"]
        if len(feats) < 2:
            return 0
        polys = [Polygon(f.geometry).buffer(0) for f in feats]

        parent = list(range(len(feats)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(len(feats)):
            for j in range(i + 1, len(feats)):
                if feats[i].tile_index == feats[j].tile_index:
                    continue
                if not polys[i].intersects(polys[j]):
                    continue
                inter = polys[i].intersection(polys[j])
                if inter.length == 0.0 and inter.area == 0.0:
                    continue
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri

        groups: dict[int, list[int]] = {}
        for i in range(len(feats)):
            groups.setdefault(find(i), []).append(i)

        merged = 0
        now = self._clock()
        for members in groups.values():
            if len(members) < 2:
                continue
            members.sort()  # feature list order == insertion order
            survivor = feats[members[0]]
            union = unary_union([polys[i] for i in members])
            if union.geom_type != "Polygon":
                continue
            ring = [(float(x), float(y)) for x, y in union.exterior.coords]
            updated = Feature(id=survivor.id, set_id=set_id, geometry=ring,
                              source=survivor.source, state=survivor.state,
                              version=survivor.version + 1,
                              last_editor=survivor.last_editor,
                              tile_index=survivor.tile_index,
                              classification=survivor.classification,
                              created_at=survivor.created_at, updated_at=now)
            d = updated.to_dict()
            ops = [Op("put", "features", updated.id, d, ref=set_id,
                      ref2=_tile_key(updated.tile_index)),
                   Op("put", "feature_history", f"{updated.id}:{updated.version}",
                      {"feature": d, "correction": {"action": "merge"},
                       "stale": False}, ref=updated.id)]
            removed_ids = []
            for i in members[1:]:
                ops.append(Op("delete", "features", feats[i].id))
                removed_ids.append(feats[i].id)
            self._store.records.transact(ops)
            self._publish("feature.updated", {"feature": d}, set_data["raster_id"])
            for rid in removed_ids:
                self._publish("feature.removed", {"id": rid, "set_id": set_id},
                              set_data["raster_id"])
            merged += len(members) - 1
        return merged

    def wipe_model_features(self, set_id: str):
        """Remove model proposals (idempotent re-run support for inference)."""
        set_data = self.get_set(set_id)
        ops = []
        removed = []
        for f in self.features(set_id):
            if f.source == "model" and f.state == "proposed":
                ops.append(Op("delete", "features", f.id))
                removed.append(f.id)
        if ops:
            self._store.records.transact(ops)
            for rid in removed:
                self._publish("feature.removed", {"id": rid, "set_id": set_id},
                              set_data["raster_id"])


def _correction_dict(c: Correction, ts: float) -> dict:
    return {
        "action": c.action,
        "tile_index": list(c.tile_index) if c.tile_index else None,
        "feature_id": c.feature_id,
        "new_geometry": [[x, y] for x, y in c.new_geometry] if c.new_geometry else None,
        "user": c.user,
        "timestamp": ts,
        "basis_version": c.basis_version,
    }
