"""Collaborative satellite image analysis platform.

Raster ingestion and tiling, pluggable detectors over 300x300 analysis
tiles, analyst corrections with live collaboration, model adaptation in a
lineage tree, object-level metrics, and GeoJSON export — served over HTTP
and WebSocket with a durable job queue between service and workers.
"""

from .adapt import AdaptSearchSpace, adapt
from .annotations import AnnotationService, Correction, Feature
from .detector import (DetectorParams, detect_tile, flood_map,
                       generic_flood_params, generic_structure_params,
                       otsu_threshold)
from .errors import PulseError
from .geo import GeoTransform, TileAddress, geo_to_pixel, lonlat_to_tile, pixel_to_geo
from .metrics import (MatchResult, MetricsReport, compute_report,
                      match_detections, polygon_iou)
from .orchestrator import Job, JobQueue, WorkerSession
from .platform import Platform
from .raster import (AnalysisTile, Raster, ingest_png, partition_analysis_tiles,
                     render_display_tile)
from .registry import AdaptationRecord, ModelNode, ModelRegistry
from .scenes import (CampSceneSpec, RiverSceneSpec, SyntheticScene,
                     generate_synthetic_scene)
from .store import Store
from .worker import ReferenceWorker

__version__ = "0.1.0"

__all__ = [
    "AdaptSearchSpace", "adapt",
    "AnnotationService", "Correction", "Feature",
    "DetectorParams", "detect_tile", "flood_map",
    "generic_flood_params", "generic_structure_params", "otsu_threshold",
    "PulseError",
    "GeoTransform", "TileAddress", "geo_to_pixel", "lonlat_to_tile", "pixel_to_geo",
    "MatchResult", "MetricsReport", "compute_report", "match_detections",
    "polygon_iou",
    "Job", "JobQueue", "WorkerSession",
    "Platform",
    "AnalysisTile", "Raster", "ingest_png", "partition_analysis_tiles",
    "render_display_tile",
    "AdaptationRecord", "ModelNode", "ModelRegistry",
    "CampSceneSpec", "RiverSceneSpec", "SyntheticScene", "generate_synthetic_scene",
    "Store",
    "ReferenceWorker",
    "__version__",
]
