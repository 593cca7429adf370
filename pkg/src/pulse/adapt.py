"""Detector adaptation: exhaustive parameter search over corrected tiles.

"Fine-tuning" a model here means searching a parameter grid for the
candidate maximizing pooled F1 (IoU-matched at 0.5) against the analyst's
corrected tiles. The parent's own parameters are always a candidate, so
the selected F1 can never be worse than the parent's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dataclass_fields
from typing import Sequence

import numpy as np

from . import metrics
from .detector import DetectorParams, Ring, detect_tile
from .errors import EmptyTrainingSetError, InvalidParamsError

# Grid defaults: coarse intensity sweep around the 8-bit range plus the
# automatic threshold, small opening radii, and the area bounds that matter
# for shelter-scale structures.
DEFAULT_THRESHOLDS: tuple = ("otsu", 60, 80, 100, 120, 140, 160, 180, 200)
DEFAULT_OPEN_RADII: tuple = (0, 1, 2)
DEFAULT_MIN_AREAS: tuple = (20, 50, 100)
DEFAULT_MAX_AREAS: tuple = (5000, math.inf)


@dataclass(frozen=True)
class AdaptSearchSpace:
    thresholds: tuple = DEFAULT_THRESHOLDS
    open_radii: tuple = DEFAULT_OPEN_RADII
    min_areas: tuple = DEFAULT_MIN_AREAS
    max_areas: tuple = DEFAULT_MAX_AREAS

    def validate(self) -> "AdaptSearchSpace":
        for name in ("thresholds", "open_radii", "min_areas", "max_areas"):
            if not getattr(self, name):
                raise InvalidParamsError(f"search space grid {name} is empty")
        return self

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "open_radii": list(self.open_radii),
            "min_areas": list(self.min_areas),
            "max_areas": [None if math.isinf(v) else v for v in self.max_areas],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdaptSearchSpace":
        if not isinstance(data, dict):
            raise InvalidParamsError("search space must be an object")
        kwargs = {}
        for key in ("thresholds", "open_radii", "min_areas", "max_areas"):
            if key in data:
                vals = data[key]
                if key == "max_areas":
                    vals = [math.inf if v is None else v for v in vals]
                kwargs[key] = tuple(vals)
        unknown = set(data) - {"thresholds", "open_radii", "min_areas", "max_areas"}
        if unknown:
            raise InvalidParamsError(f"unknown search space keys: {sorted(unknown)}")
        return cls(**kwargs).validate()

    def candidates(self, parent: DetectorParams) -> list[DetectorParams]:
        """Grid product, parent first, deduplicated, deterministic order."""
        self.validate()
        out = [parent.validate()]
        seen = {parent.sort_key()}
        for thr in self.thresholds:
            for radius in self.open_radii:
                for min_area in self.min_areas:
                    for max_area in self.max_areas:
                        cand = parent.with_changes(
                            threshold=thr if isinstance(thr, str) else int(thr),
                            open_radius=int(radius),
                            min_area=float(min_area),
                            max_area=float(max_area))
                        key = cand.sort_key()
                        if key not in seen:
                            seen.add(key)
                            out.append(cand)
        return out


@dataclass(frozen=True)
class AdaptResult:
    selected: DetectorParams
    before_f1: float
    after_f1: float
    search_log: list[tuple[DetectorParams, float]]
    before_report: metrics.MetricsReport
    after_report: metrics.MetricsReport


TrainingTile = tuple[np.ndarray, Sequence[Ring]]  # (pixels, ground-truth rings)


def _param_changes(candidate: DetectorParams, parent: DetectorParams) -> int:
    return sum(1 for f in dataclass_fields(DetectorParams)
               if getattr(candidate, f.name) != getattr(parent, f.name))


def _score(candidate: DetectorParams, tiles: Sequence[TrainingTile],
           iou_threshold: float) -> tuple[float, metrics.MetricsReport]:
    n_gt = n_det = n_matched = 0
    for pixels, gt_rings in tiles:
        detected = detect_tile(pixels, candidate)
        match = metrics.match_detections(list(gt_rings), detected, iou_threshold)
        n_gt += len(gt_rings)
        n_det += len(detected)
        n_matched += match.n_matched
    f1 = metrics.f1_from_counts(n_gt, n_det, n_matched)
    report = metrics.MetricsReport(
        completion_rate=n_matched / n_gt if n_gt else None,
        user_accuracy=n_matched / n_det if n_det else None,
        f1=f1, pixel_accuracy=None, counts=(n_gt, n_det, n_matched))
    return f1, report


def adapt(parent: DetectorParams, tiles: Sequence[TrainingTile],
          space: AdaptSearchSpace | None = None,
          iou_threshold: float = metrics.DEFAULT_IOU_THRESHOLD) -> AdaptResult:
    """Exhaustive grid search maximizing pooled F1 over the corrected tiles.

    Ties are broken by fewest parameter changes from the parent, then by
    the deterministic parameter order, so repeated runs select the same
    candidate. Raises when no corrected tiles are supplied.
    """
    tiles = list(tiles)
    if not tiles:
        raise EmptyTrainingSetError("adaptation needs at least one corrected tile")
    space = (space or AdaptSearchSpace()).validate()
    parent = parent.validate()

    search_log: list[tuple[DetectorParams, float]] = []
    reports: dict[int, metrics.MetricsReport] = {}
    for i, candidate in enumerate(space.candidates(parent)):
        f1, report = _score(candidate, tiles, iou_threshold)
        search_log.append((candidate, f1))
        reports[i] = report

    best_i = min(
        range(len(search_log)),
        key=lambda i: (-search_log[i][1],
                       _param_changes(search_log[i][0], parent),
                       search_log[i][0].sort_key()))
    selected, after_f1 = search_log[best_i]
    before_f1 = search_log[0][1]  # parent is always candidate 0
    return AdaptResult(selected=selected, before_f1=before_f1, after_f1=after_f1,
                       search_log=search_log, before_report=reports[0],
                       after_report=reports[best_i])
