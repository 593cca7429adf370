"""Object-level and pixel-level detection evaluation.

Terminology follows remote-sensing usage: "completion rate" is
object-level recall against validated ground truth, "user accuracy" is
object-level precision. Both are computed from a deterministic greedy
one-to-one matching of detections to ground-truth polygons by IoU.

All functions are pure and safe to call from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from shapely.geometry import Polygon
from shapely.validation import make_valid

from .errors import InvalidGeometryError, ShapeMismatchError, ValidationError

Ring = Sequence[tuple[float, float]]

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class MatchResult:
    """One-to-one matching between ground truth and detections."""

    pairs: list[tuple[Any, Any, float]]  # (gt_id, det_id, iou)
    unmatched_gt: list[Any]
    unmatched_det: list[Any]
    iou_threshold: float

    @property
    def n_matched(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class MetricsReport:
    completion_rate: float | None
    user_accuracy: float | None
    f1: float | None
    pixel_accuracy: float | None
    counts: tuple[int, int, int]  # (n_gt, n_det, n_matched)

    def to_dict(self) -> dict:
        n_gt, n_det, n_matched = self.counts
        return {
            "completion_rate": self.completion_rate,
            "user_accuracy": self.user_accuracy,
            "f1": self.f1,
            "pixel_accuracy": self.pixel_accuracy,
            "counts": {"n_gt": n_gt, "n_det": n_det, "n_matched": n_matched},
        }


def _as_polygon(ring: Ring) -> Polygon:
    pts = list(ring)
    if len(pts) < 4:
        raise InvalidGeometryError(f"ring must have >= 4 points, got {len(pts)}")
    poly = Polygon(pts)
    if poly.area <= 0.0:
        raise InvalidGeometryError("polygon has zero area")
    if not poly.is_valid:
        # Self-touching rings (pixel-outline pinches) are repaired; anything
        # that repairs to zero area is genuinely degenerate.
        poly = make_valid(poly)
        if poly.area <= 0.0:
            raise InvalidGeometryError("polygon is degenerate")
    return poly


def polygon_iou(a: Ring, b: Ring) -> float:
    """Intersection-over-union of two simple polygons; 0.0 when disjoint.

    Operands are put in a canonical order first so the result is exactly
    symmetric (clipping is not bit-symmetric in operand order).
    """
    pa, pb = _as_polygon(a), _as_polygon(b)
    if pb.wkb < pa.wkb:
        pa, pb = pb, pa
    inter = pa.intersection(pb).area
    if inter == 0.0:
        return 0.0
    union = pa.union(pb).area
    return inter / union


def _bbox(ring: Ring) -> tuple[float, float, float, float]:
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    return min(xs), min(ys), max(xs), max(ys)


def _bbox_overlaps(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def match_detections(gt: Sequence[Ring], det: Sequence[Ring],
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                     gt_ids: Sequence | None = None,
                     det_ids: Sequence | None = None) -> MatchResult:
    """Greedy one-to-one matching by descending IoU among pairs >= threshold.

    Ties are broken by (gt id, det id) order so the matching is
    deterministic. Greedy can be suboptimal in cardinality; the gap versus
    an optimal matcher is measured in the test suite, not assumed zero.
    """
    gt_ids = list(gt_ids) if gt_ids is not None else list(range(len(gt)))
    det_ids = list(det_ids) if det_ids is not None else list(range(len(det)))
    if len(gt_ids) != len(gt) or len(det_ids) != len(det):
        raise ShapeMismatchError("id list length must match geometry list length")

    gt_boxes = [_bbox(r) for r in gt]
    det_boxes = [_bbox(r) for r in det]
    candidates = []
    for i, g in enumerate(gt):
        for j, d in enumerate(det):
            if not _bbox_overlaps(gt_boxes[i], det_boxes[j]):
                continue
            iou = polygon_iou(g, d)
            if iou >= iou_threshold:
                candidates.append((iou, i, j))
    candidates.sort(key=lambda c: (-c[0], gt_ids[c[1]], det_ids[c[2]]))

    pairs = []
    used_gt: set[int] = set()
    used_det: set[int] = set()
    for iou, i, j in candidates:
        if i in used_gt or j in used_det:
            continue
        used_gt.add(i)
        used_det.add(j)
        pairs.append((gt_ids[i], det_ids[j], iou))
    unmatched_gt = [gt_ids[i] for i in range(len(gt)) if i not in used_gt]
    unmatched_det = [det_ids[j] for j in range(len(det)) if j not in used_det]
    return MatchResult(pairs=pairs, unmatched_gt=unmatched_gt,
                       unmatched_det=unmatched_det, iou_threshold=iou_threshold)


def f1_from_counts(n_gt: int, n_det: int, n_matched: int) -> float:
    """F1 over pooled counts; 1.0 when there is nothing to find and nothing found."""
    if n_gt == 0 and n_det == 0:
        return 1.0
    if n_matched == 0:
        return 0.0
    precision = n_matched / n_det
    recall = n_matched / n_gt
    return 2.0 * precision * recall / (precision + recall)


def objects_report(gt: Sequence[Ring], det: Sequence[Ring],
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                   gt_ids: Sequence | None = None,
                   det_ids: Sequence | None = None) -> MetricsReport:
    match = match_detections(gt, det, iou_threshold, gt_ids=gt_ids, det_ids=det_ids)
    n_gt, n_det, n_matched = len(gt), len(det), match.n_matched
    completion = n_matched / n_gt if n_gt > 0 else None
    user_acc = n_matched / n_det if n_det > 0 else None
    f1 = None
    if completion is not None and user_acc is not None:
        f1 = f1_from_counts(n_gt, n_det, n_matched)
    return MetricsReport(completion_rate=completion, user_accuracy=user_acc,
                         f1=f1, pixel_accuracy=None,
                         counts=(n_gt, n_det, n_matched))


def pixels_report(gt_mask: np.ndarray, det_mask: np.ndarray) -> MetricsReport:
    gt_mask = np.asarray(gt_mask, dtype=bool)
    det_mask = np.asarray(det_mask, dtype=bool)
    if gt_mask.shape != det_mask.shape:
        raise ShapeMismatchError(
            f"mask shapes differ: {gt_mask.shape} vs {det_mask.shape}")
    agree = int(np.count_nonzero(gt_mask == det_mask))
    accuracy = agree / gt_mask.size if gt_mask.size else 1.0
    return MetricsReport(completion_rate=None, user_accuracy=None, f1=None,
                         pixel_accuracy=accuracy, counts=(0, 0, 0))


def compute_report(gt, det, mode: str = "objects",
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MetricsReport:
    """Dispatch to object-level (polygon lists) or pixel-level (masks) scoring."""
    if mode == "objects":
        return objects_report(gt, det, iou_threshold)
    if mode == "pixels":
        return pixels_report(gt, det)
    raise ValidationError(f"unknown report mode {mode!r}")
