import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulse.errors import InvalidGeometryError, ShapeMismatchError
from pulse.metrics import (compute_report, f1_from_counts,
                           match_detections, objects_report, pixels_report,
                           polygon_iou)

UNIT_SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]


def square(x, y, side=1.0):
    return [(x, y), (x + side, y), (x + side, y + side), (x, y + side), (x, y)]


def points_in_ring(xs, ys, ring):
    """Vectorized even-odd ray casting; independent of shapely."""
    inside = np.zeros(xs.shape, dtype=bool)
    pts = ring[:-1] if ring[0] == ring[-1] else list(ring)
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        crosses = (y0 > ys) != (y1 > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x1 - x0) * (ys - y0) / (y1 - y0) + x0
        inside ^= crosses & (xs < xint)
    return inside


def rasterized_iou(a, b, resolution=400):
    """Grid-sampled IoU oracle over the union bounding box."""
    allx = [p[0] for p in a] + [p[0] for p in b]
    ally = [p[1] for p in a] + [p[1] for p in b]
    pad = 1e-6
    gx = np.linspace(min(allx) - pad, max(allx) + pad, resolution)
    gy = np.linspace(min(ally) - pad, max(ally) + pad, resolution)
    xs, ys = np.meshgrid(gx, gy)
    in_a = points_in_ring(xs, ys, a)
    in_b = points_in_ring(xs, ys, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def random_convex_polygon(rng, center, scale):
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=int(rng.integers(3, 9))))
    radii = rng.uniform(0.3 * scale, scale, size=angles.size)
    pts = [(center[0] + r * np.cos(a), center[1] + r * np.sin(a))
           for a, r in zip(angles, radii)]
    pts.append(pts[0])
    return pts


def optimal_match_count(gt, det, threshold=0.5):
    """Maximum-cardinality matching via scipy (independent of the greedy path)."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_bipartite_matching

    rows, cols = [], []
    for i, g in enumerate(gt):
        for j, d in enumerate(det):
            if polygon_iou(g, d) >= threshold:
                rows.append(i)
                cols.append(j)
    if not rows:
        return 0
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)),
                       shape=(len(gt), len(det)))
    matching = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.count_nonzero(matching >= 0))


class TestPolygonIoU:
    def test_identical_unit_squares(self):
        assert polygon_iou(UNIT_SQUARE, list(UNIT_SQUARE)) == 1.0

    def test_disjoint_squares(self):
        assert polygon_iou(square(0, 0), square(5, 5)) == 0.0

    def test_half_offset_is_one_third(self):
        assert polygon_iou(square(0, 0), square(0.5, 0)) == pytest.approx(1 / 3)

    def test_symmetry_exact(self, rng):
        for _ in range(50):
            a = random_convex_polygon(rng, rng.uniform(0, 4, 2), 2.0)
            b = random_convex_polygon(rng, rng.uniform(0, 4, 2), 2.0)
            assert polygon_iou(a, b) == polygon_iou(b, a)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(InvalidGeometryError):
            polygon_iou([(0, 0), (1, 1), (2, 2), (0, 0)], UNIT_SQUARE)

    def test_matches_rasterized_oracle(self, rng):
        for _ in range(25):
            a = random_convex_polygon(rng, rng.uniform(0, 3, 2), 2.0)
            b = random_convex_polygon(rng, rng.uniform(0, 3, 2), 2.0)
            assert polygon_iou(a, b) == pytest.approx(rasterized_iou(a, b), abs=1e-2)


class TestMatching:
    def test_empty_gt_leaves_all_detections_unmatched(self):
        result = match_detections([], [square(0, 0), square(3, 0)])
        assert result.pairs == []
        assert result.unmatched_det == [0, 1]

    def test_two_of_three_matched(self):
        gt = [square(0, 0), square(5, 0), square(10, 0)]
        det = [square(0, 0), square(5, 0)]
        result = match_detections(gt, det)
        assert result.n_matched == 2
        assert result.unmatched_gt == [2]
        assert optimal_match_count(gt, det) == 2

    def test_best_iou_wins_competition(self):
        gt = [square(0, 0, 10)]
        strong = [(0, 0), (10, 0), (10, 9), (0, 9), (0, 0)]   # IoU 0.9
        weak = [(0, 0), (10, 0), (10, 6), (0, 6), (0, 0)]     # IoU 0.6
        result = match_detections(gt, [weak, strong])
        assert result.pairs == [(0, 1, pytest.approx(0.9))]
        assert result.unmatched_det == [0]

    def test_one_to_one_invariant(self, rng):
        for _ in range(50):
            gt = [square(rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(1, 3))
                  for _ in range(int(rng.integers(0, 8)))]
            det = [square(rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(1, 3))
                   for _ in range(int(rng.integers(0, 8)))]
            result = match_detections(gt, det)
            gt_ids = [p[0] for p in result.pairs]
            det_ids = [p[1] for p in result.pairs]
            assert len(gt_ids) == len(set(gt_ids))
            assert len(det_ids) == len(set(det_ids))
            for _, _, iou in result.pairs:
                assert iou >= result.iou_threshold

    def test_greedy_never_beats_optimal(self, rng):
        equal = 0
        n = 150
        for _ in range(n):
            gt = [square(rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(1, 3))
                  for _ in range(int(rng.integers(1, 9)))]
            det = [square(rng.uniform(0, 6), rng.uniform(0, 6), rng.uniform(1, 3))
                   for _ in range(int(rng.integers(1, 9)))]
            greedy = match_detections(gt, det).n_matched
            optimal = optimal_match_count(gt, det)
            assert greedy <= optimal
            equal += greedy == optimal
        assert equal / n >= 0.95

    def test_deterministic_tie_break_by_ids(self):
        gt = [square(0, 0), square(0, 0)]
        det = [square(0, 0)]
        result = match_detections(gt, det, gt_ids=["g-b", "g-a"], det_ids=["d"])
        assert result.pairs == [("g-a", "d", 1.0)]


class TestReports:
    def test_perfect_detections(self):
        gt = [square(0, 0), square(3, 3)]
        report = objects_report(gt, list(gt))
        assert report.completion_rate == 1.0
        assert report.user_accuracy == 1.0
        assert report.f1 == 1.0

    def test_formula_arithmetic(self):
        gt = [square(0, 0), square(5, 0), square(10, 0)]
        det = [square(0, 0), square(5, 0)]
        report = objects_report(gt, det)
        assert report.completion_rate == pytest.approx(2 / 3)
        assert report.user_accuracy == 1.0
        assert report.f1 == pytest.approx(0.8)
        assert report.counts == (3, 2, 2)

    def test_empty_sides(self):
        report = objects_report([], [])
        assert report.completion_rate is None
        assert report.user_accuracy is None

    def test_all_false_masks_are_perfectly_accurate(self):
        report = compute_report(np.zeros((4, 4), bool), np.zeros((4, 4), bool),
                                mode="pixels")
        assert report.pixel_accuracy == 1.0

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            pixels_report(np.zeros((4, 4), bool), np.zeros((5, 4), bool))

    def test_pixel_accuracy_counts_agreement(self):
        gt = np.zeros((10, 10), bool)
        gt[:5] = True
        det = np.zeros((10, 10), bool)
        det[:4] = True
        assert pixels_report(gt, det).pixel_accuracy == pytest.approx(0.9)

    def test_scale_invariance(self, rng):
        gt = [square(rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(1, 3))
              for _ in range(6)]
        det = [square(rng.uniform(0, 8), rng.uniform(0, 8), rng.uniform(1, 3))
               for _ in range(6)]
        base = objects_report(gt, det)
        for s in (2.0, 0.5, 8.0):
            scaled = objects_report(
                [[(x * s, y * s) for x, y in ring] for ring in gt],
                [[(x * s, y * s) for x, y in ring] for ring in det])
            assert scaled.counts == base.counts
            assert scaled.f1 == pytest.approx(base.f1)

    def test_monotonicity_adding_matching_detection(self, rng):
        for _ in range(30):
            gt = [square(i * 4, 0) for i in range(int(rng.integers(2, 6)))]
            det = [square(i * 4, 0) for i in range(int(rng.integers(0, 2)))]
            before = objects_report(gt, det).completion_rate
            missing = len(det)
            det2 = det + [square(missing * 4, 0)]
            after = objects_report(gt, det2).completion_rate
            assert after >= before

    @settings(max_examples=100, deadline=None)
    @given(n_gt=st.integers(0, 50), n_det=st.integers(0, 50))
    def test_f1_counts_bounds(self, n_gt, n_det):
        n_matched = min(n_gt, n_det)
        f1 = f1_from_counts(n_gt, n_det, n_matched)
        assert 0.0 <= f1 <= 1.0
