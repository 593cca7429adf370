import math

import numpy as np
import pytest

from pulse.adapt import AdaptSearchSpace, adapt
from pulse.detector import DetectorParams, detect_tile
from pulse.errors import EmptyTrainingSetError, InvalidParamsError


def tile_with_squares(value, squares, size=300):
    tile = np.zeros((size, size), dtype=np.uint8)
    gt = []
    for x, y, s in squares:
        tile[y:y + s, x:x + s] = value
        gt.append([(float(x), float(y)), (float(x + s), float(y)),
                   (float(x + s), float(y + s)), (float(x), float(y + s)),
                   (float(x), float(y))])
    return tile, gt


class TestSearchSpace:
    def test_default_grids_non_empty(self):
        space = AdaptSearchSpace().validate()
        assert "otsu" in space.thresholds
        assert math.inf in space.max_areas

    def test_empty_grid_rejected(self):
        with pytest.raises(InvalidParamsError):
            AdaptSearchSpace(thresholds=()).validate()

    def test_parent_always_first_candidate(self):
        parent = DetectorParams(threshold=123, open_radius=1, min_area=33,
                                max_area=1234)
        candidates = AdaptSearchSpace().candidates(parent)
        assert candidates[0] == parent
        assert len(set(c.sort_key() for c in candidates)) == len(candidates)

    def test_dict_round_trip(self):
        space = AdaptSearchSpace(thresholds=(60, "otsu"), max_areas=(100, math.inf))
        loaded = AdaptSearchSpace.from_dict(space.to_dict())
        assert loaded == space


class TestAdapt:
    def test_empty_training_set_rejected(self):
        with pytest.raises(EmptyTrainingSetError):
            adapt(DetectorParams(), [])

    def test_parent_already_optimal_keeps_parent(self):
        tile, gt = tile_with_squares(200, [(40, 40, 12), (100, 100, 14)])
        parent = DetectorParams(threshold=128, open_radius=0, min_area=50,
                                max_area=5000)
        result = adapt(parent, [(tile, gt)])
        assert result.selected == parent
        assert result.after_f1 == result.before_f1 == 1.0

    def test_threshold_learned_from_dim_structures(self):
        # Structures at intensity 100; parent threshold 128 sees nothing.
        tile, gt = tile_with_squares(100, [(40, 40, 12), (120, 80, 14),
                                           (200, 200, 10)])
        parent = DetectorParams(threshold=128, open_radius=0, min_area=50,
                                max_area=5000)
        space = AdaptSearchSpace(thresholds=(128, 90), open_radii=(0,),
                                 min_areas=(50,), max_areas=(5000,))
        result = adapt(parent, [(tile, gt)], space)
        assert result.before_f1 == 0.0
        assert result.after_f1 == 1.0
        assert result.selected.threshold == 90
        detections = detect_tile(tile, result.selected)
        assert len(detections) == 3

    def test_after_never_below_before(self, rng):
        for _ in range(10):
            squares = [(int(rng.integers(10, 250)), int(rng.integers(10, 250)),
                        int(rng.integers(6, 20)))]
            tile, gt = tile_with_squares(int(rng.integers(80, 250)), squares)
            parent = DetectorParams(threshold=int(rng.integers(0, 255)),
                                    open_radius=int(rng.integers(0, 3)),
                                    min_area=20)
            result = adapt(parent, [(tile, gt)],
                           AdaptSearchSpace(thresholds=(60, 140, 220),
                                            open_radii=(0, 1),
                                            min_areas=(20,),
                                            max_areas=(math.inf,)))
            assert result.after_f1 >= result.before_f1

    def test_tie_break_prefers_fewest_changes(self):
        # Parent detects everything already; an equally-scoring candidate
        # differing in more fields must not win.
        tile, gt = tile_with_squares(200, [(50, 50, 12)])
        parent = DetectorParams(threshold=128, open_radius=1, min_area=50,
                                max_area=5000)
        space = AdaptSearchSpace(thresholds=(128, 100), open_radii=(1, 2),
                                 min_areas=(50, 20), max_areas=(5000,))
        result = adapt(parent, [(tile, gt)])
        assert result.selected == parent

    def test_search_log_covers_all_candidates(self):
        tile, gt = tile_with_squares(200, [(50, 50, 12)])
        parent = DetectorParams(threshold=128, open_radius=0, min_area=50,
                                max_area=5000)
        space = AdaptSearchSpace(thresholds=(128, 90), open_radii=(0, 1),
                                 min_areas=(50,), max_areas=(5000,))
        result = adapt(parent, [(tile, gt)], space)
        assert len(result.search_log) == len(space.candidates(parent))
        assert result.search_log[0][0] == parent

    def test_multiple_tiles_pooled(self):
        tile_a, gt_a = tile_with_squares(200, [(40, 40, 12)])
        tile_b, gt_b = tile_with_squares(100, [(60, 60, 12)])
        parent = DetectorParams(threshold=150, open_radius=0, min_area=50,
                                max_area=5000)
        space = AdaptSearchSpace(thresholds=(150, 80), open_radii=(0,),
                                 min_areas=(50,), max_areas=(5000,))
        result = adapt(parent, [(tile_a, gt_a), (tile_b, gt_b)], space)
        # Threshold 80 catches both structure populations.
        assert result.selected.threshold == 80
        assert result.after_f1 == 1.0

    def test_deterministic_selection(self):
        tile, gt = tile_with_squares(100, [(40, 40, 12)])
        parent = DetectorParams(threshold=128, open_radius=0, min_area=20)
        results = [adapt(parent, [(tile, gt)]) for _ in range(2)]
        assert results[0].selected == results[1].selected
        assert results[0].search_log == results[1].search_log
