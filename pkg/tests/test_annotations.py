import numpy as np
import pytest

from pulse.annotations import Correction, normalize_ring
from pulse.errors import (InvalidGeometryError, InvalidPayloadError,
                          UnknownFeatureError, UnknownSetError, UnknownTileError)
from pulse.platform import Platform


def rect(x, y, w, h):
    return [(float(x), float(y)), (float(x + w), float(y)),
            (float(x + w), float(y + h)), (float(x), float(y + h)),
            (float(x), float(y))]


@pytest.fixture
def setup(tmp_path):
    platform = Platform(tmp_path / "data")
    pixels = np.zeros((700, 1000), dtype=np.uint8)
    raster = platform.rasters.ingest_array(pixels, 3857,
                                           [0.0, 1.0, 0.0, 0.0, 0.0, -1.0])
    set_data = platform.annotations.create_set(raster.id, model_id="model-x")
    yield platform, platform.annotations, raster, set_data["id"]
    platform.close()


class TestNormalizeRing:
    def test_auto_close(self):
        ring = normalize_ring([(0, 0), (2, 0), (2, 2), (0, 2)])
        assert ring[0] == ring[-1]
        assert len(ring) == 5

    def test_zero_area_rejected(self):
        with pytest.raises(InvalidGeometryError):
            normalize_ring([(0, 0), (1, 1), (2, 2), (0, 0)])

    def test_too_few_points(self):
        with pytest.raises(InvalidGeometryError):
            normalize_ring([(0, 0), (1, 1)])

    def test_self_intersection_rejected_when_strict(self):
        bowtie = [(0, 0), (2, 2), (2, 0), (0, 2), (0, 0)]
        with pytest.raises(InvalidGeometryError):
            normalize_ring(bowtie, strict=True)


class TestFeatures:
    def test_add_and_list(self, setup):
        _, ann, _, set_id = setup
        feats = ann.add_features(set_id, [rect(10, 10, 5, 5), rect(400, 10, 5, 5)],
                                 source="model", state="proposed", user="model:x",
                                 strict=False)
        assert [f.tile_index for f in feats] == [(0, 0), (1, 0)]
        assert all(f.version == 1 for f in feats)
        assert len(ann.features(set_id)) == 2
        assert len(ann.features(set_id, tile_index=(1, 0))) == 1

    def test_unknown_set(self, setup):
        _, ann, _, _ = setup
        with pytest.raises(UnknownSetError):
            ann.features("ghost")

    def test_analyst_cannot_be_proposed(self, setup):
        _, ann, _, set_id = setup
        with pytest.raises(Exception):
            ann.add_features(set_id, [rect(0, 0, 2, 2)], source="analyst",
                             state="proposed", user="alice")


class TestCorrections:
    def _one_feature(self, ann, set_id):
        return ann.add_features(set_id, [rect(10, 10, 20, 20)], source="model",
                                state="proposed", user="model:x", strict=False)[0]

    def test_reject_bumps_version(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        out = ann.apply_correction(set_id, Correction(
            action="reject", feature_id=feature.id, user="alice", basis_version=1))
        assert out.state == "rejected"
        assert out.version == 2
        history = ann.feature_history(feature.id)
        assert len(history) == 2

    def test_accept(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        out = ann.apply_correction(set_id, Correction(
            action="accept", feature_id=feature.id, user="alice"))
        assert out.state == "accepted"

    def test_add_with_collinear_triangle_rejected(self, setup):
        _, ann, _, set_id = setup
        with pytest.raises(InvalidGeometryError):
            ann.apply_correction(set_id, Correction(
                action="add", tile_index=(0, 0),
                new_geometry=[(0, 0), (5, 5), (10, 10), (0, 0)], user="alice"))

    def test_add_creates_analyst_feature(self, setup):
        _, ann, _, set_id = setup
        out = ann.apply_correction(set_id, Correction(
            action="add", tile_index=(1, 1), new_geometry=rect(350, 350, 10, 10),
            user="alice"))
        assert out.source == "analyst"
        assert out.state == "added"
        assert out.version == 1

    def test_modify_promotes_proposed_to_accepted(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        out = ann.apply_correction(set_id, Correction(
            action="modify", feature_id=feature.id,
            new_geometry=rect(12, 12, 18, 18), user="alice", basis_version=1))
        assert out.state == "accepted"
        assert out.version == 2
        assert out.geometry[0] == (12.0, 12.0)

    def test_concurrent_modify_last_writer_wins_history_keeps_both(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        ann.apply_correction(set_id, Correction(
            action="modify", feature_id=feature.id,
            new_geometry=rect(11, 11, 5, 5), user="alice", basis_version=1))
        # Bob modifies based on the same stale version 1; still applies.
        final = ann.apply_correction(set_id, Correction(
            action="modify", feature_id=feature.id,
            new_geometry=rect(15, 15, 5, 5), user="bob", basis_version=1))
        assert final.version == 3
        assert final.geometry[0] == (15.0, 15.0)
        assert final.last_editor == "bob"
        history = ann.feature_history(feature.id)
        assert len(history) == 3
        assert history[1]["feature"]["geometry"][0] == [11.0, 11.0]
        assert history[2]["stale"] is True

    def test_version_monotonicity_and_history_length(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        versions = [feature.version]
        for i in range(5):
            out = ann.apply_correction(set_id, Correction(
                action="modify", feature_id=feature.id,
                new_geometry=rect(10 + i, 10, 5, 5), user="alice"))
            versions.append(out.version)
        assert versions == [1, 2, 3, 4, 5, 6]
        assert len(ann.feature_history(feature.id)) == out.version

    def test_unknown_feature(self, setup):
        _, ann, _, set_id = setup
        with pytest.raises(UnknownFeatureError):
            ann.apply_correction(set_id, Correction(action="accept",
                                                    feature_id="ghost"))

    def test_add_requires_geometry_and_no_feature_id(self, setup):
        with pytest.raises(InvalidPayloadError):
            Correction(action="add", tile_index=(0, 0)).validate()
        with pytest.raises(InvalidPayloadError):
            Correction(action="add", tile_index=(0, 0), feature_id="f",
                       new_geometry=rect(0, 0, 1, 1)).validate()
        with pytest.raises(InvalidPayloadError):
            Correction(action="modify", feature_id="f").validate()

    def test_correction_marks_tile_corrected(self, setup):
        _, ann, _, set_id = setup
        feature = self._one_feature(ann, set_id)
        ann.apply_correction(set_id, Correction(action="accept",
                                                feature_id=feature.id))
        assert ann.get_set(set_id)["tiles"]["0,0"]["state"] == "corrected"


class TestReview:
    def test_mark_reviewed_and_fraction(self, setup):
        _, ann, _, set_id = setup
        ann.mark_tile_reviewed(set_id, (0, 0))
        assert ann.reviewed_tiles(set_id) == [(0, 0)]
        ann.mark_tile_reviewed(set_id, (1, 0))
        ann.mark_tile_reviewed(set_id, (2, 1))
        # 1000x700 partitions into 4x3 = 12 tiles.
        assert ann.reviewed_fraction(set_id) == pytest.approx(3 / 12)

    def test_idempotent_remark(self, setup):
        _, ann, _, set_id = setup
        ann.mark_tile_reviewed(set_id, (0, 0))
        ann.mark_tile_reviewed(set_id, (0, 0))
        assert ann.reviewed_tiles(set_id) == [(0, 0)]

    def test_unknown_tile(self, setup):
        _, ann, _, set_id = setup
        with pytest.raises(UnknownTileError):
            ann.mark_tile_reviewed(set_id, (99, 99))

    def test_adaptation_ground_truth_review_subset_soundness(self, setup):
        _, ann, _, set_id = setup
        # Reviewed tile (0,0): one accepted, one rejected, one added.
        accepted = ann.add_features(set_id, [rect(10, 10, 5, 5)], source="model",
                                    state="proposed", user="m", strict=False)[0]
        rejected = ann.add_features(set_id, [rect(30, 30, 5, 5)], source="model",
                                    state="proposed", user="m", strict=False)[0]
        ann.apply_correction(set_id, Correction(action="accept",
                                                feature_id=accepted.id))
        ann.apply_correction(set_id, Correction(action="reject",
                                                feature_id=rejected.id))
        ann.apply_correction(set_id, Correction(
            action="add", tile_index=(0, 0), new_geometry=rect(50, 50, 5, 5),
            user="alice"))
        # Unreviewed tile (1,0) gets an accepted feature that must NOT leak in.
        other = ann.add_features(set_id, [rect(400, 10, 5, 5)], source="model",
                                 state="proposed", user="m", strict=False)[0]
        ann.apply_correction(set_id, Correction(action="accept", feature_id=other.id))
        # A bare proposal on the reviewed tile must not leak either.
        ann.add_features(set_id, [rect(70, 70, 5, 5)], source="model",
                         state="proposed", user="m", strict=False)
        ann.mark_tile_reviewed(set_id, (0, 0))
        gt = ann.adaptation_ground_truth(set_id)
        assert set(gt) == {(0, 0)}
        states = sorted(f.state for f in gt[(0, 0)])
        assert states == ["accepted", "added"]


class TestExportImport:
    def test_empty_collection(self, setup):
        _, ann, _, set_id = setup
        assert ann.export_geojson(set_id) == {"type": "FeatureCollection",
                                              "features": []}

    def test_known_corner_coordinates(self, tmp_path):
        # Identity-style transform in EPSG:4326: pixel == degree.
        platform = Platform(tmp_path / "data2")
        pixels = np.zeros((300, 300), dtype=np.uint8)
        raster = platform.rasters.ingest_array(pixels, 4326,
                                               [10.0, 0.01, 0.0, 50.0, 0.0, -0.01])
        set_id = platform.annotations.create_set(raster.id)["id"]
        platform.annotations.add_features(
            set_id, [rect(100, 100, 50, 50)], source="analyst", state="accepted",
            user="alice")
        fc = platform.annotations.export_geojson(set_id)
        ring = fc["features"][0]["geometry"]["coordinates"][0]
        assert ring[0] == [pytest.approx(11.0), pytest.approx(49.0)]
        assert ring[2] == [pytest.approx(11.5), pytest.approx(48.5)]
        platform.close()

    def test_state_filter_excludes_rejected(self, setup):
        _, ann, _, set_id = setup
        a = ann.add_features(set_id, [rect(10, 10, 5, 5)], source="model",
                             state="proposed", user="m", strict=False)[0]
        ann.apply_correction(set_id, Correction(action="reject", feature_id=a.id))
        ann.apply_correction(set_id, Correction(
            action="add", tile_index=(0, 0), new_geometry=rect(40, 40, 5, 5),
            user="alice"))
        fc = ann.export_geojson(set_id, states=("accepted", "added"))
        assert len(fc["features"]) == 1
        assert fc["features"][0]["properties"]["state"] == "added"

    def test_round_trip_within_tolerance(self, setup):
        platform, ann, raster, set_id = setup
        ann.add_features(set_id, [rect(10, 10, 25, 17), rect(500, 300, 40, 8)],
                         source="analyst", state="accepted", user="alice")
        exported = ann.export_geojson(set_id)
        second = ann.create_set(raster.id)["id"]
        ann.import_geojson(second, exported, state="accepted")
        re_exported = ann.export_geojson(second)
        for f1, f2 in zip(exported["features"], re_exported["features"]):
            for (lon1, lat1), (lon2, lat2) in zip(
                    f1["geometry"]["coordinates"][0],
                    f2["geometry"]["coordinates"][0]):
                assert abs(lon1 - lon2) < 1e-9
                assert abs(lat1 - lat2) < 1e-9

    def test_import_rejects_holes(self, setup):
        _, ann, _, set_id = setup
        fc = {"type": "FeatureCollection", "features": [{
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [
                [[0, 0], [1e-4, 0], [1e-4, -1e-4], [0, -1e-4], [0, 0]],
                [[2e-5, -2e-5], [4e-5, -2e-5], [4e-5, -4e-5], [2e-5, -4e-5],
                 [2e-5, -2e-5]]]},
            "properties": {}}]}
        with pytest.raises(InvalidGeometryError):
            ann.import_geojson(set_id, fc)


class TestBorderMerge:
    def test_abutting_halves_merge_to_one_rectangle(self, setup):
        _, ann, _, set_id = setup
        # Structure straddling the x=300 tile border, detected as two halves.
        left = rect(290, 100, 10, 20)    # tile (0,0), right edge at 300
        right = rect(300, 100, 10, 20)   # tile (1,0), left edge at 300
        ann.add_features(set_id, [left], source="model", state="proposed",
                         user="m", tile_index=(0, 0), strict=False)
        ann.add_features(set_id, [right], source="model", state="proposed",
                         user="m", tile_index=(1, 0), strict=False)
        merged = ann.merge_border_features(set_id)
        assert merged == 1
        feats = ann.features(set_id)
        assert len(feats) == 1
        from pulse.detector import ring_area
        assert abs(ring_area(feats[0].geometry)) == pytest.approx(400.0)
        assert feats[0].version == 2

    def test_disjoint_features_unmerged(self, setup):
        _, ann, _, set_id = setup
        ann.add_features(set_id, [rect(10, 10, 5, 5)], source="model",
                         state="proposed", user="m", strict=False)
        ann.add_features(set_id, [rect(400, 10, 5, 5)], source="model",
                         state="proposed", user="m", strict=False)
        assert ann.merge_border_features(set_id) == 0
        assert len(ann.features(set_id)) == 2

    def test_three_way_chain_single_union(self, setup):
        _, ann, _, set_id = setup
        # A spans the (0,0)/(1,0) border, B fills (1,0) up to the next
        # border, C continues in (2,0): transitive chain -> one feature.
        a = rect(290, 100, 15, 10)   # 290..305, tile (0,0)
        b = rect(305, 100, 295, 10)  # 305..600, tile (1,0)
        c = rect(600, 100, 15, 10)   # 600..615, tile (2,0)
        ann.add_features(set_id, [a], source="model", state="proposed",
                         user="m", tile_index=(0, 0), strict=False)
        ann.add_features(set_id, [b], source="model", state="proposed",
                         user="m", tile_index=(1, 0), strict=False)
        ann.add_features(set_id, [c], source="model", state="proposed",
                         user="m", tile_index=(2, 0), strict=False)
        merged = ann.merge_border_features(set_id)
        assert merged == 2
        feats = ann.features(set_id)
        assert len(feats) == 1
        from pulse.detector import ring_area
        assert abs(ring_area(feats[0].geometry)) == pytest.approx(325 * 10)

    def test_same_tile_overlaps_not_merged(self, setup):
        _, ann, _, set_id = setup
        ann.add_features(set_id, [rect(10, 10, 20, 20), rect(15, 15, 20, 20)],
                         source="model", state="proposed", user="m",
                         tile_index=(0, 0), strict=False)
        assert ann.merge_border_features(set_id) == 0

    def test_earliest_id_survives(self, setup):
        _, ann, _, set_id = setup
        first = ann.add_features(set_id, [rect(295, 10, 5, 5)], source="model",
                                 state="proposed", user="m", tile_index=(0, 0),
                                 strict=False)[0]
        ann.add_features(set_id, [rect(300, 10, 5, 5)], source="model",
                         state="proposed", user="m", tile_index=(1, 0),
                         strict=False)
        ann.merge_border_features(set_id)
        feats = ann.features(set_id)
        assert [f.id for f in feats] == [first.id]
