"""Geometry: projection, city loading, and the spatial index.

The point-in-polygon and query oracles here are written from scratch
(ray casting, linear scans) so index results are checked against an
independent implementation rather than the library under test.
"""

import json
import math

import numpy as np
import pytest

from poisim.errors import ConfigError, DataError, GeoParseError
from poisim.geo import (
    Projection,
    SpatialIndex,
    build_index,
    distance,
    load_city,
    nearest_pois,
)

from conftest import LON0, LAT0, quadrant_boundary, write_city


def ray_cast(ring, x, y):
    """Classic even-odd crossing test; points on edges are not our concern
    because test points are drawn away from the boundary lines."""
    inside = False
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside


def brute_nearest(positions, ids, point, k):
    d = np.sqrt(((positions - point) ** 2).sum(axis=1))
    order = sorted(range(len(ids)), key=lambda i: (d[i], ids[i]))
    return [(ids[i], d[i]) for i in order[:k]]


def brute_radius(positions, ids, point, r):
    d = np.sqrt(((positions - point) ** 2).sum(axis=1))
    hits = [i for i in range(len(ids)) if d[i] <= r]
    hits.sort(key=lambda i: (d[i], ids[i]))
    return [(ids[i], d[i]) for i in hits]


class TestProjection:
    def test_round_trip(self):
        proj = Projection("equirectangular", lon0=LON0, lat0=LAT0)
        rng = np.random.default_rng(0)
        lonlat = np.column_stack([
            LON0 + rng.uniform(-0.2, 0.2, 200),
            LAT0 + rng.uniform(-0.15, 0.15, 200),
        ])
        back = proj.inverse(proj.forward(lonlat))
        assert np.allclose(back, lonlat, atol=1e-9)

    def test_local_scale_is_metric(self):
        # one degree of latitude is ~111.2 km on the sphere used here
        proj = Projection("equirectangular", lon0=LON0, lat0=LAT0)
        a = proj.forward(np.array([[LON0, LAT0]]))[0]
        b = proj.forward(np.array([[LON0, LAT0 + 1.0]]))[0]
        assert abs(distance(a, b) - 6_371_000 * math.pi / 180) < 1.0

    def test_identity_projection(self):
        proj = Projection("none", lon0=0.0, lat0=0.0)
        pts = np.array([[3.0, 4.0], [-1.0, 2.5]])
        assert np.array_equal(proj.forward(pts), pts)
        assert np.array_equal(proj.inverse(pts), pts)


class TestLoadCity:
    def test_loads_and_projects(self, small_city):
        city, pois, report = load_city(small_city["boundary"], small_city["pois"])
        assert report.loaded == 1200
        assert report.dropped == 0
        assert report.lines() == ["dropped: 0", "loaded: 1200"]
        assert len(city.neighborhoods) == 4
        # all loaded POIs are inside the boundary
        xs = np.array([p.position[0] for p in pois])
        ys = np.array([p.position[1] for p in pois])
        assert city.contains_xy(xs, ys).all()

    def test_neighborhood_assignment_matches_ray_cast(self, small_city, tmp_path):
        city, pois, _ = load_city(small_city["boundary"], small_city["pois"])
        doc = json.loads(small_city["boundary"].read_text())
        rng = np.random.default_rng(5)
        for p in [pois[int(i)] for i in rng.integers(0, len(pois), 80)]:
            lonlat = city.projection.inverse(np.array([p.position]))[0]
            expected = None
            for idx, feat in enumerate(doc["features"]):
                ring = feat["geometry"]["coordinates"][0]
                if ray_cast(ring, lonlat[0], lonlat[1]):
                    expected = feat["properties"]["name"]
                    break
            if expected is not None:
                assert p.neighborhood_id == expected

    def test_out_of_boundary_pois_dropped(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps(quadrant_boundary(0.05, 0.05)))
        features = [
            {"type": "Feature",
             "properties": {"poi_id": "in-1", "category": "park"},
             "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}},
            {"type": "Feature",
             "properties": {"poi_id": "out-1", "category": "park"},
             "geometry": {"type": "Point", "coordinates": [LON0 + 1.0, LAT0]}},
        ]
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": features}))
        _, locs, report = load_city(boundary, pois)
        assert [p.poi_id for p in locs] == ["in-1"]
        assert report.dropped == 1
        assert report.lines() == ["dropped: 1", "loaded: 1"]

    def test_poi_properties_carried(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps(quadrant_boundary(0.05, 0.05)))
        features = [{
            "type": "Feature",
            "properties": {"poi_id": "a", "category": "gym",
                           "occupancy": 33, "spread_probability": 0.42},
            "geometry": {"type": "Point", "coordinates": [LON0, LAT0]},
        }]
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": features}))
        _, locs, _ = load_city(boundary, pois)
        assert locs[0].occupancy == 33
        assert locs[0].spread_probability == 0.42

    def test_invalid_poi_rows_warned_and_skipped(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps(quadrant_boundary(0.05, 0.05)))
        features = [
            {"type": "Feature", "properties": {"category": "park"},  # no id
             "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}},
            {"type": "Feature", "properties": {"poi_id": "x"},  # no category
             "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}},
            {"type": "Feature",
             "properties": {"poi_id": "ok", "category": "park"},
             "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}},
        ]
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": features}))
        _, locs, report = load_city(boundary, pois)
        assert [p.poi_id for p in locs] == ["ok"]
        assert len(report.warnings) == 2

    def test_duplicate_poi_id_rejected(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps(quadrant_boundary(0.05, 0.05)))
        feat = {"type": "Feature",
                "properties": {"poi_id": "dup", "category": "park"},
                "geometry": {"type": "Point", "coordinates": [LON0, LAT0]}}
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": [feat, feat]}))
        with pytest.raises(DataError, match="dup"):
            load_city(boundary, pois)

    def test_boundary_without_polygons_rejected(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps({"type": "FeatureCollection",
                                        "features": []}))
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": []}))
        with pytest.raises(ConfigError):
            load_city(boundary, pois)

    def test_malformed_polygon_names_feature(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        bad = {"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {},
             "geometry": {"type": "Polygon", "coordinates": "oops"}},
        ]}
        boundary.write_text(json.dumps(bad))
        pois.write_text(json.dumps({"type": "FeatureCollection",
                                    "features": []}))
        with pytest.raises(GeoParseError, match="feature 0"):
            load_city(boundary, pois)

    def test_not_a_feature_collection(self, tmp_path):
        boundary = tmp_path / "b.geojson"
        pois = tmp_path / "p.geojson"
        boundary.write_text(json.dumps({"type": "Point", "coordinates": [0, 0]}))
        pois.write_text("{}")
        with pytest.raises(DataError):
            load_city(boundary, pois)


class TestSpatialIndex:
    def make_index(self, n, seed):
        rng = np.random.default_rng(seed)
        ids = [f"p{i:04d}" for i in range(n)]
        pos = rng.uniform(0, 10_000, size=(n, 2))
        return SpatialIndex(ids, pos), ids, pos

    def test_nearest_matches_brute_force(self):
        index, ids, pos = self.make_index(300, 11)
        rng = np.random.default_rng(12)
        for _ in range(200):
            point = rng.uniform(-500, 10_500, size=2)
            k = int(rng.integers(1, 8))
            got = index.nearest(point, k)
            assert got == brute_nearest(pos, ids, point, k)

    def test_radius_matches_brute_force(self):
        index, ids, pos = self.make_index(300, 13)
        rng = np.random.default_rng(14)
        for _ in range(200):
            point = rng.uniform(0, 10_000, size=2)
            r = float(rng.uniform(50, 3000))
            assert index.radius(point, r) == brute_radius(pos, ids, point, r)

    def test_exact_tie_orders_by_poi_id(self):
        # four points equidistant from the origin; ids deliberately unsorted
        ids = ["d", "b", "a", "c"]
        pos = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        index = SpatialIndex(ids, pos)
        got = index.nearest(np.zeros(2), 4)
        assert [g[0] for g in got] == ["a", "b", "c", "d"]
        got = index.radius(np.zeros(2), 1.0)
        assert [g[0] for g in got] == ["a", "b", "c", "d"]

    def test_k_larger_than_size(self):
        index, ids, pos = self.make_index(5, 1)
        assert len(index.nearest(np.zeros(2), 50)) == 5

    def test_duplicate_ids_rejected(self):
        with pytest.raises(Exception):
            SpatialIndex(["a", "a"], np.zeros((2, 2)))

    def test_radius_boundary_inclusive(self):
        index = SpatialIndex(["a", "b"], np.array([[3.0, 4.0], [30.0, 40.0]]))
        got = index.radius(np.zeros(2), 5.0)  # exactly 5.0 away
        assert [g[0] for g in got] == ["a"]


class TestNearestPois:
    def test_filters(self, small_city):
        _, pois, _ = load_city(small_city["boundary"], small_city["pois"])
        index = build_index(pois)
        origin = np.asarray(pois[0].position)
        parks = nearest_pois(index, origin, category_filter="park")
        assert parks
        by_id = {p.poi_id: p for p in pois}
        assert all(by_id[pid].category == "park" for pid, _ in parks)
        dists = [d for _, d in parks]
        assert dists == sorted(dists)

    def test_active_filter(self, small_city):
        _, pois, _ = load_city(small_city["boundary"], small_city["pois"])
        index = build_index(pois)
        allowed = {p.poi_id for i, p in enumerate(pois) if i % 2 == 0}
        got = nearest_pois(index, np.zeros(2),
                           active_filter=lambda pid: pid in allowed)
        assert {pid for pid, _ in got} == allowed


def test_distance_formula():
    assert distance((0.0, 0.0), (3.0, 4.0)) == 5.0
    assert distance((1.0, 1.0), (1.0, 1.0)) == 0.0
