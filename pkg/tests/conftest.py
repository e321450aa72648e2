"""Shared fixtures: synthetic planar cities written as GeoJSON files."""

import json
from pathlib import Path

import numpy as np
import pytest

from poisim.config import ScenarioConfig

CATEGORIES = [
    "office", "school", "hospital", "supermarket", "restaurant",
    "park", "gym", "pharmacy", "bar",
]
CATEGORY_WEIGHTS = [0.25, 0.08, 0.02, 0.15, 0.20, 0.08, 0.07, 0.05, 0.10]

# test city centered here; at lat 45 one degree of longitude is ~78.6 km
LON0, LAT0 = 10.0, 45.0


def quadrant_boundary(dlon, dlat):
    """Square city split into four named neighborhoods."""
    features = []
    quads = [(-1, 0, -1, 0), (0, 1, -1, 0), (-1, 0, 0, 1), (0, 1, 0, 1)]
    for i, (sx, ex, sy, ey) in enumerate(quads):
        ring = [
            [LON0 + sx * dlon, LAT0 + sy * dlat],
            [LON0 + ex * dlon, LAT0 + sy * dlat],
            [LON0 + ex * dlon, LAT0 + ey * dlat],
            [LON0 + sx * dlon, LAT0 + ey * dlat],
            [LON0 + sx * dlon, LAT0 + sy * dlat],
        ]
        features.append({
            "type": "Feature",
            "properties": {"name": f"quad-{i}"},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return {"type": "FeatureCollection", "features": features}


def poi_collection(n, dlon, dlat, seed, extra_properties=None):
    rng = np.random.default_rng(seed)
    features = []
    for i in range(n):
        cat = str(rng.choice(CATEGORIES, p=CATEGORY_WEIGHTS))
        props = {"poi_id": f"poi-{i:05d}", "category": cat}
        if extra_properties:
            props.update(extra_properties(i, cat, rng))
        features.append({
            "type": "Feature",
            "properties": props,
            "geometry": {
                "type": "Point",
                "coordinates": [
                    LON0 + rng.uniform(-dlon * 0.98, dlon * 0.98),
                    LAT0 + rng.uniform(-dlat * 0.98, dlat * 0.98),
                ],
            },
        })
    return {"type": "FeatureCollection", "features": features}


def write_city(directory: Path, n_pois, dlon, dlat, seed=42, extra_properties=None):
    directory.mkdir(parents=True, exist_ok=True)
    boundary = directory / "boundary.geojson"
    pois = directory / "pois.geojson"
    boundary.write_text(json.dumps(quadrant_boundary(dlon, dlat)))
    pois.write_text(json.dumps(poi_collection(n_pois, dlon, dlat, seed,
                                              extra_properties)))
    return boundary, pois


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    """~10 km square with 1200 POIs; for fast unit-level runs."""
    directory = tmp_path_factory.mktemp("small-city")
    boundary, pois = write_city(directory, n_pois=1200, dlon=0.065, dlat=0.045)
    return {"boundary": boundary, "pois": pois}


@pytest.fixture(scope="session")
def large_city(tmp_path_factory):
    """~20 km square with 6000 POIs; enough for default-sized scenarios."""
    directory = tmp_path_factory.mktemp("large-city")
    boundary, pois = write_city(directory, n_pois=6000, dlon=0.13, dlat=0.09)
    return {"boundary": boundary, "pois": pois}


@pytest.fixture
def small_config(small_city):
    """A quick-running scenario on the small city."""
    return ScenarioConfig().with_overrides(
        boundary_file=str(small_city["boundary"]),
        pois_file=str(small_city["pois"]),
        n_agents=800,
        n_pois=400,
        days=3,
        rng_seed=1,
    )


@pytest.fixture
def table_config(large_city):
    """The default-parameter scenario on the large city."""
    return ScenarioConfig().with_overrides(
        boundary_file=str(large_city["boundary"]),
        pois_file=str(large_city["pois"]),
    )
