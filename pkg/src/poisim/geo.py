"""City geometry: GeoJSON loading, projection, and exact POI queries.

The city boundary is the union of the neighborhood polygons in the boundary
file.  Geographic (longitude/latitude) input is projected onto a local
equirectangular meter grid so every distance in the simulation is a plain
Euclidean distance; planar input is used as-is.

``SpatialIndex`` answers nearest/radius queries.  A k-d tree supplies
candidate sets, but distances are always recomputed with the same arithmetic
as :func:`distance` and ties are broken by ``poi_id``, so query results are
bit-identical to a brute-force scan.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import shape
from shapely.ops import unary_union

from .errors import ConfigError, DataError, GeoParseError, UsageError

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

_POLYGON_TYPES = ("Polygon", "MultiPolygon")


@dataclass(frozen=True)
class Projection:
    """Maps input coordinates onto the planar meter grid used at runtime."""

    kind: str  # "none" or "equirectangular"
    lon0: float = 0.0
    lat0: float = 0.0

    def forward(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if self.kind == "none":
            return coords
        scale = EARTH_RADIUS_M * math.pi / 180.0
        out = np.empty_like(coords)
        out[..., 0] = (coords[..., 0] - self.lon0) * scale * math.cos(math.radians(self.lat0))
        out[..., 1] = (coords[..., 1] - self.lat0) * scale
        return out

    def inverse(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        if self.kind == "none":
            return coords
        scale = EARTH_RADIUS_M * math.pi / 180.0
        out = np.empty_like(coords)
        out[..., 0] = coords[..., 0] / (scale * math.cos(math.radians(self.lat0))) + self.lon0
        out[..., 1] = coords[..., 1] / scale + self.lat0
        return out

    def describe(self) -> str:
        if self.kind == "none":
            return "planar input used as-is (meters assumed)"
        return (
            f"equirectangular projection centered at lon={self.lon0:.6f}, "
            f"lat={self.lat0:.6f}, earth radius {EARTH_RADIUS_M:.0f} m"
        )


@dataclass
class CityMap:
    """The simulation area: outer boundary plus named neighborhoods."""

    boundary: shapely.Geometry
    neighborhoods: tuple[tuple[str, shapely.Geometry], ...]
    projection: Projection
    crs_note: str = ""

    def contains_xy(self, x, y) -> np.ndarray:
        """Boundary-inclusive containment test; accepts scalars or arrays."""
        return shapely.intersects_xy(self.boundary, x, y)

    def neighborhood_areas(self) -> np.ndarray:
        return np.array([geom.area for _, geom in self.neighborhoods], dtype=float)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.boundary.bounds


@dataclass(frozen=True)
class PoiLocation:
    """A candidate POI site parsed from the POI file."""

    poi_id: str
    position: tuple[float, float]
    neighborhood_id: str
    category: str
    occupancy: int | None = None
    spread_probability: float | None = None


@dataclass
class LoadReport:
    """Counts of what survived the POI load, plus any schema warnings."""

    loaded: int = 0
    dropped: int = 0
    warnings: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [f"dropped: {self.dropped}", f"loaded: {self.loaded}"]


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance on the planar grid.

    Kept as the one distance formula in the package so index results and
    brute-force checks agree to the last bit.
    """
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    return math.sqrt(dx * dx + dy * dy)


def _read_feature_collection(path) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise DataError(f"{path}: FeatureCollection has no feature list")
    return features


def _looks_geographic(geoms: Iterable[shapely.Geometry]) -> bool:
    for geom in geoms:
        minx, miny, maxx, maxy = geom.bounds
        if minx < -180.0 or maxx > 180.0 or miny < -90.0 or maxy > 90.0:
            return False
    return True


def _parse_boundary(path, projection_mode: str):
    features = _read_feature_collection(path)
    raw: list[tuple[str, shapely.Geometry]] = []
    for idx, feature in enumerate(features):
        geometry = feature.get("geometry")
        if geometry is None or geometry.get("type") not in _POLYGON_TYPES:
            continue
        try:
            geom = shape(geometry)
        except Exception as exc:
            raise GeoParseError(f"cannot parse polygon geometry ({exc})", idx) from exc
        if geom.is_empty:
            raise GeoParseError("empty polygon geometry", idx)
        if not geom.is_valid:
            raise GeoParseError("invalid polygon geometry (self-intersecting ring?)", idx)
        props = feature.get("properties") or {}
        name = str(props.get("name") or props.get("id") or f"neighborhood-{idx}")
        raw.append((name, geom))
    if not raw:
        raise ConfigError(f"{path}: boundary file contains no polygon features")

    if projection_mode == "auto":
        geographic = _looks_geographic(g for _, g in raw)
    elif projection_mode == "equirectangular":
        geographic = True
    elif projection_mode == "none":
        geographic = False
    else:
        raise ConfigError(f"unknown projection mode: {projection_mode!r}")

    if geographic:
        centroid = unary_union([g for _, g in raw]).centroid
        projection = Projection("equirectangular", lon0=centroid.x, lat0=centroid.y)
    else:
        projection = Projection("none")

    neighborhoods = tuple(
        (name, shapely.transform(geom, projection.forward)) for name, geom in raw
    )
    return neighborhoods, projection


def load_city(
    boundary_file,
    pois_file,
    projection: str = "auto",
) -> tuple[CityMap, list[PoiLocation], LoadReport]:
    """Load boundary + POI GeoJSON files into a CityMap and POI list.

    POIs outside the boundary are dropped and counted in the returned
    LoadReport; POIs with missing/invalid required properties are rejected
    with a warning.  Duplicate poi_ids are a fatal data error.
    """
    neighborhoods, proj = _parse_boundary(boundary_file, projection)
    boundary = unary_union([geom for _, geom in neighborhoods])
    if boundary.is_empty:
        raise ConfigError(f"{boundary_file}: boundary union is empty")
    city = CityMap(
        boundary=boundary,
        neighborhoods=neighborhoods,
        projection=proj,
        crs_note=proj.describe(),
    )

    report = LoadReport()
    features = _read_feature_collection(pois_file)
    if not features:
        report.warnings.append(f"{pois_file}: POI file has no features")
        log.warning("%s: POI file has no features", pois_file)
        return city, [], report

    ids: list[str] = []
    cats: list[str] = []
    occs: list[int | None] = []
    spreads: list[float | None] = []
    coords: list[tuple[float, float]] = []
    for idx, feature in enumerate(features):
        geometry = feature.get("geometry")
        if geometry is None or geometry.get("type") != "Point":
            report.warnings.append(f"feature {idx}: not a Point, skipped")
            continue
        try:
            geom = shape(geometry)
        except Exception as exc:
            raise GeoParseError(f"cannot parse point geometry ({exc})", idx) from exc
        props = feature.get("properties") or {}
        poi_id = props.get("poi_id")
        category = props.get("category")
        if poi_id is None or str(poi_id) == "":
            report.warnings.append(f"feature {idx}: missing poi_id, rejected")
            continue
        if category is None or str(category) == "":
            report.warnings.append(f"feature {idx}: missing category, rejected")
            continue
        occupancy = None
        if "occupancy" in props:
            try:
                occupancy = int(props["occupancy"])
                if occupancy < 0:
                    raise ValueError
            except (TypeError, ValueError):
                report.warnings.append(
                    f"feature {idx}: invalid occupancy {props['occupancy']!r}, ignored"
                )
                occupancy = None
        spread = None
        if "spread_probability" in props:
            try:
                spread = float(props["spread_probability"])
                if not 0.0 <= spread <= 1.0:
                    raise ValueError
            except (TypeError, ValueError):
                report.warnings.append(
                    f"feature {idx}: invalid spread_probability "
                    f"{props['spread_probability']!r}, ignored"
                )
                spread = None
        ids.append(str(poi_id))
        cats.append(str(category))
        occs.append(occupancy)
        spreads.append(spread)
        coords.append((float(geom.x), float(geom.y)))

    dup = _first_duplicate(ids)
    if dup is not None:
        raise DataError(f"{pois_file}: duplicate poi_id {dup!r}")

    pois: list[PoiLocation] = []
    if ids:
        pts = proj.forward(np.asarray(coords, dtype=float))
        inside = shapely.intersects_xy(boundary, pts[:, 0], pts[:, 1])
        report.dropped = int((~inside).sum())
        neighborhood_of = np.full(len(ids), -1, dtype=int)
        unassigned = inside.copy()
        for nb_idx, (_, geom) in enumerate(neighborhoods):
            if not unassigned.any():
                break
            cand = np.flatnonzero(unassigned)
            hit = shapely.intersects_xy(geom, pts[cand, 0], pts[cand, 1])
            neighborhood_of[cand[hit]] = nb_idx
            unassigned[cand[hit]] = False
        for i in np.flatnonzero(inside):
            nb_idx = neighborhood_of[i]
            nb_name = neighborhoods[nb_idx][0] if nb_idx >= 0 else neighborhoods[0][0]
            pois.append(
                PoiLocation(
                    poi_id=ids[i],
                    position=(float(pts[i, 0]), float(pts[i, 1])),
                    neighborhood_id=nb_name,
                    category=cats[i],
                    occupancy=occs[i],
                    spread_probability=spreads[i],
                )
            )
    report.loaded = len(pois)
    for message in report.warnings:
        log.warning("%s", message)
    return city, pois, report


def _first_duplicate(ids: Sequence[str]) -> str | None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            return i
        seen.add(i)
    return None


class SpatialIndex:
    """Immutable nearest/radius index over POI points.

    Safe for simultaneous reads.  Results are ordered by (distance, poi_id)
    and distances are exact Euclidean values, never the tree's internal
    approximations: the tree only proposes candidates.
    """

    def __init__(
        self,
        poi_ids: Sequence[str],
        positions,
        categories: Sequence[str] | None = None,
    ):
        ids = [str(i) for i in poi_ids]
        dup = _first_duplicate(ids)
        if dup is not None:
            raise DataError(f"duplicate poi_id in index: {dup!r}")
        self._n = len(ids)
        self._ids = np.asarray(ids, dtype=str) if ids else np.empty(0, dtype=str)
        self._pos = (
            np.asarray(positions, dtype=float).reshape(self._n, 2)
            if self._n
            else np.empty((0, 2))
        )
        if categories is not None:
            if len(categories) != self._n:
                raise UsageError(
                    f"categories length {len(categories)} does not match index size {self._n}"
                )
            self._cats = np.asarray([str(c) for c in categories], dtype=str)
        else:
            self._cats = None
        self._by_id = {pid: i for i, pid in enumerate(ids)}
        self._tree = cKDTree(self._pos) if self._n else None

    @classmethod
    def from_locations(cls, pois: Iterable) -> "SpatialIndex":
        pois = list(pois)
        return cls(
            [p.poi_id for p in pois],
            [p.position for p in pois],
            [p.category for p in pois],
        )

    def __len__(self) -> int:
        return self._n

    @property
    def poi_ids(self) -> np.ndarray:
        return self._ids

    @property
    def categories(self) -> np.ndarray | None:
        return self._cats

    def position_of(self, poi_id: str) -> tuple[float, float]:
        idx = self._by_id.get(str(poi_id))
        if idx is None:
            raise KeyError(f"unknown poi_id: {poi_id!r}")
        return (float(self._pos[idx, 0]), float(self._pos[idx, 1]))

    def _exact_distances(self, point, indices) -> np.ndarray:
        dx = self._pos[indices, 0] - float(point[0])
        dy = self._pos[indices, 1] - float(point[1])
        return np.sqrt(dx * dx + dy * dy)

    def _ranked(self, point, indices) -> list[tuple[str, float]]:
        indices = np.asarray(indices, dtype=int)
        dists = self._exact_distances(point, indices)
        order = np.lexsort((self._ids[indices], dists))
        return [
            (str(self._ids[indices[j]]), float(dists[j])) for j in order
        ]

    def nearest(self, point, k: int = 1) -> list[tuple[str, float]]:
        """The k nearest POIs to ``point`` as (poi_id, distance) pairs."""
        if self._n == 0 or k <= 0:
            return []
        kq = min(int(k), self._n)
        d, _ = self._tree.query(np.asarray(point, dtype=float), k=kq)
        dmax = float(np.max(np.atleast_1d(d)))
        # Inflate the candidate radius a hair so candidates whose exact
        # distance equals the kth distance cannot be lost to tree rounding.
        pad = 1e-9 + 1e-12 * dmax
        cand = self._tree.query_ball_point(np.asarray(point, dtype=float), dmax + pad)
        ranked = self._ranked(point, cand)
        return ranked[: int(k)]

    def radius(self, point, r: float) -> list[tuple[str, float]]:
        """All POIs within distance ``r`` of ``point``, inclusive."""
        if self._n == 0 or r < 0:
            return []
        pad = 1e-9 + 1e-12 * abs(float(r))
        cand = self._tree.query_ball_point(np.asarray(point, dtype=float), float(r) + pad)
        if not cand:
            return []
        ranked = self._ranked(point, cand)
        return [(pid, dist) for pid, dist in ranked if dist <= r]


def build_index(pois: Iterable) -> SpatialIndex:
    """Build a SpatialIndex from POI locations (or any objects carrying
    poi_id / position / category attributes)."""
    return SpatialIndex.from_locations(pois)


def nearest_pois(
    index: SpatialIndex,
    origin,
    category_filter: str | None = None,
    active_filter: Callable[[str], bool] | None = None,
) -> list[tuple[str, float]]:
    """All POIs passing the filters, ordered by (distance, poi_id)."""
    n = len(index)
    if n == 0:
        return []
    mask = np.ones(n, dtype=bool)
    if category_filter is not None:
        if index.categories is None:
            raise UsageError("index was built without categories")
        mask &= index.categories == str(category_filter)
    if active_filter is not None:
        ids = index.poi_ids
        for i in np.flatnonzero(mask):
            if not active_filter(str(ids[i])):
                mask[i] = False
    keep = np.flatnonzero(mask)
    if keep.size == 0:
        return []
    return index._ranked(origin, keep)
