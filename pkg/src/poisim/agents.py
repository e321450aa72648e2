"""Agent state: the SEIHRD machine, individual/POI agents, and spawning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely

from .errors import ConfigError, DataError, StateTransitionError
from .geo import CityMap, PoiLocation

log = logging.getLogger(__name__)


class SeihrdState(IntEnum):
    S = 0  # susceptible
    E = 1  # exposed (infected, not yet infectious)
    I = 2  # infectious
    H = 3  # hospitalized
    R = 4  # recovered (immune)
    D = 5  # dead

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.name


EXPOSED = "exposed"
INFECTIOUS = "infectious"
HOSPITALIZED = "hospitalized"
RECOVERED = "recovered"
DIED = "died"

EVENTS = (EXPOSED, INFECTIOUS, HOSPITALIZED, RECOVERED, DIED)

# The only legal edges.  R and D are absorbing; recovered agents never
# become infectious again.
_TRANSITIONS: dict[tuple[SeihrdState, str], SeihrdState] = {
    (SeihrdState.S, EXPOSED): SeihrdState.E,
    (SeihrdState.E, INFECTIOUS): SeihrdState.I,
    (SeihrdState.I, HOSPITALIZED): SeihrdState.H,
    (SeihrdState.I, RECOVERED): SeihrdState.R,
    (SeihrdState.I, DIED): SeihrdState.D,
    (SeihrdState.H, RECOVERED): SeihrdState.R,
    (SeihrdState.H, DIED): SeihrdState.D,
}


def transition(state: SeihrdState, event: str) -> SeihrdState:
    """Apply ``event`` to ``state``; illegal pairs raise, naming the pair."""
    try:
        return _TRANSITIONS[(SeihrdState(state), event)]
    except KeyError:
        raise StateTransitionError(
            f"illegal transition: state {SeihrdState(state).name} does not accept "
            f"event {event!r}"
        ) from None


@dataclass
class EpidemicParams:
    """Disease and environment parameters.

    alpha: daily probability an exposed agent turns infectious (inverse of
        the mean incubation period in days).
    beta: average daily contact rate; carried for reporting and calibration
        bookkeeping, spread itself is mediated by POI contact.
    gamma: daily recovery probability (inverse of the mean infectious
        period in days).
    delta: daily death probability while infectious.
    weather_factor: 0..1 damping applied to outdoor POI spread.
    healthcare_quality: 0..1; hospital death rate is delta * (1 - quality).
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    hospitalization_probability: float = 0.0
    weather_factor: float = 0.0
    healthcare_quality: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.beta < 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        for name in ("delta", "hospitalization_probability", "weather_factor",
                     "healthcare_quality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")

    @property
    def hospital_death_rate(self) -> float:
        return self.delta * (1.0 - self.healthcare_quality)


@dataclass
class IndividualAgent:
    agent_id: int
    state: SeihrdState = SeihrdState.S
    profession: str = "other"
    susceptibility: float = 1.0
    home: tuple[float, float] = (0.0, 0.0)
    current_position: tuple[float, float] = (0.0, 0.0)
    schedule: object | None = None
    days_sick: int = 0
    vaccinated: bool = False
    age_band: str = "all"
    gender: str = "all"
    income_band: str = "all"
    assigned_poi: str | None = None  # fixed target of the professional task


@dataclass
class PoiAgent:
    poi_id: str
    category: str
    position: tuple[float, float]
    activity_slots: frozenset[int]
    occupancy_quota: int
    spread_probability: float
    visitors_today: int = 0
    is_hospital: bool = False
    is_outdoor: bool = False

    def __post_init__(self):
        slots = frozenset(int(s) for s in self.activity_slots)
        if not slots or not slots <= set(range(12)):
            raise ConfigError(
                f"poi {self.poi_id!r}: activity_slots must be a non-empty "
                f"subset of 0..11, got {sorted(self.activity_slots)}"
            )
        self.activity_slots = slots
        if self.occupancy_quota < 0:
            raise ConfigError(
                f"poi {self.poi_id!r}: occupancy_quota must be >= 0"
            )
        if not 0.0 <= self.spread_probability <= 1.0:
            raise ConfigError(
                f"poi {self.poi_id!r}: spread_probability must be in [0, 1]"
            )


def _lookup(table: Mapping[str, float], label: str, dimension: str) -> float:
    try:
        return float(table[label])
    except KeyError:
        known = ", ".join(sorted(table)) or "(none)"
        raise ConfigError(
            f"unknown {dimension} label {label!r}; known labels: {known}"
        ) from None


@dataclass(frozen=True)
class SusceptibilityModel:
    """Multiplier tables for the susceptibility product."""

    age: Mapping[str, float] = field(default_factory=lambda: {"all": 1.0})
    profession: Mapping[str, float] = field(default_factory=lambda: {"all": 1.0})
    gender: Mapping[str, float] = field(default_factory=lambda: {"all": 1.0})
    income: Mapping[str, float] = field(default_factory=lambda: {"all": 1.0})
    vaccinated_multiplier: float = 0.2

    def value(
        self,
        age_band: str,
        profession: str,
        gender: str,
        vaccinated: bool,
        social_distancing_factor: float,
        income_band: str = "all",
    ) -> float:
        """Product of the per-dimension multipliers, clamped to [0, 1]."""
        if not 0.0 <= social_distancing_factor <= 1.0:
            raise ConfigError(
                f"social_distancing_factor must be in [0, 1], "
                f"got {social_distancing_factor}"
            )
        v = _lookup(self.age, age_band, "age band")
        v *= _lookup(self.profession, profession, "profession")
        v *= _lookup(self.gender, gender, "gender")
        v *= _lookup(self.income, income_band, "income band")
        if vaccinated:
            v *= self.vaccinated_multiplier
        v *= social_distancing_factor
        return min(max(v, 0.0), 1.0)


def susceptibility(
    age_band: str,
    profession: str,
    gender: str,
    vaccinated: bool,
    social_distancing_factor: float,
    model: SusceptibilityModel | None = None,
    income_band: str = "all",
) -> float:
    model = model or SusceptibilityModel(
        profession={"worker": 1.0, "student": 1.0, "medical": 1.0, "other": 1.0}
    )
    return model.value(
        age_band, profession, gender, vaccinated, social_distancing_factor,
        income_band=income_band,
    )


def build_susceptibility_model(config) -> SusceptibilityModel:
    tables = config.susceptibility_multipliers
    return SusceptibilityModel(
        age=dict(tables.get("age", {"all": 1.0})),
        profession=dict(tables.get("profession", {"all": 1.0})),
        gender=dict(tables.get("gender", {"all": 1.0})),
        income=dict(tables.get("income", {"all": 1.0})),
        vaccinated_multiplier=config.vaccinated_multiplier,
    )


def _sample_points_in(geom, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points inside a polygon by bounding-box rejection sampling."""
    minx, miny, maxx, maxy = geom.bounds
    out = np.empty((count, 2), dtype=float)
    filled = 0
    dry_rounds = 0
    while filled < count:
        m = max((count - filled) * 2, 32)
        xs = rng.uniform(minx, maxx, m)
        ys = rng.uniform(miny, maxy, m)
        ok = np.flatnonzero(shapely.intersects_xy(geom, xs, ys))
        if ok.size == 0:
            dry_rounds += 1
            if dry_rounds > 1000:
                raise ConfigError("cannot sample points inside a neighborhood "
                                  "(degenerate geometry?)")
            continue
        take = min(ok.size, count - filled)
        out[filled:filled + take, 0] = xs[ok[:take]]
        out[filled:filled + take, 1] = ys[ok[:take]]
        filled += take
    return out


def _choice_shares(labels: Sequence[str], shares: Sequence[float], n: int,
                   rng: np.random.Generator, what: str) -> np.ndarray:
    shares = np.asarray(shares, dtype=float)
    if shares.min() < 0 or shares.sum() <= 0:
        raise ConfigError(f"{what} shares must be non-negative and sum > 0")
    return rng.choice(len(labels), size=n, p=shares / shares.sum())


def spawn_population(config, city_map: CityMap, rng: np.random.Generator
                     ) -> list[IndividualAgent]:
    """Create the initial population.

    Homes are placed uniformly inside neighborhoods chosen with probability
    proportional to neighborhood area.  Each agent independently starts
    infectious with probability ``p_initial_infected`` (otherwise
    susceptible) and is vaccinated with probability
    ``p_initial_vaccinated``.
    """
    n = int(config.n_agents)
    if n <= 0:
        raise ConfigError("n_agents must be >= 1")
    if not city_map.neighborhoods:
        raise ConfigError("city map has no neighborhoods")
    areas = city_map.neighborhood_areas()
    if areas.sum() <= 0:
        raise ConfigError("city neighborhoods have zero total area")

    nb_choice = rng.choice(len(areas), size=n, p=areas / areas.sum())
    homes = np.empty((n, 2), dtype=float)
    for nb_idx in range(len(areas)):
        rows = np.flatnonzero(nb_choice == nb_idx)
        if rows.size:
            homes[rows] = _sample_points_in(
                city_map.neighborhoods[nb_idx][1], rows.size, rng
            )

    infected = rng.random(n) < float(config.p_initial_infected)
    vaccinated = rng.random(n) < float(config.p_initial_vaccinated)

    professions = config.professions
    prof_idx = _choice_shares(
        [p.name for p in professions], [p.share for p in professions],
        n, rng, "profession",
    )
    band_idx: dict[str, np.ndarray] = {}
    for dim in ("age", "gender", "income"):
        spec = config.bands[dim]
        band_idx[dim] = _choice_shares(spec.labels, spec.shares, n, rng, f"{dim} band")

    model = build_susceptibility_model(config)
    sdf = float(config.social_distancing_factor)

    agents: list[IndividualAgent] = []
    for i in range(n):
        prof = professions[prof_idx[i]].name
        age = config.bands["age"].labels[band_idx["age"][i]]
        gen = config.bands["gender"].labels[band_idx["gender"][i]]
        inc = config.bands["income"].labels[band_idx["income"][i]]
        home = (float(homes[i, 0]), float(homes[i, 1]))
        agents.append(
            IndividualAgent(
                agent_id=i,
                state=SeihrdState.I if infected[i] else SeihrdState.S,
                profession=prof,
                susceptibility=model.value(
                    age, prof, gen, bool(vaccinated[i]), sdf, income_band=inc
                ),
                home=home,
                current_position=home,
                days_sick=0,
                vaccinated=bool(vaccinated[i]),
                age_band=age,
                gender=gen,
                income_band=inc,
            )
        )
    return agents


def spawn_pois(
    config,
    pois: Sequence[PoiLocation],
    ingest_params: Mapping[str, object] | None = None,
    rng: np.random.Generator | None = None,
) -> list[PoiAgent]:
    """Sample min(n_pois, available) POI agents without replacement.

    Per-POI parameters are resolved with precedence: calibration spread
    overrides, then per-POI file properties, then the per-category table
    (``ingest_params``), then config defaults.  When hospitalization is
    enabled the sample is guaranteed to contain at least one hospital.
    """
    if not pois:
        raise DataError("POI list is empty; cannot spawn POI agents")
    if int(config.n_pois) <= 0:
        raise ConfigError("n_pois must be >= 1")
    rng = rng or np.random.default_rng()
    ordered = sorted(pois, key=lambda p: p.poi_id)
    k = min(int(config.n_pois), len(ordered))
    selected = set(rng.choice(len(ordered), size=k, replace=False).tolist())

    hospital_cat = config.hospital_category
    needs_hospital = float(config.hospitalization_probability) > 0.0
    if needs_hospital and not any(
        ordered[i].category == hospital_cat for i in selected
    ):
        pool = [
            i for i in range(len(ordered))
            if ordered[i].category == hospital_cat and i not in selected
        ]
        if not pool:
            raise ConfigError(
                "hospitalization is enabled but the POI file has no "
                f"{hospital_cat!r} POIs; add some or set "
                "hospitalization_probability=0"
            )
        victims = sorted(i for i in selected if ordered[i].category != hospital_cat)
        out = victims[int(rng.integers(len(victims)))]
        swap_in = pool[int(rng.integers(len(pool)))]
        selected.remove(out)
        selected.add(swap_in)
        log.info("swapped POI %r in to guarantee a hospital in the sample",
                 ordered[swap_in].poi_id)

    table = ingest_params or {}
    outdoor = set(config.outdoor_categories)
    agents_out: list[PoiAgent] = []
    for i in sorted(selected):
        loc = ordered[i]
        cat_params = table.get(loc.category)
        slots = (
            cat_params.activity_slots if cat_params is not None
            else frozenset(config.poi_default_activity_slots)
        )
        if loc.occupancy is not None:
            quota = loc.occupancy
        elif cat_params is not None:
            quota = cat_params.occupancy
        else:
            quota = config.poi_default_occupancy
        if loc.category in config.spread_overrides:
            spread = config.spread_overrides[loc.category]
        elif loc.spread_probability is not None:
            spread = loc.spread_probability
        elif cat_params is not None:
            spread = cat_params.spread_probability
        else:
            spread = config.poi_default_spread_probability
        agents_out.append(
            PoiAgent(
                poi_id=loc.poi_id,
                category=loc.category,
                position=loc.position,
                activity_slots=frozenset(slots),
                occupancy_quota=int(quota),
                spread_probability=float(spread),
                is_hospital=loc.category == hospital_cat,
                is_outdoor=loc.category in outdoor,
            )
        )
    return agents_out
