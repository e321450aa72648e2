"""Disease dynamics: POI-mediated exposure and daily state progression.

Exposure happens at POIs.  Agents near an active POI are admitted in agent-id
order up to the POI's remaining daily quota; overflow passes through without
interacting.  If at least one admitted agent is infectious, every admitted
susceptible draws once against ``spread_probability × susceptibility`` (an
outdoor POI's spread is damped by ``1 - weather_factor``).

Progression runs once per day at rollover, on the day-start state: exposed
agents turn infectious with alpha; infectious agents draw death (delta),
then hospitalization, then recovery (gamma); hospitalized agents draw death
at ``delta × (1 - healthcare_quality)``, then recovery.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .agents import (
    DIED,
    EXPOSED,
    HOSPITALIZED,
    INFECTIOUS,
    RECOVERED,
    EpidemicParams,
    IndividualAgent,
    PoiAgent,
    SeihrdState,
    transition,
)
from .errors import ConfigError
from .geo import SpatialIndex, distance, nearest_pois
from .movement import MovementParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExposureEvent:
    """One susceptibility draw at a POI (recorded whether or not it exposed)."""

    poi_id: str
    agent_id: int
    iteration: int
    draw: float


@dataclass(frozen=True)
class DailyCounts:
    day: int
    s: int
    e: int
    i: int
    h: int
    r: int
    d: int

    def __post_init__(self):
        for name in ("s", "e", "i", "h", "r", "d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"negative count for {name}")

    @property
    def total(self) -> int:
        return self.s + self.e + self.i + self.h + self.r + self.d


def effective_spread_probability(poi: PoiAgent, params: EpidemicParams) -> float:
    if poi.is_outdoor:
        return poi.spread_probability * (1.0 - params.weather_factor)
    return poi.spread_probability


def exposure_step(
    poi: PoiAgent,
    nearby_agents: Iterable[IndividualAgent],
    params: EpidemicParams,
    movement_params: MovementParams,
    rng: np.random.Generator,
    iteration: int = 0,
    events: list[ExposureEvent] | None = None,
) -> set[int]:
    """Process one POI for one iteration; returns newly exposed agent ids.

    The caller is responsible for passing agents of an *active* POI.
    Admission consumes the POI's daily quota; agents beyond the quota pass
    through untouched.
    """
    admitted: list[IndividualAgent] = []
    for agent in sorted(nearby_agents, key=lambda a: a.agent_id):
        if agent.state in (SeihrdState.H, SeihrdState.D):
            continue
        if distance(agent.current_position, poi.position) > movement_params.exposure_distance:
            continue
        if poi.visitors_today >= poi.occupancy_quota:
            continue  # quota exhausted: passes through
        poi.visitors_today += 1
        admitted.append(agent)

    exposed: set[int] = set()
    if not any(a.state == SeihrdState.I for a in admitted):
        return exposed
    p_poi = effective_spread_probability(poi, params)
    for agent in admitted:
        if agent.state != SeihrdState.S:
            continue
        u = float(rng.random())
        if events is not None:
            events.append(ExposureEvent(poi.poi_id, agent.agent_id, iteration, u))
        if u < p_poi * agent.susceptibility:
            agent.state = transition(agent.state, EXPOSED)
            exposed.add(agent.agent_id)
    return exposed


def daily_progression(
    agent: IndividualAgent,
    params: EpidemicParams,
    rng: np.random.Generator,
) -> IndividualAgent:
    """Advance one agent's disease state by one day (no position changes;
    hospital placement is :func:`hospitalize`, applied by the caller)."""
    state = agent.state
    if state == SeihrdState.E:
        if rng.random() < params.alpha:
            agent.state = transition(state, INFECTIOUS)
            agent.days_sick = 0
    elif state == SeihrdState.I:
        if rng.random() < params.delta:
            agent.state = transition(state, DIED)
            agent.days_sick = 0
        elif rng.random() < params.hospitalization_probability:
            agent.state = transition(state, HOSPITALIZED)
        elif rng.random() < params.gamma:
            agent.state = transition(state, RECOVERED)
            agent.days_sick = 0
        else:
            agent.days_sick += 1
    elif state == SeihrdState.H:
        if rng.random() < params.hospital_death_rate:
            agent.state = transition(state, DIED)
            agent.days_sick = 0
        elif rng.random() < params.gamma:
            agent.state = transition(state, RECOVERED)
            agent.days_sick = 0
    return agent


def hospitalize(
    agent: IndividualAgent,
    index: SpatialIndex,
    hospital_category: str | None = "hospital",
) -> IndividualAgent:
    """Place a newly hospitalized agent at the nearest hospital POI.

    ``hospital_category=None`` treats every POI in the index as a hospital
    (pass an index of hospitals only).  Equal distances resolve to the
    smaller poi_id.
    """
    ranked = nearest_pois(index, agent.current_position,
                          category_filter=hospital_category)
    if not ranked:
        raise ConfigError(
            "no hospital POI available for hospitalization; add hospital "
            "POIs or set hospitalization_probability=0"
        )
    agent.current_position = index.position_of(ranked[0][0])
    return agent


def collect_counts(population: Iterable[IndividualAgent], day: int) -> DailyCounts:
    tallies = [0] * 6
    for agent in population:
        tallies[int(agent.state)] += 1
    return DailyCounts(day, *tallies)


def counts_from_states(states: np.ndarray, day: int) -> DailyCounts:
    """Array-engine variant of :func:`collect_counts`."""
    tallies = np.bincount(states.astype(np.int64), minlength=6)
    return DailyCounts(day, *(int(x) for x in tallies[:6]))
