"""Movement rules: who may move, where to, and the single-step kinematics.

Rules, in order of precedence: dead and hospitalized agents never move;
infectious agents stationary after more than 7 sick days; a target within
``mobility_range`` is reached this iteration; an unreachable target routes
the agent home first (home acts as the single waypoint); and a step is
dropped if its capped endpoint would leave the city boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import shapely

from .agents import IndividualAgent, PoiAgent, SeihrdState
from .errors import ConfigError
from .geo import SpatialIndex, distance, nearest_pois
from .scheduler import (
    RETURN_HOME,
    SimulationClock,
    is_professional,
    poi_active,
)

log = logging.getLogger(__name__)

STATIONARY_SICK_DAYS = 7


@dataclass(frozen=True)
class MovementParams:
    mobility_range: float
    exposure_distance: float

    def __post_init__(self):
        if self.mobility_range <= 0:
            raise ConfigError(f"mobility_range must be > 0, got {self.mobility_range}")
        if self.exposure_distance <= 0:
            raise ConfigError(
                f"exposure_distance must be > 0, got {self.exposure_distance}"
            )


def movement_allowed(agent: IndividualAgent) -> bool:
    """False for dead, hospitalized, or long-sick (> 7 days) agents."""
    if agent.state in (SeihrdState.H, SeihrdState.D):
        return False
    if agent.state == SeihrdState.I and agent.days_sick > STATIONARY_SICK_DAYS:
        return False
    return True


def choose_target(
    agent: IndividualAgent,
    clock: SimulationClock,
    index: SpatialIndex,
    pois: Mapping[str, PoiAgent] | Sequence[PoiAgent],
    rng: np.random.Generator,
) -> str | None:
    """The poi_id the agent should head for this iteration, or None to stay
    home.

    Professional tasks point at the agent's pre-assigned POI regardless of
    distance.  Service visits pick the nearest active, non-full POI of the
    task's category, breaking exact distance ties uniformly at random.  When
    no eligible POI exists the task is skipped.
    """
    schedule = agent.schedule
    task = schedule.active_task(clock.clock_hours) if schedule else None
    if task is None or task.kind == RETURN_HOME:
        return None
    if is_professional(task.kind):
        return task.target_poi
    by_id = pois if isinstance(pois, Mapping) else {p.poi_id: p for p in pois}

    def eligible(poi_id: str) -> bool:
        poi = by_id[poi_id]
        return poi_active(poi, clock) and poi.visitors_today < poi.occupancy_quota

    ranked = nearest_pois(
        index,
        agent.current_position,
        category_filter=task.target_category,
        active_filter=eligible,
    )
    if not ranked:
        log.debug(
            "agent %d: no eligible %r POI for service visit at iteration %d; "
            "task skipped",
            agent.agent_id, task.target_category, clock.iteration,
        )
        return None
    best = ranked[0][1]
    ties = [pid for pid, d in ranked if d == best]
    if len(ties) == 1:
        return ties[0]
    return ties[int(rng.integers(len(ties)))]


def step_move(
    agent: IndividualAgent,
    target_position: Sequence[float],
    params: MovementParams,
    boundary=None,
) -> tuple[float, float]:
    """One iteration of movement toward ``target_position``.

    Returns the new position without mutating the agent.  Within range the
    target is reached exactly; otherwise the agent heads home (directly if
    home is in range, else one range-capped step toward it).  A capped step
    that would exit ``boundary`` is dropped: the agent stays put and will
    retry next iteration.
    """
    cur = agent.current_position
    tgt = (float(target_position[0]), float(target_position[1]))
    if distance(cur, tgt) <= params.mobility_range:
        return tgt
    home = agent.home
    d_home = distance(cur, home)
    if d_home <= params.mobility_range:
        return (float(home[0]), float(home[1]))
    frac = params.mobility_range / d_home
    cand = (cur[0] + (home[0] - cur[0]) * frac, cur[1] + (home[1] - cur[1]) * frac)
    if boundary is not None and not bool(
        shapely.intersects_xy(boundary, cand[0], cand[1])
    ):
        return (float(cur[0]), float(cur[1]))
    return cand


def end_of_day_return(population: Sequence[IndividualAgent]) -> Sequence[IndividualAgent]:
    """Rollover homecoming: everyone not hospitalized or dead is placed at
    home (a teleport mandated at day end, not an in-day movement step)."""
    for agent in population:
        if agent.state not in (SeihrdState.H, SeihrdState.D):
            agent.current_position = agent.home
    return population
