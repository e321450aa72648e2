"""Simulation clock and daily schedules.

A day is 12 iterations of 2 hours each.  Schedules are rebuilt at every day
rollover from per-profession templates: an optional fixed professional task
plus a small random number of 2-hour service visits, ending with a
return-home task.  Agents of the same profession share task kinds and hours
for a given day; only the service-visit categories differ by agent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .agents import IndividualAgent, PoiAgent, SeihrdState
from .errors import ConfigError

log = logging.getLogger(__name__)

ITERATIONS_PER_DAY = 12
HOURS_PER_ITERATION = 2.0

WORK = "work"
SCHOOL = "school"
HOSPITAL_VISIT = "hospital_visit"
SERVICE_VISIT = "service_visit"
RETURN_HOME = "return_home"

TASK_KINDS = (WORK, SCHOOL, HOSPITAL_VISIT, SERVICE_VISIT, RETURN_HOME)
PROFESSIONAL_KINDS = frozenset((WORK, SCHOOL, HOSPITAL_VISIT))

DEFAULT_DAY_START = 8.0
SERVICE_VISIT_HOURS = 2.0
LATEST_SERVICE_END = 22.0


def is_professional(kind: str) -> bool:
    return kind in PROFESSIONAL_KINDS


@dataclass(frozen=True)
class SimulationClock:
    """Clock over 2-hour iterations; day and clock_hours are derived."""

    iteration: int = 0

    @property
    def iterations_per_day(self) -> int:
        return ITERATIONS_PER_DAY

    @property
    def hours_per_iteration(self) -> float:
        return HOURS_PER_ITERATION

    @property
    def day(self) -> int:
        return 1 + self.iteration // ITERATIONS_PER_DAY

    @property
    def clock_hours(self) -> float:
        return (self.iteration % ITERATIONS_PER_DAY) * HOURS_PER_ITERATION

    @property
    def slot(self) -> int:
        return self.iteration % ITERATIONS_PER_DAY


def advance(clock: SimulationClock) -> tuple[SimulationClock, bool]:
    """One iteration forward; the flag is True when a new day starts."""
    nxt = SimulationClock(clock.iteration + 1)
    return nxt, nxt.iteration % ITERATIONS_PER_DAY == 0


@dataclass(frozen=True)
class Task:
    kind: str
    start_hours: float
    end_hours: float
    target_poi: str | None = None  # fixed POI (professional tasks)
    target_category: str | None = None  # nearest-of-category (service visits)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if not (0.0 <= self.start_hours < self.end_hours <= 24.0):
            raise ConfigError(
                f"task hours must satisfy 0 <= start < end <= 24, got "
                f"{self.start_hours}..{self.end_hours}"
            )

    def active_at(self, clock_hours: float) -> bool:
        return self.start_hours <= clock_hours < self.end_hours


@dataclass(frozen=True)
class DailySchedule:
    tasks: tuple[Task, ...]

    def __post_init__(self):
        prev_end = 0.0
        professional = 0
        for task in self.tasks:
            if task.start_hours < prev_end:
                raise ConfigError("schedule tasks overlap")
            prev_end = task.end_hours
            if task.kind in (WORK, SCHOOL):
                professional += 1
        if professional > 1:
            raise ConfigError("at most one work-or-school task per day")
        if self.tasks and self.tasks[-1].kind != RETURN_HOME:
            raise ConfigError("the final task of a day must be return_home")

    def active_task(self, clock_hours: float) -> Task | None:
        for task in self.tasks:
            if task.active_at(clock_hours):
                return task
        return None

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class ProfessionTemplate:
    """How one profession spends its day.

    ``task`` is (kind, start_hours, end_hours) or None for professions with
    no fixed daily obligation.  ``target_category`` restricts which POIs the
    professional task may be assigned to (None = any category).
    """

    name: str
    share: float = 0.0
    task: tuple[str, float, float] | None = None
    target_category: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ConfigError("profession name must be non-empty")
        if self.share < 0:
            raise ConfigError(f"profession {self.name!r}: share must be >= 0")
        if self.task is not None:
            kind, start, end = self.task
            if kind not in PROFESSIONAL_KINDS:
                raise ConfigError(
                    f"profession {self.name!r}: task kind must be one of "
                    f"{sorted(PROFESSIONAL_KINDS)}, got {kind!r}"
                )
            if not (0.0 <= start < end < 24.0):
                raise ConfigError(
                    f"profession {self.name!r}: task hours must satisfy "
                    f"0 <= start < end < 24"
                )


def day_skeleton(
    template: ProfessionTemplate,
    n_service_visits: int,
    day_start: float = DEFAULT_DAY_START,
    service_visit_hours: float = SERVICE_VISIT_HOURS,
    latest_service_end: float = LATEST_SERVICE_END,
) -> list[Task]:
    """Task kinds and hours for one profession-day, targets unresolved.

    Service visits are consecutive blocks after the professional task (or
    from ``day_start`` when there is none); blocks that would end after
    ``latest_service_end`` are cut so the return-home task keeps a non-empty
    window.  The skeleton depends only on (template, n_service_visits), so
    same-profession agents share kinds and hours.
    """
    tasks: list[Task] = []
    cursor = day_start
    if template.task is not None:
        kind, start, end = template.task
        tasks.append(Task(kind, start, end))
        cursor = end
    for _ in range(max(0, int(n_service_visits))):
        end = cursor + service_visit_hours
        if end > latest_service_end:
            break
        tasks.append(Task(SERVICE_VISIT, cursor, end))
        cursor = end
    tasks.append(Task(RETURN_HOME, cursor if tasks else 0.0, 24.0))
    return tasks


class ScheduleGenerator:
    """Builds per-agent daily schedules from profession templates."""

    def __init__(
        self,
        templates: Mapping[str, ProfessionTemplate],
        service_categories: Sequence[str],
        max_service_visits: int = 2,
        day_start: float = DEFAULT_DAY_START,
        service_visit_hours: float = SERVICE_VISIT_HOURS,
        latest_service_end: float = LATEST_SERVICE_END,
    ):
        self.templates = dict(templates)
        self.service_categories = tuple(service_categories)
        self.max_service_visits = int(max_service_visits)
        self.day_start = day_start
        self.service_visit_hours = service_visit_hours
        self.latest_service_end = latest_service_end

    def draw_service_count(self, rng: np.random.Generator) -> int:
        if not self.service_categories or self.max_service_visits <= 0:
            return 0
        return int(rng.integers(0, self.max_service_visits + 1))

    def generate_daily_schedule(
        self,
        agent: IndividualAgent,
        rng: np.random.Generator,
        n_service_visits: int | None = None,
    ) -> DailySchedule:
        """A fresh schedule for one agent.

        Hospitalized and dead agents get an empty schedule.  The number of
        service visits may be supplied by the caller (the engine draws it
        once per profession per day); otherwise it is drawn here.
        """
        if agent.state in (SeihrdState.H, SeihrdState.D):
            return DailySchedule(())
        template = self.templates.get(agent.profession)
        if template is None:
            raise ConfigError(
                f"agent {agent.agent_id}: unknown profession "
                f"{agent.profession!r}; known: {sorted(self.templates)}"
            )
        if n_service_visits is None:
            n_service_visits = self.draw_service_count(rng)
        skeleton = day_skeleton(
            template,
            n_service_visits,
            day_start=self.day_start,
            service_visit_hours=self.service_visit_hours,
            latest_service_end=self.latest_service_end,
        )
        tasks: list[Task] = []
        for task in skeleton:
            if is_professional(task.kind):
                if agent.assigned_poi is None:
                    log.debug(
                        "agent %d has no assigned POI for its %s task; dropped",
                        agent.agent_id, task.kind,
                    )
                    continue
                tasks.append(
                    Task(task.kind, task.start_hours, task.end_hours,
                         target_poi=agent.assigned_poi)
                )
            elif task.kind == SERVICE_VISIT:
                cat = self.service_categories[
                    int(rng.integers(len(self.service_categories)))
                ]
                tasks.append(
                    Task(task.kind, task.start_hours, task.end_hours,
                         target_category=cat)
                )
            else:
                tasks.append(task)
        return DailySchedule(tuple(tasks))


def poi_active(poi: PoiAgent, clock: SimulationClock) -> bool:
    """True when the POI's activity slots cover the clock's slot-of-day."""
    return clock.slot in poi.activity_slots
