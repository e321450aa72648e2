"""Simulation orchestration: spawn a scenario, run the iteration loop.

The loop keeps population and POI state in numpy arrays (one row per agent
or POI) so a default-sized run finishes in seconds; the per-agent functions
in :mod:`movement` and :mod:`epidemic` define the same rules one agent at a
time and serve as the reference semantics in the tests.

Every day is 12 two-hour iterations.  An iteration moves agents toward
their scheduled targets, then exposes susceptible visitors at active POIs.
At rollover: disease progression, daily counts, the mandated homecoming for
everyone not hospitalized or dead, POI quota reset, and fresh schedules.
Results are a pure function of the config (including its seed): reruns and
worker-count settings produce byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from scipy.spatial import cKDTree

from . import __version__
from .agents import SeihrdState, EpidemicParams, spawn_pois, spawn_population
from .config import ScenarioConfig
from .epidemic import DailyCounts, ExposureEvent, counts_from_states
from .errors import ConfigError, PoisimError, UsageError
from .geo import CityMap, load_city
from .ingest import load_poi_param_table
from .movement import MovementParams, STATIONARY_SICK_DAYS
from .rng import substream
from .scheduler import (
    ITERATIONS_PER_DAY,
    SERVICE_VISIT,
    SimulationClock,
    advance,
    day_skeleton,
    is_professional,
)

log = logging.getLogger(__name__)

_S = int(SeihrdState.S)
_E = int(SeihrdState.E)
_I = int(SeihrdState.I)
_H = int(SeihrdState.H)
_R = int(SeihrdState.R)
_D = int(SeihrdState.D)
_STATE_NAMES = tuple(s.name for s in SeihrdState)

_PLAN_HOME = 0
_PLAN_PROFESSIONAL = 1
_PLAN_SERVICE = 2


@dataclass
class AuditReport:
    """Rulebook violations observed by an instrumented run (empty = clean)."""

    violations: list[str] = field(default_factory=list)
    max_quota_overflow: int = 0
    max_daily_visitors: dict[str, int] = field(default_factory=dict)
    skipped_service_tasks: int = 0

    def ok(self) -> bool:
        return not self.violations and self.max_quota_overflow <= 0

    def add(self, message: str) -> None:
        # cap the list so a broken run cannot eat memory
        if len(self.violations) < 1000:
            self.violations.append(message)


@dataclass
class RunOutput:
    daily_counts: list[DailyCounts]
    initial_counts: DailyCounts
    manifest: str
    snapshot_paths: list[Path] = field(default_factory=list)
    audit: AuditReport | None = None
    exposure_events: list[ExposureEvent] | None = None
    runtime_seconds: float = 0.0
    load_report_lines: list[str] = field(default_factory=list)

    def daily_new_infections(self) -> list[int]:
        """Per-day newly infected counts (susceptible-pool shrinkage)."""
        s_series = [self.initial_counts.s] + [c.s for c in self.daily_counts]
        return [s_series[i - 1] - s_series[i] for i in range(1, len(s_series))]

    def cumulative_infected(self) -> int:
        last = self.daily_counts[-1] if self.daily_counts else self.initial_counts
        return last.total - last.s


class _PoiArrays:
    """POI state in arrays, sorted by poi_id so row order == id order."""

    def __init__(self, poi_agents, params: EpidemicParams):
        roster = sorted(poi_agents, key=lambda p: p.poi_id)
        self.n = len(roster)
        self.id_list = [p.poi_id for p in roster]
        self.ids = np.asarray(self.id_list, dtype=str)
        self.pos = np.asarray([p.position for p in roster], dtype=float)
        self.categories = [p.category for p in roster]
        self.cat_names = sorted(set(self.categories))
        cat_code = {c: i for i, c in enumerate(self.cat_names)}
        self.cat_codes = np.asarray([cat_code[c] for c in self.categories], dtype=np.int32)
        self.active = np.zeros((self.n, ITERATIONS_PER_DAY), dtype=bool)
        for i, p in enumerate(roster):
            for s in p.activity_slots:
                self.active[i, s] = True
        self.quota = np.asarray([p.occupancy_quota for p in roster], dtype=np.int64)
        self.visitors = np.zeros(self.n, dtype=np.int64)
        self.p_eff = np.asarray(
            [
                p.spread_probability
                * ((1.0 - params.weather_factor) if p.is_outdoor else 1.0)
                for p in roster
            ],
            dtype=float,
        )
        self.is_hospital = np.asarray([p.is_hospital for p in roster], dtype=bool)
        hosp = np.flatnonzero(self.is_hospital)
        self.hospital_idx = hosp
        self.hospital_tree = cKDTree(self.pos[hosp]) if hosp.size else None
        self.cat_members = {
            code: np.flatnonzero(self.cat_codes == code)
            for code in range(len(self.cat_names))
        }
        self._slot_trees: dict[int, tuple[cKDTree, np.ndarray] | None] = {}

    def slot_tree(self, slot: int):
        """Tree over the POIs active in this slot-of-day (cached; static)."""
        if slot not in self._slot_trees:
            idx = np.flatnonzero(self.active[:, slot])
            self._slot_trees[slot] = (cKDTree(self.pos[idx]), idx) if idx.size else None
        return self._slot_trees[slot]


class _PopArrays:
    def __init__(self, agents, professions):
        self.n = len(agents)
        self.state = np.asarray([int(a.state) for a in agents], dtype=np.int8)
        self.pos = np.asarray([a.current_position for a in agents], dtype=float)
        self.home = np.asarray([a.home for a in agents], dtype=float)
        self.susc = np.asarray([a.susceptibility for a in agents], dtype=float)
        self.days_sick = np.asarray([a.days_sick for a in agents], dtype=np.int32)
        prof_code = {p.name: i for i, p in enumerate(professions)}
        self.prof = np.asarray([prof_code[a.profession] for a in agents], dtype=np.int16)
        self.assigned = np.full(self.n, -1, dtype=np.int32)


def _resolve_nearest_min_id(dists, idxs):
    """Pick the smallest index among query columns tied at the best distance."""
    if dists.ndim == 1:
        dists = dists[:, None]
        idxs = idxs[:, None]
    best = idxs[:, 0].copy()
    d0 = dists[:, 0]
    for col in range(1, dists.shape[1]):
        tie = np.isfinite(dists[:, col]) & (dists[:, col] == d0)
        if tie.any():
            best[tie] = np.minimum(best[tie], idxs[tie, col])
    return d0, best


class _Engine:
    def __init__(
        self,
        config: ScenarioConfig,
        city: CityMap,
        poi_agents,
        agents,
        *,
        audit: bool = False,
        collect_events: bool = False,
    ):
        self.cfg = config
        self.city = city
        shapely.prepare(city.boundary)
        self.seed = int(config.rng_seed)
        self.params = EpidemicParams(
            alpha=config.alpha,
            beta=config.beta,
            gamma=config.gamma,
            delta=config.delta,
            hospitalization_probability=config.hospitalization_probability,
            weather_factor=config.weather_factor,
            healthcare_quality=config.healthcare_quality,
        )
        self.mv = MovementParams(
            mobility_range=config.mobility_range,
            exposure_distance=config.exposure_distance,
        )
        self.pois = _PoiArrays(poi_agents, self.params)
        self.professions = tuple(config.professions)
        self.pop = _PopArrays(agents, self.professions)
        self.audit = AuditReport() if audit else None
        self.events: list[ExposureEvent] | None = [] if collect_events else None

        service_cats = config.service_categories or tuple(
            c for c in self.pois.cat_names if c != config.hospital_category
        )
        cat_code = {c: i for i, c in enumerate(self.pois.cat_names)}
        self.service_cat_codes = [cat_code[c] for c in service_cats if c in cat_code]
        missing = [c for c in service_cats if c not in cat_code]
        if missing:
            log.warning("service categories with no POIs: %s", ", ".join(missing))
        self.prof_members = [
            np.flatnonzero(self.pop.prof == i) for i in range(len(self.professions))
        ]
        self._assign_professional_pois()

        self.plan_kind = np.zeros((self.pop.n, ITERATIONS_PER_DAY), dtype=np.int8)
        self.plan_ord = np.zeros((self.pop.n, ITERATIONS_PER_DAY), dtype=np.int8)
        self.service_cat_draws: np.ndarray | None = None

    # -- setup ----------------------------------------------------------

    def _assign_professional_pois(self):
        """Pre-decide each agent's professional POI: uniform among eligible
        POIs within mobility range of home, else the nearest eligible."""
        rng = substream(self.seed, "assign")
        cat_code = {c: i for i, c in enumerate(self.pois.cat_names)}
        for p_idx, template in enumerate(self.professions):
            if template.task is None:
                continue
            members = self.prof_members[p_idx]
            if members.size == 0:
                continue
            if template.target_category is not None and template.target_category in cat_code:
                eligible = self.pois.cat_members[cat_code[template.target_category]]
            else:
                if template.target_category is not None:
                    log.warning(
                        "profession %r: no POIs of category %r; assigning from "
                        "all POIs", template.name, template.target_category,
                    )
                eligible = np.arange(self.pois.n)
            tree = cKDTree(self.pois.pos[eligible])
            homes = self.pop.home[members]
            in_range = tree.query_ball_point(homes, r=self.mv.mobility_range)
            u = rng.random(members.size)
            _, nearest = tree.query(homes, k=1)
            for j, agent in enumerate(members):
                cand = sorted(in_range[j])
                if cand:
                    local = cand[int(u[j] * len(cand))]
                else:
                    local = int(np.atleast_1d(nearest)[j])
                self.pop.assigned[agent] = eligible[local]

    # -- schedules --------------------------------------------------------

    @staticmethod
    def _skeleton_rows(template, n_visits):
        """Slot-of-day plan for one skeleton: what kind of task covers the
        start of each two-hour slot, and which service visit it is."""
        skeleton = day_skeleton(template, n_visits)
        kind_row = np.full(ITERATIONS_PER_DAY, _PLAN_HOME, dtype=np.int8)
        ord_row = np.zeros(ITERATIONS_PER_DAY, dtype=np.int8)
        ordinal = {}
        for task in skeleton:
            if task.kind == SERVICE_VISIT:
                ordinal[id(task)] = len(ordinal)
        for slot in range(ITERATIONS_PER_DAY):
            hours = slot * 2.0
            for task in skeleton:
                if task.active_at(hours):
                    if is_professional(task.kind):
                        kind_row[slot] = _PLAN_PROFESSIONAL
                    elif task.kind == SERVICE_VISIT:
                        kind_row[slot] = _PLAN_SERVICE
                        ord_row[slot] = ordinal[id(task)]
                    break
        return kind_row, ord_row

    def _build_day_plan(self, day: int):
        max_visits = self.cfg.service_max_visits
        have_service = bool(self.service_cat_codes) and max_visits > 0
        self.plan_kind[:] = _PLAN_HOME
        self.plan_ord[:] = 0
        if have_service:
            visit_counts = substream(self.seed, "plan", day).integers(
                0, max_visits + 1, size=self.pop.n
            )
            self.service_cat_draws = substream(self.seed, "schedule", day).integers(
                0, len(self.service_cat_codes), size=(self.pop.n, max_visits)
            )
        else:
            visit_counts = np.zeros(self.pop.n, dtype=np.int64)
            self.service_cat_draws = None
        for p_idx, template in enumerate(self.professions):
            all_members = self.prof_members[p_idx]
            if all_members.size == 0:
                continue
            for k in range(max_visits + 1):
                members = all_members[visit_counts[all_members] == k]
                if members.size == 0:
                    continue
                kind_row, ord_row = self._skeleton_rows(template, k)
                self.plan_kind[members] = kind_row
                self.plan_ord[members] = ord_row

    # -- one iteration ----------------------------------------------------

    def _movable_mask(self) -> np.ndarray:
        state = self.pop.state
        stuck = (state == _H) | (state == _D)
        stuck |= (state == _I) & (self.pop.days_sick > STATIONARY_SICK_DAYS)
        return ~stuck

    def _service_targets(self, slot: int, iteration: int, movable, targets):
        rows = np.flatnonzero(movable & (self.plan_kind[:, slot] == _PLAN_SERVICE))
        if rows.size == 0 or self.service_cat_draws is None:
            return
        draws = self.service_cat_draws[rows, self.plan_ord[rows, slot]]
        u_tie: np.ndarray | None = None
        for local_code in np.unique(draws):
            members = rows[draws == local_code]
            code = self.service_cat_codes[int(local_code)]
            cat_pois = self.pois.cat_members[code]
            elig = cat_pois[
                self.pois.active[cat_pois, slot]
                & (self.pois.visitors[cat_pois] < self.pois.quota[cat_pois])
            ]
            if elig.size == 0:
                if self.audit is not None:
                    self.audit.skipped_service_tasks += int(members.size)
                log.debug(
                    "iteration %d: no eligible %r POI; %d service visits skipped",
                    iteration, self.pois.cat_names[code], members.size,
                )
                continue
            tree = cKDTree(self.pois.pos[elig])
            kq = min(2, elig.size)
            dq, jq = tree.query(self.pop.pos[members], k=kq)
            if kq == 1:
                targets[members] = self.pois.pos[elig[np.atleast_1d(jq)]]
                continue
            chosen = jq[:, 0].copy()
            tie = np.isfinite(dq[:, 1]) & (dq[:, 1] == dq[:, 0])
            if tie.any():
                if u_tie is None:
                    u_tie = substream(self.seed, "target", iteration).random(self.pop.n)
                for row in np.flatnonzero(tie):
                    agent = members[row]
                    ball = tree.query_ball_point(
                        self.pop.pos[agent], dq[row, 0] * (1 + 1e-12) + 1e-9
                    )
                    cand = np.asarray(sorted(ball), dtype=int)
                    dx = self.pois.pos[elig[cand], 0] - self.pop.pos[agent, 0]
                    dy = self.pois.pos[elig[cand], 1] - self.pop.pos[agent, 1]
                    dd = np.sqrt(dx * dx + dy * dy)
                    best = cand[dd == dd.min()]
                    chosen[row] = best[int(u_tie[agent] * best.size)]
            targets[members] = self.pois.pos[elig[chosen]]

    def _move(self, movable, targets):
        mv = np.flatnonzero(movable)
        if mv.size == 0:
            return
        pos = self.pop.pos
        delta = targets[mv] - pos[mv]
        d = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)
        reach = d <= self.mv.mobility_range
        pos[mv[reach]] = targets[mv[reach]]
        far = mv[~reach]
        if far.size == 0:
            return
        dh_vec = self.pop.home[far] - pos[far]
        dh = np.sqrt(dh_vec[:, 0] ** 2 + dh_vec[:, 1] ** 2)
        home_ok = dh <= self.mv.mobility_range
        pos[far[home_ok]] = self.pop.home[far[home_ok]]
        rest = far[~home_ok]
        if rest.size == 0:
            return
        frac = (self.mv.mobility_range / dh[~home_ok])[:, None]
        cand = pos[rest] + (self.pop.home[rest] - pos[rest]) * frac
        inside = shapely.intersects_xy(self.city.boundary, cand[:, 0], cand[:, 1])
        pos[rest[inside]] = cand[inside]

    def _exposure(self, slot: int, iteration: int):
        entry = self.pois.slot_tree(slot)
        if entry is None:
            return
        tree, tpoi = entry
        state = self.pop.state
        part = np.flatnonzero((state != _H) & (state != _D))
        if part.size == 0:
            return
        kq = min(4, tpoi.size)
        bound = self.mv.exposure_distance * (1 + 1e-12) + 1e-9
        dq, jq = tree.query(self.pop.pos[part], k=kq, distance_upper_bound=bound)
        d0, jbest = _resolve_nearest_min_id(dq, jq)
        valid = np.isfinite(d0)
        if not valid.any():
            return
        agents = part[valid]
        poi_idx = tpoi[jbest[valid]]
        # exact inclusion test with the package distance formula
        dx = self.pop.pos[agents, 0] - self.pois.pos[poi_idx, 0]
        dy = self.pop.pos[agents, 1] - self.pois.pos[poi_idx, 1]
        within = np.sqrt(dx * dx + dy * dy) <= self.mv.exposure_distance
        agents = agents[within]
        poi_idx = poi_idx[within]
        if agents.size == 0:
            return

        order = np.argsort(poi_idx, kind="stable")  # agent ids stay ascending
        ga = agents[order]
        gp = poi_idx[order]
        boundaries = np.flatnonzero(np.r_[True, gp[1:] != gp[:-1]])
        counts = np.diff(np.r_[boundaries, gp.size])
        rank = np.arange(gp.size) - np.repeat(boundaries, counts)
        remaining = self.pois.quota[gp] - self.pois.visitors[gp]
        admit = rank < remaining
        if admit.any():
            np.add.at(self.pois.visitors, gp[admit], 1)
        adm_a = ga[admit]
        adm_p = gp[admit]
        if adm_a.size == 0:
            return
        infectious = state[adm_a] == _I
        if not infectious.any():
            return
        poi_has_source = np.zeros(self.pois.n, dtype=bool)
        poi_has_source[adm_p[infectious]] = True
        draws_mask = (state[adm_a] == _S) & poi_has_source[adm_p]
        if not draws_mask.any():
            return
        cand_a = adm_a[draws_mask]
        cand_p = adm_p[draws_mask]
        u = substream(self.seed, "exposure", iteration).random(self.pop.n)
        p = self.pois.p_eff[cand_p] * self.pop.susc[cand_a]
        hit = u[cand_a] < p
        if self.events is not None:
            for a, pp, uu in zip(cand_a, cand_p, u[cand_a]):
                self.events.append(
                    ExposureEvent(self.pois.id_list[int(pp)], int(a), iteration, float(uu))
                )
        self.pop.state[cand_a[hit]] = _E

    def _audit_iteration(self, iteration, pos_before, frozen_rows):
        audit = self.audit
        pop = self.pop
        moved = pos_before - pop.pos
        disp = np.sqrt(moved[:, 0] ** 2 + moved[:, 1] ** 2)
        too_far = np.flatnonzero(disp > self.mv.mobility_range * (1 + 1e-9))
        for a in too_far:
            audit.add(
                f"iteration {iteration}: agent {a} moved {disp[a]:.3f} m, "
                f"beyond mobility range {self.mv.mobility_range}"
            )
        if frozen_rows.size:
            changed = np.flatnonzero(disp[frozen_rows] > 0)
            for j in changed:
                a = frozen_rows[j]
                audit.add(
                    f"iteration {iteration}: stationary agent {a} "
                    f"(state {_STATE_NAMES[pop.state[a]]}, days_sick "
                    f"{pop.days_sick[a]}) changed position"
                )
        inside = shapely.intersects_xy(self.city.boundary, pop.pos[:, 0], pop.pos[:, 1])
        for a in np.flatnonzero(~inside):
            audit.add(f"iteration {iteration}: agent {a} is outside the boundary")
        overflow = int((self.pois.visitors - self.pois.quota).max(initial=0))
        if overflow > audit.max_quota_overflow:
            audit.max_quota_overflow = overflow
            if overflow > 0:
                audit.add(f"iteration {iteration}: POI visitors exceed quota by {overflow}")

    # -- rollover ---------------------------------------------------------

    def _progress_day(self, day: int):
        pop = self.pop
        prev = pop.state.copy()
        u = substream(self.seed, "progress", day).random((4, pop.n))
        p = self.params

        to_i = (prev == _E) & (u[3] < p.alpha)
        i_rows = prev == _I
        to_d_i = i_rows & (u[0] < p.delta)
        to_h = i_rows & ~to_d_i & (u[1] < p.hospitalization_probability)
        to_r_i = i_rows & ~to_d_i & ~to_h & (u[2] < p.gamma)
        stay_i = i_rows & ~to_d_i & ~to_h & ~to_r_i
        h_rows = prev == _H
        to_d_h = h_rows & (u[0] < p.hospital_death_rate)
        to_r_h = h_rows & ~to_d_h & (u[2] < p.gamma)

        pop.state[to_i] = _I
        pop.days_sick[to_i] = 0
        died = to_d_i | to_d_h
        pop.state[died] = _D
        pop.days_sick[died] = 0
        recovered = to_r_i | to_r_h
        pop.state[recovered] = _R
        pop.days_sick[recovered] = 0
        pop.days_sick[stay_i] += 1

        hosp_rows = np.flatnonzero(to_h)
        if hosp_rows.size:
            if self.pois.hospital_tree is None:
                raise ConfigError(
                    "an agent needs hospitalization but the scenario has no "
                    "hospital POI; add hospital POIs or set "
                    "hospitalization_probability=0"
                )
            pop.state[hosp_rows] = _H
            kq = min(4, self.pois.hospital_idx.size)
            dq, jq = self.pois.hospital_tree.query(pop.pos[hosp_rows], k=kq)
            _, jbest = _resolve_nearest_min_id(dq, jq)
            pop.pos[hosp_rows] = self.pois.pos[self.pois.hospital_idx[jbest]]

        if self.audit is not None:
            for bad in np.flatnonzero((prev == _R) & (pop.state != _R)):
                self.audit.add(f"day {day}: recovered agent {bad} left R")
            for bad in np.flatnonzero((prev == _D) & (pop.state != _D)):
                self.audit.add(f"day {day}: dead agent {bad} left D")

    # day-over-day state pairs that the progression rules can produce;
    # S can reach I in one day (exposed mid-day, incubation at rollover)
    _LEGAL_DAY_PAIRS = frozenset(
        {
            (_S, _S), (_S, _E), (_S, _I),
            (_E, _E), (_E, _I),
            (_I, _I), (_I, _H), (_I, _R), (_I, _D),
            (_H, _H), (_H, _R), (_H, _D),
            (_R, _R), (_D, _D),
        }
    )

    def _audit_day_pairs(self, day: int, state_at_day_start: np.ndarray):
        pair_codes = state_at_day_start.astype(np.int16) * 8 + self.pop.state
        legal = np.zeros(64, dtype=bool)
        for a, b in self._LEGAL_DAY_PAIRS:
            legal[a * 8 + b] = True
        for agent in np.flatnonzero(~legal[pair_codes]):
            self.audit.add(
                f"day {day}: agent {agent} made an illegal transition "
                f"{_STATE_NAMES[state_at_day_start[agent]]} -> "
                f"{_STATE_NAMES[self.pop.state[agent]]}"
            )

    def _rollover(self, day: int) -> DailyCounts:
        self._progress_day(day)
        counts = counts_from_states(self.pop.state, day)
        if counts.total != self.pop.n:
            raise PoisimError(
                f"population conservation broken on day {day}: "
                f"{counts.total} != {self.pop.n}"
            )
        return counts

    def _end_day(self, day: int):
        pop = self.pop
        returning = (pop.state != _H) & (pop.state != _D)
        pop.pos[returning] = pop.home[returning]
        if self.audit is not None:
            not_home = returning & np.any(pop.pos != pop.home, axis=1)
            for a in np.flatnonzero(not_home):
                self.audit.add(f"day {day}: agent {a} is not home at rollover")
            for i in np.flatnonzero(self.pois.visitors > self.pois.quota):
                self.audit.add(
                    f"day {day}: poi {self.pois.id_list[i]} closed the day "
                    f"over quota"
                )
            day_max = int(self.pois.visitors.max(initial=0))
            key = f"day-{day}"
            self.audit.max_daily_visitors[key] = day_max
        self.pois.visitors[:] = 0

    # -- snapshots ----------------------------------------------------------

    def write_snapshot(self, day: int, out_dir: Path) -> Path:
        lonlat = self.city.projection.inverse(self.pop.pos)
        features = []
        for i in range(self.pop.n):
            features.append(
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [float(lonlat[i, 0]), float(lonlat[i, 1])],
                    },
                    "properties": {
                        "agent_id": i,
                        "state": _STATE_NAMES[self.pop.state[i]],
                    },
                }
            )
        doc = {"type": "FeatureCollection", "features": features}
        path = Path(out_dir) / f"snapshot_{day}.geojson"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, separators=(",", ":"))
            fh.write("\n")
        return path

    # -- main loop ----------------------------------------------------------

    def run(self, snapshot_dir: Path | None = None,
            snapshot_paths: list[Path] | None = None):
        pop = self.pop
        initial = counts_from_states(pop.state, 0)
        daily: list[DailyCounts] = []
        if snapshot_paths is None:
            snapshot_paths = []
        clock = SimulationClock(0)
        for day in range(1, self.cfg.days + 1):
            self._build_day_plan(day)
            state_at_day_start = pop.state.copy() if self.audit is not None else None
            rolled = False
            for slot in range(ITERATIONS_PER_DAY):
                iteration = clock.iteration
                movable = self._movable_mask()
                frozen = np.flatnonzero(~movable)
                pos_before = pop.pos.copy() if self.audit is not None else None
                targets = pop.home.copy()
                prof_rows = movable & (self.plan_kind[:, slot] == _PLAN_PROFESSIONAL)
                assigned_rows = np.flatnonzero(prof_rows & (pop.assigned >= 0))
                targets[assigned_rows] = self.pois.pos[pop.assigned[assigned_rows]]
                self._service_targets(slot, iteration, movable, targets)
                self._move(movable, targets)
                self._exposure(slot, iteration)
                if self.audit is not None:
                    self._audit_iteration(iteration, pos_before, frozen)
                clock, rolled = advance(clock)
            if not rolled:  # pragma: no cover - loop structure guarantees it
                raise PoisimError("clock failed to roll over after 12 iterations")
            daily.append(self._rollover(day))
            if self.audit is not None:
                self._audit_day_pairs(day, state_at_day_start)
            if snapshot_dir is not None:
                snapshot_paths.append(self.write_snapshot(day, snapshot_dir))
            self._end_day(day)
        if self.audit is not None:
            self._final_series_audit(initial, daily)
        return initial, daily, snapshot_paths

    def _final_series_audit(self, initial: DailyCounts, daily: list[DailyCounts]):
        series = [initial] + daily
        for prev, cur in zip(series, series[1:]):
            if cur.r < prev.r:
                self.audit.add(f"day {cur.day}: recovered count decreased")
            if cur.d < prev.d:
                self.audit.add(f"day {cur.day}: death count decreased")


def _write_daily_counts(path: Path, initial: DailyCounts, daily: list[DailyCounts]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("day,S,E,I,H,R,D\n")
        for c in daily:
            fh.write(f"{c.day},{c.s},{c.e},{c.i},{c.h},{c.r},{c.d}\n")


def build_manifest(config: ScenarioConfig) -> str:
    return (
        "# poisim run manifest\n"
        f"# version = {__version__}\n"
        "# rerun with: poisim run --config <this file>\n"
        + config.to_text()
    )


def run_simulation(
    config: ScenarioConfig,
    out_dir=None,
    snapshots: bool = False,
    audit: bool = False,
    collect_events: bool = False,
) -> RunOutput:
    """Run one simulation and (optionally) write its output files.

    With ``out_dir`` set, writes ``daily_counts.csv`` and ``manifest.txt``
    (plus ``snapshot_<day>.geojson`` per day when ``snapshots`` is on).
    Partial outputs are removed if the run fails.
    """
    t0 = time.perf_counter()
    config.validate()
    if config.boundary_file is None or config.pois_file is None:
        raise ConfigError("boundary_file and pois_file are required to run")
    if snapshots and out_dir is None:
        raise UsageError("snapshots require an output directory")

    city, locations, report = load_city(
        config.boundary_file, config.pois_file, projection=config.projection
    )
    table = (
        load_poi_param_table(config.poi_params_file)
        if config.poi_params_file
        else None
    )
    poi_agents = spawn_pois(
        config, locations, table, substream(config.rng_seed, "spawn-poi")
    )
    population = spawn_population(config, city, substream(config.rng_seed, "spawn"))
    engine = _Engine(
        config, city, poi_agents, population, audit=audit,
        collect_events=collect_events,
    )

    written: list[Path] = []
    out_path: Path | None = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    snapshot_paths: list[Path] = []  # engine appends as it writes
    try:
        initial, daily, snapshot_paths = engine.run(
            snapshot_dir=out_path if snapshots else None,
            snapshot_paths=snapshot_paths,
        )
        manifest = build_manifest(config)
        if out_path is not None:
            counts_file = out_path / "daily_counts.csv"
            _write_daily_counts(counts_file, initial, daily)
            written.append(counts_file)
            manifest_file = out_path / "manifest.txt"
            manifest_file.write_text(manifest, encoding="utf-8", newline="\n")
            written.append(manifest_file)
    except Exception:
        for path in written + snapshot_paths:
            try:
                path.unlink()
            except OSError:  # pragma: no cover - best-effort cleanup
                pass
        raise

    return RunOutput(
        daily_counts=daily,
        initial_counts=initial,
        manifest=manifest,
        snapshot_paths=snapshot_paths,
        audit=engine.audit,
        exposure_events=engine.events,
        runtime_seconds=time.perf_counter() - t0,
        load_report_lines=report.lines(),
    )
