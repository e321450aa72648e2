"""Exposure at POIs and daily disease progression."""

import numpy as np
import pytest

from poisim.agents import EpidemicParams, IndividualAgent, PoiAgent, SeihrdState
from poisim.epidemic import (
    DailyCounts,
    collect_counts,
    counts_from_states,
    daily_progression,
    effective_spread_probability,
    exposure_step,
    hospitalize,
)
from poisim.errors import ConfigError
from poisim.geo import SpatialIndex, build_index
from poisim.movement import MovementParams
from poisim.rng import substream

PARAMS = EpidemicParams(alpha=0.2, beta=10.0, gamma=0.1, delta=0.01,
                        hospitalization_probability=0.05,
                        weather_factor=0.25, healthcare_quality=0.5)
MV = MovementParams(mobility_range=10_000.0, exposure_distance=100.0)


class ScriptedRng:
    """Returns pre-chosen uniforms; lets tests force each branch."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def make_poi(quota=100, spread=1.0, outdoor=False, slots=None):
    return PoiAgent(
        poi_id="poi-x", category="park" if outdoor else "office",
        position=(0.0, 0.0),
        activity_slots=frozenset(slots if slots is not None else range(12)),
        occupancy_quota=quota, spread_probability=spread, is_outdoor=outdoor,
    )


def make_agent(i, state=SeihrdState.S, pos=(0.0, 0.0), susceptibility=1.0):
    return IndividualAgent(
        agent_id=i, state=state, home=pos, current_position=pos,
        susceptibility=susceptibility,
    )


class TestEffectiveSpread:
    def test_indoor_unchanged(self):
        assert effective_spread_probability(make_poi(spread=0.8), PARAMS) == 0.8

    def test_outdoor_damped_by_weather(self):
        poi = make_poi(spread=0.8, outdoor=True)
        assert effective_spread_probability(poi, PARAMS) == \
            pytest.approx(0.8 * 0.75)


class TestExposureStep:
    def test_exposes_susceptibles_with_source(self):
        poi = make_poi(spread=1.0)
        agents = [make_agent(0, SeihrdState.I)] + \
            [make_agent(i) for i in range(1, 6)]
        exposed = exposure_step(poi, agents, PARAMS, MV, substream(0, "e"))
        assert exposed == {1, 2, 3, 4, 5}
        for a in agents[1:]:
            assert a.state == SeihrdState.E

    def test_no_infectious_no_exposure_but_quota_consumed(self):
        poi = make_poi(spread=1.0, quota=3)
        agents = [make_agent(i) for i in range(5)]
        exposed = exposure_step(poi, agents, PARAMS, MV, substream(0, "e"))
        assert exposed == set()
        assert poi.visitors_today == 3  # admission happens regardless

    def test_admission_is_agent_id_order(self):
        poi = make_poi(spread=1.0, quota=3)
        agents = [make_agent(i) for i in (4, 2, 0, 3, 1)]
        agents.append(make_agent(9, SeihrdState.I))
        # ids 0,1,2 admitted; 3,4 over quota; 9 over quota too
        exposed = exposure_step(poi, agents, PARAMS, MV, substream(0, "e"))
        assert exposed == set()  # the only infectious agent passed through
        assert poi.visitors_today == 3

    def test_overflow_passes_through_unexposed(self):
        poi = make_poi(spread=1.0, quota=2)
        agents = [make_agent(0, SeihrdState.I)] + \
            [make_agent(i) for i in range(1, 6)]
        exposed = exposure_step(poi, agents, PARAMS, MV, substream(0, "e"))
        assert exposed == {1}
        assert poi.visitors_today == 2
        for a in agents[2:]:
            assert a.state == SeihrdState.S

    def test_distance_cutoff_inclusive(self):
        poi = make_poi(spread=1.0)
        at_edge = make_agent(1, pos=(100.0, 0.0))
        beyond = make_agent(2, pos=(100.0001, 0.0))
        exposure_step(poi, [make_agent(0, SeihrdState.I), at_edge, beyond],
                      PARAMS, MV, substream(0, "e"))
        assert at_edge.state == SeihrdState.E
        assert beyond.state == SeihrdState.S
        assert poi.visitors_today == 2

    def test_hospitalized_and_dead_ignored(self):
        poi = make_poi(spread=1.0, quota=2)
        agents = [
            make_agent(0, SeihrdState.H),
            make_agent(1, SeihrdState.D),
            make_agent(2, SeihrdState.I),
            make_agent(3),
        ]
        exposed = exposure_step(poi, agents, PARAMS, MV, substream(0, "e"))
        assert exposed == {3}
        assert poi.visitors_today == 2  # H and D never consume quota

    def test_susceptibility_scales_probability(self):
        rng = substream(42, "e")
        n = 4000
        poi = make_poi(spread=0.5, quota=n + 1)
        agents = [make_agent(0, SeihrdState.I)] + [
            make_agent(i, susceptibility=0.4) for i in range(1, n + 1)]
        exposed = exposure_step(poi, agents, PARAMS, MV, rng)
        share = len(exposed) / n
        assert 0.15 <= share <= 0.25  # p = 0.2

    def test_zero_spread_never_exposes(self):
        poi = make_poi(spread=0.0)
        agents = [make_agent(0, SeihrdState.I)] + \
            [make_agent(i) for i in range(1, 50)]
        for _ in range(5):
            assert exposure_step(poi, agents, PARAMS, MV,
                                 substream(0, "e")) == set()

    def test_events_record_draws(self):
        poi = make_poi(spread=1.0)
        agents = [make_agent(0, SeihrdState.I), make_agent(1), make_agent(2)]
        events = []
        exposure_step(poi, agents, PARAMS, MV, substream(0, "e"),
                      iteration=17, events=events)
        assert [e.agent_id for e in events] == [1, 2]
        assert all(e.poi_id == "poi-x" and e.iteration == 17 for e in events)
        assert all(0.0 <= e.draw < 1.0 for e in events)


class TestDailyProgression:
    def test_exposed_becomes_infectious(self):
        agent = make_agent(0, SeihrdState.E)
        daily_progression(agent, PARAMS, ScriptedRng([0.19]))
        assert agent.state == SeihrdState.I
        assert agent.days_sick == 0

    def test_exposed_stays_exposed(self):
        agent = make_agent(0, SeihrdState.E)
        daily_progression(agent, PARAMS, ScriptedRng([0.21]))
        assert agent.state == SeihrdState.E

    def test_infectious_death_first(self):
        agent = make_agent(0, SeihrdState.I)
        daily_progression(agent, PARAMS, ScriptedRng([0.009]))
        assert agent.state == SeihrdState.D

    def test_infectious_hospitalization_keeps_days_sick(self):
        agent = make_agent(0, SeihrdState.I)
        agent.days_sick = 4
        daily_progression(agent, PARAMS, ScriptedRng([0.9, 0.04]))
        assert agent.state == SeihrdState.H
        assert agent.days_sick == 4

    def test_infectious_recovery(self):
        agent = make_agent(0, SeihrdState.I)
        agent.days_sick = 3
        daily_progression(agent, PARAMS, ScriptedRng([0.9, 0.9, 0.09]))
        assert agent.state == SeihrdState.R
        assert agent.days_sick == 0

    def test_infectious_stays_and_ages(self):
        agent = make_agent(0, SeihrdState.I)
        daily_progression(agent, PARAMS, ScriptedRng([0.9, 0.9, 0.9]))
        assert agent.state == SeihrdState.I
        assert agent.days_sick == 1

    def test_hospital_death_uses_care_quality(self):
        # delta 0.01, quality 0.5 -> hospital death rate 0.005
        agent = make_agent(0, SeihrdState.H)
        daily_progression(agent, PARAMS, ScriptedRng([0.0049]))
        assert agent.state == SeihrdState.D
        agent = make_agent(0, SeihrdState.H)
        daily_progression(agent, PARAMS, ScriptedRng([0.0051, 0.9]))
        assert agent.state == SeihrdState.H

    def test_hospital_recovery(self):
        agent = make_agent(0, SeihrdState.H)
        daily_progression(agent, PARAMS, ScriptedRng([0.9, 0.05]))
        assert agent.state == SeihrdState.R

    def test_susceptible_and_terminal_states_untouched(self):
        for state in (SeihrdState.S, SeihrdState.R, SeihrdState.D):
            agent = make_agent(0, state)
            daily_progression(agent, PARAMS, ScriptedRng([]))
            assert agent.state == state


class TestHospitalize:
    def hospitals(self):
        return build_index([
            make_poi_at("h-far", (1000.0, 0.0)),
            make_poi_at("h-near", (10.0, 0.0)),
        ])

    def test_moves_to_nearest(self):
        agent = make_agent(0, SeihrdState.H, pos=(0.0, 0.0))
        hospitalize(agent, self.hospitals(), hospital_category=None)
        assert tuple(agent.current_position) == (10.0, 0.0)

    def test_tie_resolves_to_smaller_id(self):
        index = SpatialIndex(["h-b", "h-a"],
                             np.array([[5.0, 0.0], [-5.0, 0.0]]))
        agent = make_agent(0, SeihrdState.H, pos=(0.0, 0.0))
        hospitalize(agent, index, hospital_category=None)
        assert tuple(agent.current_position) == (-5.0, 0.0)

    def test_no_hospital_is_an_error(self):
        index = SpatialIndex(["x"], np.array([[0.0, 0.0]]),
                             categories=["park"])
        agent = make_agent(0, SeihrdState.H)
        with pytest.raises(ConfigError, match="hospital"):
            hospitalize(agent, index, hospital_category="hospital")


def make_poi_at(pid, pos):
    return PoiAgent(
        poi_id=pid, category="hospital", position=pos,
        activity_slots=frozenset(range(12)), occupancy_quota=100,
        spread_probability=0.5, is_hospital=True,
    )


class TestCounts:
    def test_collect_counts(self):
        agents = [make_agent(i, s) for i, s in enumerate(
            [SeihrdState.S, SeihrdState.S, SeihrdState.E, SeihrdState.I,
             SeihrdState.H, SeihrdState.R, SeihrdState.D])]
        counts = collect_counts(agents, day=3)
        assert counts == DailyCounts(3, 2, 1, 1, 1, 1, 1)
        assert counts.total == 7

    def test_counts_from_states_agrees(self):
        rng = np.random.default_rng(0)
        states = rng.integers(0, 6, size=500).astype(np.int8)
        agents = [make_agent(i, SeihrdState(int(s)))
                  for i, s in enumerate(states)]
        assert counts_from_states(states, 1) == collect_counts(agents, 1)

    def test_negative_count_rejected(self):
        with pytest.raises(ConfigError):
            DailyCounts(0, -1, 0, 0, 0, 0, 0)
