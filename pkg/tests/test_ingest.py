"""File-based parameter ingestion and its arithmetic."""

import numpy as np
import pytest

from poisim.errors import DataError, UsageError
from poisim.ingest import (
    CategoryParams,
    PoiPatternRecord,
    RateRow,
    RateTable,
    default_poi_param_table,
    derive_activity_period,
    derive_category_params,
    derive_poi_count,
    derive_social_distancing,
    load_observed_series,
    load_patterns,
    load_poi_param_table,
    multipliers_from_rates,
    parse_health_rates,
    profile_to_slots,
    write_poi_param_table,
)


def pattern(poi_id="p1", category="restaurant", visits=(10,), profile=None):
    if profile is None:
        profile = tuple([0] * 24)
    return PoiPatternRecord(poi_id, category, tuple(visits), tuple(profile))


def write(path, text):
    path.write_text(text)
    return path


class TestLoadPatterns:
    def test_parses_lists(self, tmp_path):
        f = write(tmp_path / "p.csv",
                  "poi_id,category,daily_visits,hourly_profile\n"
                  "a,park,1;2;3," + ";".join(["1"] * 24) + "\n")
        records = load_patterns(f)
        assert records[0].poi_id == "a"
        assert records[0].daily_visit_counts == (1, 2, 3)
        assert records[0].mean_daily_visits() == 2.0

    def test_comments_skipped(self, tmp_path):
        f = write(tmp_path / "p.csv",
                  "# a comment\n"
                  "poi_id,category,daily_visits,hourly_profile\n"
                  "a,park,5," + ";".join(["0"] * 24) + "\n")
        assert len(load_patterns(f)) == 1

    def test_wrong_header_rejected(self, tmp_path):
        f = write(tmp_path / "p.csv", "nope,nope\n")
        with pytest.raises(DataError, match="header"):
            load_patterns(f)

    def test_short_profile_rejected(self, tmp_path):
        f = write(tmp_path / "p.csv",
                  "poi_id,category,daily_visits,hourly_profile\n"
                  "a,park,5,1;2;3\n")
        with pytest.raises(DataError):
            load_patterns(f)

    def test_negative_visits_rejected(self, tmp_path):
        f = write(tmp_path / "p.csv",
                  "poi_id,category,daily_visits,hourly_profile\n"
                  "a,park,-5," + ";".join(["0"] * 24) + "\n")
        with pytest.raises(DataError):
            load_patterns(f)

    def test_empty_file_rejected(self, tmp_path):
        f = write(tmp_path / "p.csv",
                  "poi_id,category,daily_visits,hourly_profile\n")
        with pytest.raises(DataError):
            load_patterns(f)


class TestDerivePoiCount:
    def test_ratio_arithmetic(self):
        patterns = [pattern(visits=(30,)), pattern("p2", visits=(20,))]
        assert derive_poi_count(patterns, 10_000) == 400

    def test_single_poi_tiny_population(self):
        assert derive_poi_count([pattern(visits=(1, 1, 1))], 1) == 1

    def test_clamped_to_available(self):
        patterns = [pattern(visits=(1,))]
        assert derive_poi_count(patterns, 9000, available_locations=4000) == \
            4000

    def test_zero_population_rejected(self):
        with pytest.raises(UsageError):
            derive_poi_count([pattern(visits=(1,))], 0)

    def test_no_patterns_rejected(self):
        with pytest.raises(UsageError):
            derive_poi_count([], 100)

    def test_zero_visits_rejected(self):
        with pytest.raises(UsageError):
            derive_poi_count([pattern(visits=(0, 0))], 100)


class TestActivityPeriod:
    def test_single_peak_hour_pair(self):
        profile = [0] * 24
        profile[12] = 5
        profile[13] = 7
        got = derive_activity_period(pattern(profile=profile))
        assert got == frozenset({6})

    def test_uniform_profile_all_slots(self):
        got = derive_activity_period(pattern(profile=[3] * 24))
        assert got == frozenset(range(12))

    def test_all_zero_defaults_to_all_slots(self):
        got = derive_activity_period(pattern(profile=[0] * 24))
        assert got == frozenset(range(12))

    def test_threshold_is_half_of_peak(self):
        profile = [0] * 24
        profile[0] = 10   # slot 0 -> 10 (the peak)
        profile[2] = 5    # slot 1 -> 5, exactly half: included
        profile[4] = 4    # slot 2 -> 4, below half: excluded
        got = derive_activity_period(pattern(profile=profile))
        assert got == frozenset({0, 1})

    def test_profile_binning(self):
        profile = list(range(24))
        binned = profile_to_slots(profile)
        assert binned.tolist() == [1, 5, 9, 13, 17, 21, 25, 29, 33, 37, 41, 45]


class TestHealthRates:
    def test_division_by_100k(self, tmp_path):
        f = write(tmp_path / "r.csv",
                  "band,infection_per_100k,hospitalization_per_100k,"
                  "death_per_100k\n"
                  "adults,5000,400,250\n")
        table = parse_health_rates(f)
        row = table.rows[0]
        assert row.infection == 0.05
        assert row.hospitalization == 0.004
        assert row.death == 0.0025

    def test_bounds_zero_and_full(self, tmp_path):
        f = write(tmp_path / "r.csv",
                  "band,infection_per_100k,hospitalization_per_100k,"
                  "death_per_100k\n"
                  "a,0,0,0\nb,100000,100000,100000\n")
        table = parse_health_rates(f)
        assert table.rows[0].infection == 0.0
        assert table.rows[1].infection == 1.0

    def test_bad_rows_skipped_with_survivors(self, tmp_path):
        f = write(tmp_path / "r.csv",
                  "band,infection_per_100k,hospitalization_per_100k,"
                  "death_per_100k\n"
                  "bad,-5,0,0\n"
                  "huge,200000,0,0\n"
                  "nan,abc,0,0\n"
                  "good,100,10,1\n")
        table = parse_health_rates(f)
        assert table.bands() == ("good",)

    def test_all_rows_bad_is_fatal(self, tmp_path):
        f = write(tmp_path / "r.csv",
                  "band,infection_per_100k,hospitalization_per_100k,"
                  "death_per_100k\n"
                  "bad,-5,0,0\n")
        with pytest.raises(DataError):
            parse_health_rates(f)

    def test_dimension_carried(self, tmp_path):
        f = write(tmp_path / "r.csv",
                  "band,infection_per_100k,hospitalization_per_100k,"
                  "death_per_100k\n"
                  "x,1,1,1\n")
        assert parse_health_rates(f, dimension="income").dimension == "income"


class TestMultipliers:
    def test_normalized_by_peak(self):
        table = RateTable("age", (
            RateRow("young", 0.02, 0.0, 0.0),
            RateRow("old", 0.08, 0.0, 0.0),
        ))
        assert multipliers_from_rates(table) == {"young": 0.25, "old": 1.0}

    def test_all_zero_gives_ones(self):
        table = RateTable("age", (RateRow("a", 0.0, 0.0, 0.0),))
        assert multipliers_from_rates(table) == {"a": 1.0}


class TestSocialDistancing:
    def test_mean_mobility_fraction(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,100,60\n"
                  "2020-03-02,100,50\n")
        assert derive_social_distancing(f) == 0.45

    def test_full_lockdown(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,500,500\n")
        assert derive_social_distancing(f) == 0.0

    def test_nobody_home(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,500,0\n")
        assert derive_social_distancing(f) == 1.0

    def test_zero_total_skipped(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,0,0\n"
                  "2020-03-02,100,25\n")
        assert derive_social_distancing(f) == 0.75

    def test_at_home_beyond_total_rejected(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,100,150\n")
        with pytest.raises(DataError):
            derive_social_distancing(f)

    def test_no_usable_days_rejected(self, tmp_path):
        f = write(tmp_path / "d.csv",
                  "date,total_devices,at_home_devices\n"
                  "2020-03-01,0,0\n")
        with pytest.raises(DataError):
            derive_social_distancing(f)


class TestObservedSeries:
    def test_sorted_by_day(self, tmp_path):
        f = write(tmp_path / "o.csv",
                  "day,infections\n3,30\n1,10\n2,20\n")
        got = load_observed_series(f)
        assert got.tolist() == [10.0, 20.0, 30.0]

    def test_non_numeric_rejected(self, tmp_path):
        f = write(tmp_path / "o.csv", "day,infections\nx,10\n")
        with pytest.raises(DataError):
            load_observed_series(f)


class TestCategoryTable:
    def test_round_trip_is_value_identical(self, tmp_path):
        table = {
            "bar": CategoryParams(frozenset({8, 9, 10}), 80, 0.9),
            "park": CategoryParams(frozenset(range(12)), 200, 0.3),
        }
        path = tmp_path / "t.csv"
        write_poi_param_table(path, table)
        assert load_poi_param_table(path) == table

    def test_default_table_well_formed(self):
        table = default_poi_param_table()
        assert "hospital" in table
        for params in table.values():
            assert params.activity_slots
            assert params.activity_slots <= frozenset(range(12))
            assert params.occupancy >= 1
            assert 0.0 <= params.spread_probability <= 1.0
        # spread anchors: open-air low, packed-indoor high
        assert table["park"].spread_probability == 0.3
        assert table["bar"].spread_probability == 0.9

    def test_derive_category_params(self):
        profile = [0] * 24
        profile[12] = 10
        profile[13] = 10
        patterns = [
            pattern("a", "restaurant", (30, 40, 50), profile),
            pattern("b", "restaurant", (20, 20, 20), profile),
            pattern("c", "mystery", (8,), profile),
        ]
        table = derive_category_params(patterns)
        assert table["restaurant"].occupancy == 30  # mean of {40, 20}
        assert table["restaurant"].activity_slots == frozenset({6})
        # known category takes the bundled spread value
        assert table["restaurant"].spread_probability == \
            default_poi_param_table()["restaurant"].spread_probability
        # unknown category falls back to the neutral default
        assert table["mystery"].spread_probability == 0.6
