"""File-based parameter ingestion.

Turns external datasets into simulation parameters: POI visit patterns into
POI counts, per-category occupancy quotas and activity periods; health rates
per 100,000 into daily probabilities; and device at-home counts into a
social-distancing factor.  All schemas are fixed CSV layouts with a
versioned ``#`` comment header; see the README for the exact columns.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, UsageError

log = logging.getLogger(__name__)

HOURS_PER_DAY = 24
SLOTS_PER_DAY = 12
DEFAULT_PEAK_FRACTION = 0.5
RATE_DENOMINATOR = 100_000.0

PATTERNS_HEADER = ["poi_id", "category", "daily_visits", "hourly_profile"]
RATES_HEADER = ["band", "infection_per_100k", "hospitalization_per_100k",
                "death_per_100k"]
DISTANCING_HEADER = ["date", "total_devices", "at_home_devices"]
OBSERVED_HEADER = ["day", "infections"]
CATEGORY_HEADER = ["category", "activity_slots", "occupancy",
                   "spread_probability"]


@dataclass(frozen=True)
class PoiPatternRecord:
    poi_id: str
    category: str
    daily_visit_counts: tuple[int, ...]
    hourly_visit_profile: tuple[int, ...]  # 24 entries

    def mean_daily_visits(self) -> float:
        return float(np.mean(self.daily_visit_counts))


@dataclass(frozen=True)
class RateRow:
    band: str
    infection: float
    hospitalization: float
    death: float


@dataclass(frozen=True)
class RateTable:
    dimension: str
    rows: tuple[RateRow, ...]

    def bands(self) -> tuple[str, ...]:
        return tuple(r.band for r in self.rows)


@dataclass(frozen=True)
class CategoryParams:
    activity_slots: frozenset[int]
    occupancy: int
    spread_probability: float


def _read_rows(path, expected_header: list[str]) -> list[list[str]]:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    with fh:
        rows = [r for r in csv.reader(fh) if r]
    rows = [r for r in rows if not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if header != expected_header:
        raise DataError(
            f"{path}: unexpected header {header}; expected {expected_header}"
        )
    return rows[1:]


def _int_list(field: str, what: str, path) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in field.split(";") if tok != "")
    except ValueError as exc:
        raise DataError(f"{path}: cannot parse {what} {field!r}") from exc


def load_patterns(path) -> list[PoiPatternRecord]:
    """Parse a POI visit-pattern file."""
    records: list[PoiPatternRecord] = []
    for lineno, row in enumerate(_read_rows(path, PATTERNS_HEADER), start=2):
        if len(row) != 4:
            raise DataError(f"{path}: line {lineno}: expected 4 columns")
        poi_id, category, daily, hourly = (c.strip() for c in row)
        daily_counts = _int_list(daily, "daily_visits", path)
        profile = _int_list(hourly, "hourly_profile", path)
        if not daily_counts:
            raise DataError(f"{path}: line {lineno}: empty daily_visits")
        if len(profile) != HOURS_PER_DAY:
            raise DataError(
                f"{path}: line {lineno}: hourly_profile must have "
                f"{HOURS_PER_DAY} entries, got {len(profile)}"
            )
        if min(daily_counts) < 0 or min(profile) < 0:
            raise DataError(f"{path}: line {lineno}: negative visit count")
        records.append(PoiPatternRecord(poi_id, category, daily_counts, profile))
    if not records:
        raise DataError(f"{path}: no pattern records")
    return records


def derive_poi_count(
    patterns: Sequence[PoiPatternRecord],
    population: int,
    available_locations: int | None = None,
) -> int:
    """POI count scaled to the population.

    Uses the mean daily visits per POI in the patterns: the returned count
    keeps population / POIs at the observed visits-per-POI ratio.  The count
    is at least 1 and, when ``available_locations`` is given, at most that.
    """
    if not patterns:
        raise UsageError("cannot derive a POI count from zero pattern records")
    if population <= 0:
        raise UsageError("population must be >= 1")
    if available_locations is not None and available_locations <= 0:
        raise UsageError("available_locations must be >= 1")
    visits_per_poi = float(
        np.mean([r.mean_daily_visits() for r in patterns])
    )
    if visits_per_poi <= 0:
        raise UsageError("patterns have zero total visits; cannot scale POI count")
    count = max(1, int(round(population / visits_per_poi)))
    if available_locations is not None:
        count = min(count, int(available_locations))
    return count


def profile_to_slots(profile: Sequence[int]) -> np.ndarray:
    """Sum a 24-hour profile into the 12 two-hour slots."""
    arr = np.asarray(profile, dtype=float)
    if arr.size != HOURS_PER_DAY:
        raise UsageError(f"profile must have {HOURS_PER_DAY} entries")
    return arr.reshape(SLOTS_PER_DAY, 2).sum(axis=1)


def derive_activity_period(
    record: PoiPatternRecord,
    slots_per_day: int = SLOTS_PER_DAY,
    peak_fraction: float = DEFAULT_PEAK_FRACTION,
) -> frozenset[int]:
    """Slots whose visit volume reaches ``peak_fraction`` of the peak slot.

    An all-zero profile yields all slots (always open) with a warning.
    """
    if slots_per_day != SLOTS_PER_DAY:
        raise UsageError(f"slots_per_day must be {SLOTS_PER_DAY}")
    binned = profile_to_slots(record.hourly_visit_profile)
    peak = binned.max()
    if peak <= 0:
        log.warning(
            "poi %r: hourly profile is all zero; treating as always active",
            record.poi_id,
        )
        return frozenset(range(SLOTS_PER_DAY))
    return frozenset(int(s) for s in np.flatnonzero(binned >= peak_fraction * peak))


def parse_health_rates(path, dimension: str = "age") -> RateTable:
    """Parse per-100k health rates into daily probabilities.

    Rows with negative rates or rates above 100,000 are rejected with a
    warning; a file with no usable rows is a fatal data error.
    """
    rows_out: list[RateRow] = []
    for lineno, row in enumerate(_read_rows(path, RATES_HEADER), start=2):
        if len(row) != 4:
            raise DataError(f"{path}: line {lineno}: expected 4 columns")
        band = row[0].strip()
        try:
            values = [float(c) for c in row[1:]]
        except ValueError:
            log.warning("%s: line %d: non-numeric rate, row rejected", path, lineno)
            continue
        if min(values) < 0 or max(values) > RATE_DENOMINATOR:
            log.warning(
                "%s: line %d: rate outside [0, %d], row rejected",
                path, lineno, int(RATE_DENOMINATOR),
            )
            continue
        inf, hosp, death = (v / RATE_DENOMINATOR for v in values)
        rows_out.append(RateRow(band, inf, hosp, death))
    if not rows_out:
        raise DataError(f"{path}: no usable health-rate rows")
    return RateTable(dimension=dimension, rows=tuple(rows_out))


def multipliers_from_rates(table: RateTable) -> dict[str, float]:
    """Relative susceptibility multipliers per band: infection rates
    normalized by the largest band's rate (all 1.0 when rates are zero)."""
    peak = max(r.infection for r in table.rows)
    if peak <= 0:
        return {r.band: 1.0 for r in table.rows}
    return {r.band: r.infection / peak for r in table.rows}


def derive_social_distancing(path) -> float:
    """Mean fraction of devices away from home across the file's days.

    Days with zero total devices are skipped with a warning; if no day is
    usable this is a data error.
    """
    fractions: list[float] = []
    for lineno, row in enumerate(_read_rows(path, DISTANCING_HEADER), start=2):
        if len(row) != 3:
            raise DataError(f"{path}: line {lineno}: expected 3 columns")
        try:
            total = float(row[1])
            at_home = float(row[2])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: non-numeric device count") from exc
        if total <= 0:
            log.warning("%s: line %d: zero total devices, day skipped", path, lineno)
            continue
        if at_home < 0 or at_home > total:
            raise DataError(
                f"{path}: line {lineno}: at_home_devices must be in [0, total]"
            )
        fractions.append(1.0 - at_home / total)
    if not fractions:
        raise DataError(f"{path}: no usable distancing rows")
    return float(np.mean(fractions))


def load_observed_series(path) -> np.ndarray:
    """Observed daily infections for calibration, ordered by day."""
    rows = _read_rows(path, OBSERVED_HEADER)
    days: list[tuple[int, float]] = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 2 columns")
        try:
            days.append((int(row[0]), float(row[1])))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: non-numeric value") from exc
    days.sort(key=lambda t: t[0])
    return np.asarray([v for _, v in days], dtype=float)


def load_poi_param_table(path) -> dict[str, CategoryParams]:
    """Read a per-category POI parameter table."""
    table: dict[str, CategoryParams] = {}
    for lineno, row in enumerate(_read_rows(path, CATEGORY_HEADER), start=2):
        if len(row) != 4:
            raise DataError(f"{path}: line {lineno}: expected 4 columns")
        category = row[0].strip()
        if category in table:
            raise DataError(f"{path}: duplicate category {category!r}")
        slots = _int_list(row[1].strip(), "activity_slots", path)
        if not slots or not set(slots) <= set(range(SLOTS_PER_DAY)):
            raise DataError(
                f"{path}: line {lineno}: activity_slots must be a non-empty "
                f"subset of 0..11"
            )
        try:
            occupancy = int(row[2])
            spread = float(row[3])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: bad numeric field") from exc
        if occupancy < 0 or not 0.0 <= spread <= 1.0:
            raise DataError(f"{path}: line {lineno}: value out of range")
        table[category] = CategoryParams(frozenset(slots), occupancy, spread)
    if not table:
        raise DataError(f"{path}: no category rows")
    return table


def write_poi_param_table(path, table: Mapping[str, CategoryParams]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# poisim poi-category-params schema v1\n")
        fh.write(",".join(CATEGORY_HEADER) + "\n")
        for category in sorted(table):
            p = table[category]
            slots = ";".join(str(s) for s in sorted(p.activity_slots))
            fh.write(f"{category},{slots},{p.occupancy},{p.spread_probability!r}\n")


def default_poi_param_table() -> dict[str, CategoryParams]:
    """The table of built-in category parameters shipped with the package.

    Spread probabilities are anchored at 0.3 for low-commingling venues
    (e.g. parks) and 0.9 for close-quarters venues (e.g. bars), with the
    remaining categories placed between the anchors.
    """
    ref = resources.files("poisim").joinpath("data/poi_category_defaults.csv")
    with resources.as_file(ref) as path:
        return load_poi_param_table(path)


def derive_category_params(
    patterns: Sequence[PoiPatternRecord],
    peak_fraction: float = DEFAULT_PEAK_FRACTION,
    spread_defaults: Mapping[str, CategoryParams] | None = None,
    fallback_spread: float = 0.6,
) -> dict[str, CategoryParams]:
    """Aggregate pattern records into a per-category parameter table.

    Occupancy quota is the rounded mean of the category's mean daily visits
    (at least 1); the activity period comes from the category's summed
    hourly profile; spread probability falls back to the bundled defaults
    (or ``fallback_spread`` for unknown categories).
    """
    if not patterns:
        raise UsageError("no pattern records")
    if spread_defaults is None:
        spread_defaults = default_poi_param_table()
    by_cat: dict[str, list[PoiPatternRecord]] = {}
    for rec in patterns:
        by_cat.setdefault(rec.category, []).append(rec)
    table: dict[str, CategoryParams] = {}
    for category in sorted(by_cat):
        recs = by_cat[category]
        occupancy = max(1, int(round(float(np.mean(
            [r.mean_daily_visits() for r in recs]
        )))))
        summed = np.zeros(HOURS_PER_DAY, dtype=float)
        for r in recs:
            summed += np.asarray(r.hourly_visit_profile, dtype=float)
        merged = PoiPatternRecord(
            poi_id=f"<{category}>",
            category=category,
            daily_visit_counts=(0,),
            hourly_visit_profile=tuple(int(v) for v in summed),
        )
        slots = derive_activity_period(merged, peak_fraction=peak_fraction)
        default = spread_defaults.get(category)
        spread = default.spread_probability if default else fallback_spread
        table[category] = CategoryParams(slots, occupancy, spread)
    return table


def write_rate_probabilities(path, table: RateTable) -> None:
    """Write parsed daily probabilities (one row per band)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# poisim health-probabilities schema v1\n")
        fh.write("band,p_infection,p_hospitalization,p_death\n")
        for r in table.rows:
            fh.write(f"{r.band},{r.infection!r},{r.hospitalization!r},{r.death!r}\n")


def write_distancing_factor(path, factor: float) -> None:
    """Write the derived factor as a config-syntax line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"social_distancing_factor={factor!r}\n")
