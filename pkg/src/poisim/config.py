"""Scenario configuration: flat ``key=value`` text with dotted keys.

``#`` starts a comment and blank lines are ignored.  Multi-valued fields use
``;`` separators.  Unknown keys are an error.  Defaults reproduce the
reference scenario: 10,000 individual agents, 4,000 POI agents, a weather
factor of 0.25, healthcare quality of 0.5, 30 simulated days, 100 m exposure
distance, 10,000 m mobility range, 1% initially infectious, and 57.5%
initially vaccinated.

Serialization emits every key, so a saved config (or run manifest) is a
complete, reloadable scenario.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError, UsageError
from .scheduler import ProfessionTemplate

CONFIG_HEADER = "# poisim scenario config v1"

_PROJECTIONS = ("auto", "none", "equirectangular")
_BAND_DIMENSIONS = ("age", "gender", "income")
_SUSCEPTIBILITY_DIMENSIONS = ("age", "profession", "gender", "income")

DEFAULT_PROFESSIONS: tuple[ProfessionTemplate, ...] = (
    ProfessionTemplate("worker", share=0.4, task=("work", 8.0, 16.0)),
    ProfessionTemplate("student", share=0.25, task=("school", 8.0, 14.0),
                       target_category="school"),
    ProfessionTemplate("medical", share=0.05, task=("hospital_visit", 8.0, 20.0),
                       target_category="hospital"),
    ProfessionTemplate("other", share=0.3),
)


@dataclass(frozen=True)
class BandSpec:
    labels: tuple[str, ...]
    shares: tuple[float, ...]

    def __post_init__(self):
        if not self.labels:
            raise ConfigError("band dimension needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"duplicate band labels: {self.labels}")
        if len(self.shares) != len(self.labels):
            raise ConfigError("band shares must match labels in length")
        if min(self.shares) < 0 or sum(self.shares) <= 0:
            raise ConfigError("band shares must be non-negative and sum > 0")


def _default_bands() -> dict[str, BandSpec]:
    return {dim: BandSpec(("all",), (1.0,)) for dim in _BAND_DIMENSIONS}


def _default_susceptibility() -> dict[str, dict[str, float]]:
    return {
        "age": {"all": 1.0},
        "profession": {p.name: 1.0 for p in DEFAULT_PROFESSIONS},
        "gender": {"all": 1.0},
        "income": {"all": 1.0},
    }


@dataclass(frozen=True)
class CalibrationSettings:
    batches: int = 250
    seeds_per_eval: int = 3
    step_fraction: float = 0.1
    severity_scales: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tunables: tuple[str, ...] = (
        "alpha", "gamma", "delta", "hospitalization_probability",
    )
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    # scale and horizon
    n_agents: int = 10_000
    n_pois: int = 4_000
    days: int = 30
    rng_seed: int = 0
    # initial conditions
    p_initial_infected: float = 0.01
    p_initial_vaccinated: float = 0.575
    # environment
    weather_factor: float = 0.25
    healthcare_quality: float = 0.5
    exposure_distance: float = 100.0
    mobility_range: float = 10_000.0
    social_distancing_factor: float = 1.0
    # disease
    alpha: float = 0.2
    beta: float = 10.0
    gamma: float = 0.1
    delta: float = 0.01
    hospitalization_probability: float = 0.05
    # input files
    boundary_file: str | None = None
    pois_file: str | None = None
    poi_params_file: str | None = None
    projection: str = "auto"
    # POI behavior
    hospital_category: str = "hospital"
    outdoor_categories: tuple[str, ...] = ("park",)
    poi_default_activity_slots: tuple[int, ...] = tuple(range(12))
    poi_default_occupancy: int = 50
    poi_default_spread_probability: float = 0.6
    activity_peak_fraction: float = 0.5
    # schedules
    service_max_visits: int = 2
    service_categories: tuple[str, ...] = ()  # empty: every non-hospital category
    professions: tuple[ProfessionTemplate, ...] = DEFAULT_PROFESSIONS
    # population structure
    bands: Mapping[str, BandSpec] = field(default_factory=_default_bands)
    susceptibility_multipliers: Mapping[str, Mapping[str, float]] = field(
        default_factory=_default_susceptibility
    )
    vaccinated_multiplier: float = 0.2
    spread_overrides: Mapping[str, float] = field(default_factory=dict)
    # calibration
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)

    # -- validation -----------------------------------------------------

    def validate(self) -> "ScenarioConfig":
        def check(cond: bool, message: str):
            if not cond:
                raise ConfigError(message)

        check(self.n_agents >= 1, "n_agents must be >= 1")
        check(self.n_pois >= 1, "n_pois must be >= 1")
        check(self.days >= 1, "days must be >= 1")
        for name in ("p_initial_infected", "p_initial_vaccinated",
                     "weather_factor", "healthcare_quality", "delta",
                     "hospitalization_probability", "social_distancing_factor",
                     "poi_default_spread_probability"):
            v = getattr(self, name)
            check(0.0 <= v <= 1.0, f"{name} must be in [0, 1], got {v}")
        check(0.0 < self.alpha <= 1.0, f"alpha must be in (0, 1], got {self.alpha}")
        check(0.0 < self.gamma <= 1.0, f"gamma must be in (0, 1], got {self.gamma}")
        check(self.beta >= 0.0, f"beta must be >= 0, got {self.beta}")
        check(self.exposure_distance > 0, "exposure_distance must be > 0")
        check(self.mobility_range > 0, "mobility_range must be > 0")
        check(self.projection in _PROJECTIONS,
              f"projection must be one of {_PROJECTIONS}")
        check(self.vaccinated_multiplier >= 0,
              "susceptibility.vaccinated must be >= 0")
        slots = set(self.poi_default_activity_slots)
        check(bool(slots) and slots <= set(range(12)),
              "poi.default.activity_slots must be a non-empty subset of 0..11")
        check(self.poi_default_occupancy >= 0,
              "poi.default.occupancy must be >= 0")
        check(0.0 < self.activity_peak_fraction <= 1.0,
              "activity_peak_fraction must be in (0, 1]")
        check(self.service_max_visits >= 0, "service.max_visits must be >= 0")

        names = [p.name for p in self.professions]
        check(bool(names), "at least one profession is required")
        check(len(set(names)) == len(names), "profession names must be unique")
        check(sum(p.share for p in self.professions) > 0,
              "profession shares must sum > 0")

        for dim in _BAND_DIMENSIONS:
            check(dim in self.bands, f"missing band dimension {dim!r}")
        for dim, table in self.susceptibility_multipliers.items():
            check(dim in _SUSCEPTIBILITY_DIMENSIONS,
                  f"unknown susceptibility dimension {dim!r}")
            for label, mult in table.items():
                check(mult >= 0,
                      f"susceptibility.{dim}.{label} must be >= 0")
        # every spawnable label needs a multiplier so lookups cannot fail
        for dim in _BAND_DIMENSIONS:
            table = self.susceptibility_multipliers.get(dim, {})
            for label in self.bands[dim].labels:
                check(label in table,
                      f"band label {label!r} has no susceptibility.{dim} entry")
        prof_table = self.susceptibility_multipliers.get("profession", {})
        for name in names:
            check(name in prof_table,
                  f"profession {name!r} has no susceptibility.profession entry")

        for cat, spread in self.spread_overrides.items():
            check(0.0 <= spread <= 1.0,
                  f"spread.{cat} must be in [0, 1], got {spread}")

        cal = self.calibration
        check(cal.batches >= 0, "calibration.batches must be >= 0")
        check(cal.seeds_per_eval >= 1, "calibration.seeds_per_eval must be >= 1")
        check(0.0 <= cal.step_fraction <= 1.0,
              "calibration.step_fraction must be in [0, 1]")
        check(bool(cal.severity_scales), "calibration.severity_scales is empty")
        check(min(cal.severity_scales) > 0,
              "calibration.severity_scales must be positive")
        for pname, (lo, hi) in cal.bounds.items():
            check(lo < hi, f"calibration.bounds.{pname}: lower must be < upper")
        return self

    # -- calibration hooks ----------------------------------------------

    def resolve_param(self, name: str, poi_table=None) -> float:
        if name.startswith("spread."):
            cat = name[len("spread."):]
            if cat in self.spread_overrides:
                return float(self.spread_overrides[cat])
            if poi_table and cat in poi_table:
                return float(poi_table[cat].spread_probability)
            return float(self.poi_default_spread_probability)
        if name in _TUNABLE_ATTRS:
            return float(getattr(self, name))
        raise UsageError(f"unknown tunable parameter {name!r}")

    def apply_params(self, values: Mapping[str, float]) -> "ScenarioConfig":
        """A copy with tunable parameters replaced (used by calibration)."""
        attrs: dict[str, float] = {}
        overrides = dict(self.spread_overrides)
        for name, value in values.items():
            if name.startswith("spread."):
                overrides[name[len("spread."):]] = float(value)
            elif name in _TUNABLE_ATTRS:
                attrs[name] = float(value)
            else:
                raise UsageError(f"unknown tunable parameter {name!r}")
        return dataclasses.replace(self, spread_overrides=overrides, **attrs)

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return dataclasses.replace(self, **kwargs)

    # -- parse / serialize ----------------------------------------------

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        kv = _parse_lines(text)
        kwargs: dict = {}

        for key, (attr, conv) in _SCALAR_KEYS.items():
            if key in kv:
                kwargs[attr] = conv(key, kv.pop(key))

        prof = _pop_family(kv, "profession.")
        if prof:
            kwargs["professions"] = _parse_professions(prof)
        bands = _pop_family(kv, "bands.")
        if bands:
            kwargs["bands"] = _parse_bands(bands)
        susc = _pop_family(kv, "susceptibility.")
        if "vaccinated" in susc:
            kwargs["vaccinated_multiplier"] = _conv_float(
                "susceptibility.vaccinated", susc.pop("vaccinated"))
        if susc:
            kwargs["susceptibility_multipliers"] = _parse_susceptibility(susc)
        spread = _pop_family(kv, "spread.")
        if spread:
            kwargs["spread_overrides"] = {
                cat: _conv_float(f"spread.{cat}", raw)
                for cat, raw in spread.items()
            }
        cal = _pop_family(kv, "calibration.")
        if cal:
            kwargs["calibration"] = _parse_calibration(cal)

        if kv:
            unknown = ", ".join(sorted(kv))
            raise UsageError(f"unknown config keys: {unknown}")
        return cls(**kwargs).validate()

    def to_text(self) -> str:
        lines = [CONFIG_HEADER]

        def put(key: str, value):
            lines.append(f"{key}={_format_value(value)}")

        put("n_agents", self.n_agents)
        put("n_pois", self.n_pois)
        put("days", self.days)
        put("rng_seed", self.rng_seed)
        put("p_initial_infected", self.p_initial_infected)
        put("p_initial_vaccinated", self.p_initial_vaccinated)
        put("weather_factor", self.weather_factor)
        put("healthcare_quality", self.healthcare_quality)
        put("exposure_distance", self.exposure_distance)
        put("mobility_range", self.mobility_range)
        put("social_distancing_factor", self.social_distancing_factor)
        put("alpha", self.alpha)
        put("beta", self.beta)
        put("gamma", self.gamma)
        put("delta", self.delta)
        put("hospitalization_probability", self.hospitalization_probability)
        if self.boundary_file is not None:
            put("boundary_file", self.boundary_file)
        if self.pois_file is not None:
            put("pois_file", self.pois_file)
        if self.poi_params_file is not None:
            put("poi_params_file", self.poi_params_file)
        put("projection", self.projection)
        put("hospital.category", self.hospital_category)
        put("outdoor.categories", self.outdoor_categories)
        put("poi.default.activity_slots", self.poi_default_activity_slots)
        put("poi.default.occupancy", self.poi_default_occupancy)
        put("poi.default.spread_probability", self.poi_default_spread_probability)
        put("activity_peak_fraction", self.activity_peak_fraction)
        put("service.max_visits", self.service_max_visits)
        put("service.categories", self.service_categories)
        for p in self.professions:
            put(f"profession.{p.name}.share", p.share)
            task = "" if p.task is None else f"{p.task[0]},{p.task[1]!r},{p.task[2]!r}"
            lines.append(f"profession.{p.name}.task={task}")
            put(f"profession.{p.name}.target_category",
                p.target_category if p.target_category is not None else "")
        for dim in _BAND_DIMENSIONS:
            spec = self.bands[dim]
            put(f"bands.{dim}", spec.labels)
            put(f"bands.{dim}.shares", spec.shares)
        put("susceptibility.vaccinated", self.vaccinated_multiplier)
        for dim in _SUSCEPTIBILITY_DIMENSIONS:
            table = self.susceptibility_multipliers.get(dim, {})
            for label in sorted(table):
                put(f"susceptibility.{dim}.{label}", table[label])
        for cat in sorted(self.spread_overrides):
            put(f"spread.{cat}", self.spread_overrides[cat])
        cal = self.calibration
        put("calibration.batches", cal.batches)
        put("calibration.seeds_per_eval", cal.seeds_per_eval)
        put("calibration.step_fraction", cal.step_fraction)
        put("calibration.severity_scales", cal.severity_scales)
        put("calibration.tunables", cal.tunables)
        for pname in sorted(cal.bounds):
            lo, hi = cal.bounds[pname]
            lines.append(f"calibration.bounds.{pname}={lo!r},{hi!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")


# -- conversion helpers ------------------------------------------------------


def _conv_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: expected an integer, got {raw!r}") from None


def _conv_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: expected a number, got {raw!r}") from None


def _conv_str(key: str, raw: str) -> str:
    return raw


def _conv_str_or_none(key: str, raw: str):
    return raw if raw != "" else None


def _conv_str_tuple(key: str, raw: str) -> tuple[str, ...]:
    return tuple(tok for tok in (t.strip() for t in raw.split(";")) if tok)


def _conv_int_tuple(key: str, raw: str) -> tuple[int, ...]:
    return tuple(_conv_int(key, tok) for tok in raw.split(";") if tok.strip())


def _conv_float_tuple(key: str, raw: str) -> tuple[float, ...]:
    return tuple(_conv_float(key, tok) for tok in raw.split(";") if tok.strip())


_SCALAR_KEYS: dict[str, tuple[str, object]] = {
    "n_agents": ("n_agents", _conv_int),
    "n_pois": ("n_pois", _conv_int),
    "days": ("days", _conv_int),
    "rng_seed": ("rng_seed", _conv_int),
    "p_initial_infected": ("p_initial_infected", _conv_float),
    "p_initial_vaccinated": ("p_initial_vaccinated", _conv_float),
    "weather_factor": ("weather_factor", _conv_float),
    "healthcare_quality": ("healthcare_quality", _conv_float),
    "exposure_distance": ("exposure_distance", _conv_float),
    "mobility_range": ("mobility_range", _conv_float),
    "social_distancing_factor": ("social_distancing_factor", _conv_float),
    "alpha": ("alpha", _conv_float),
    "beta": ("beta", _conv_float),
    "gamma": ("gamma", _conv_float),
    "delta": ("delta", _conv_float),
    "hospitalization_probability": ("hospitalization_probability", _conv_float),
    "boundary_file": ("boundary_file", _conv_str_or_none),
    "pois_file": ("pois_file", _conv_str_or_none),
    "poi_params_file": ("poi_params_file", _conv_str_or_none),
    "projection": ("projection", _conv_str),
    "hospital.category": ("hospital_category", _conv_str),
    "outdoor.categories": ("outdoor_categories", _conv_str_tuple),
    "poi.default.activity_slots": ("poi_default_activity_slots", _conv_int_tuple),
    "poi.default.occupancy": ("poi_default_occupancy", _conv_int),
    "poi.default.spread_probability": ("poi_default_spread_probability", _conv_float),
    "activity_peak_fraction": ("activity_peak_fraction", _conv_float),
    "service.max_visits": ("service_max_visits", _conv_int),
    "service.categories": ("service_categories", _conv_str_tuple),
}

_TUNABLE_ATTRS = frozenset((
    "alpha", "beta", "gamma", "delta", "hospitalization_probability",
    "weather_factor", "healthcare_quality", "mobility_range",
    "exposure_distance", "social_distancing_factor", "p_initial_infected",
    "p_initial_vaccinated",
))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ";".join(_format_value(v) for v in value)
    return str(value)


def _parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        if key in out:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _pop_family(kv: dict[str, str], prefix: str) -> dict[str, str]:
    out = {}
    for key in [k for k in kv if k.startswith(prefix)]:
        out[key[len(prefix):]] = kv.pop(key)
    return out


def _parse_professions(family: Mapping[str, str]) -> tuple[ProfessionTemplate, ...]:
    specs: dict[str, dict] = {}
    order: list[str] = []
    for subkey, raw in family.items():
        if "." not in subkey:
            raise UsageError(f"malformed profession key: profession.{subkey}")
        name, attr = subkey.rsplit(".", 1)
        if name not in specs:
            specs[name] = {}
            order.append(name)
        if attr == "share":
            specs[name]["share"] = _conv_float(f"profession.{subkey}", raw)
        elif attr == "task":
            if raw == "":
                specs[name]["task"] = None
            else:
                parts = [t.strip() for t in raw.split(",")]
                if len(parts) != 3:
                    raise UsageError(
                        f"profession.{subkey}: expected kind,start,end"
                    )
                specs[name]["task"] = (
                    parts[0],
                    _conv_float(f"profession.{subkey}", parts[1]),
                    _conv_float(f"profession.{subkey}", parts[2]),
                )
        elif attr == "target_category":
            specs[name]["target_category"] = raw if raw else None
        else:
            raise UsageError(f"unknown profession attribute {attr!r}")
    # keep first-appearance order: it is the draw order at spawn time
    return tuple(
        ProfessionTemplate(
            name,
            share=specs[name].get("share", 0.0),
            task=specs[name].get("task"),
            target_category=specs[name].get("target_category"),
        )
        for name in order
    )


def _parse_bands(family: Mapping[str, str]) -> dict[str, BandSpec]:
    bands = _default_bands()
    labels: dict[str, tuple[str, ...]] = {}
    shares: dict[str, tuple[float, ...]] = {}
    for subkey, raw in family.items():
        if subkey.endswith(".shares"):
            dim = subkey[: -len(".shares")]
            shares[dim] = _conv_float_tuple(f"bands.{subkey}", raw)
        else:
            dim = subkey
            labels[dim] = _conv_str_tuple(f"bands.{subkey}", raw)
    for dim in labels:
        if dim not in _BAND_DIMENSIONS:
            raise UsageError(f"unknown band dimension {dim!r}")
        lab = labels[dim]
        shr = shares.pop(dim, tuple(1.0 for _ in lab))
        bands[dim] = BandSpec(lab, shr)
    if shares:
        extra = ", ".join(sorted(shares))
        raise UsageError(f"bands shares without labels: {extra}")
    return bands


def _parse_susceptibility(family: Mapping[str, str]) -> dict[str, dict[str, float]]:
    tables = _default_susceptibility()
    touched: set[str] = set()
    for subkey, raw in family.items():
        if "." not in subkey:
            raise UsageError(f"malformed susceptibility key: susceptibility.{subkey}")
        dim, label = subkey.split(".", 1)
        if dim not in _SUSCEPTIBILITY_DIMENSIONS:
            raise UsageError(f"unknown susceptibility dimension {dim!r}")
        if dim not in touched:
            tables[dim] = {}
            touched.add(dim)
        tables[dim][label] = _conv_float(f"susceptibility.{subkey}", raw)
    return tables


def _parse_calibration(family: dict[str, str]) -> CalibrationSettings:
    kwargs: dict = {}
    bounds: dict[str, tuple[float, float]] = {}
    for subkey, raw in family.items():
        if subkey == "batches":
            kwargs["batches"] = _conv_int("calibration.batches", raw)
        elif subkey == "seeds_per_eval":
            kwargs["seeds_per_eval"] = _conv_int("calibration.seeds_per_eval", raw)
        elif subkey == "step_fraction":
            kwargs["step_fraction"] = _conv_float("calibration.step_fraction", raw)
        elif subkey == "severity_scales":
            kwargs["severity_scales"] = _conv_float_tuple(
                "calibration.severity_scales", raw)
        elif subkey == "tunables":
            kwargs["tunables"] = _conv_str_tuple("calibration.tunables", raw)
        elif subkey.startswith("bounds."):
            pname = subkey[len("bounds."):]
            parts = [t.strip() for t in raw.split(",")]
            if len(parts) != 2:
                raise UsageError(
                    f"calibration.bounds.{pname}: expected lower,upper"
                )
            bounds[pname] = (
                _conv_float(f"calibration.bounds.{pname}", parts[0]),
                _conv_float(f"calibration.bounds.{pname}", parts[1]),
            )
        else:
            raise UsageError(f"unknown calibration key {subkey!r}")
    if bounds:
        kwargs["bounds"] = bounds
    return CalibrationSettings(**kwargs)
