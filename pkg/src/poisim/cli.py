"""Command line entry points: run, calibrate, ingest, port."""

from __future__ import annotations

import functools
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .calibration import (
    CalibrationConfig,
    ParamEntry,
    ParamVector,
    hill_climb,
)
from .config import BandSpec, ScenarioConfig
from .engine import run_simulation
from .errors import (
    EXIT_INTERNAL,
    ConfigError,
    DataError,
    PoisimError,
    PortingError,
    UsageError,
)
from .geo import load_city
from .ingest import (
    derive_category_params,
    derive_poi_count,
    derive_social_distancing,
    load_observed_series,
    load_patterns,
    multipliers_from_rates,
    parse_health_rates,
    write_distancing_factor,
    write_poi_param_table,
    write_rate_probabilities,
)
from .rng import substream

log = logging.getLogger(__name__)

# fallback calibration bounds by parameter name; config can override
_DEFAULT_BOUNDS = {
    "alpha": (1e-6, 1.0),
    "beta": (0.0, 100.0),
    "gamma": (1e-6, 1.0),
    "delta": (0.0, 1.0),
    "hospitalization_probability": (0.0, 1.0),
    "weather_factor": (0.0, 1.0),
    "healthcare_quality": (0.0, 1.0),
    "social_distancing_factor": (0.0, 1.0),
    "p_initial_infected": (0.0, 1.0),
    "p_initial_vaccinated": (0.0, 1.0),
    "mobility_range": (1.0, 100_000.0),
    "exposure_distance": (1.0, 10_000.0),
}


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PoisimError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except (click.ClickException, click.exceptions.Exit, SystemExit):
            raise
        except Exception as exc:  # pragma: no cover - defensive
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="poisim")
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """City-scale agent-based epidemic simulator."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@click.option("--config", "config_file", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Scenario config file.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for daily_counts.csv and manifest.txt.")
@click.option("--snapshots", is_flag=True, help="Write per-day GeoJSON snapshots.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Worker hint; results are identical for any value.")
@_handle_errors
def run_cmd(config_file, seed, out_dir, snapshots, workers):
    """Run one simulation and report daily compartment counts."""
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    config = ScenarioConfig.from_file(config_file)
    if seed is not None:
        config = config.with_overrides(rng_seed=seed)
    out = run_simulation(config, out_dir=out_dir, snapshots=snapshots)
    for line in out.load_report_lines:
        click.echo(line)
    final = out.daily_counts[-1]
    click.echo(
        f"day {final.day}: S={final.s} E={final.e} I={final.i} "
        f"H={final.h} R={final.r} D={final.d}"
    )
    click.echo(f"simulated {config.days} days in {out.runtime_seconds:.2f} s")
    if out_dir is not None:
        click.echo(f"wrote {Path(out_dir) / 'daily_counts.csv'}")


def build_initial_params(config: ScenarioConfig) -> ParamVector:
    """Calibration start point: tunables at their config values, clamped."""
    entries = []
    for name in config.calibration.tunables:
        value = config.resolve_param(name)
        if name in config.calibration.bounds:
            lower, upper = config.calibration.bounds[name]
        elif name.startswith("spread."):
            lower, upper = 0.0, 1.0
        elif name in _DEFAULT_BOUNDS:
            lower, upper = _DEFAULT_BOUNDS[name]
        else:
            raise ConfigError(
                f"no calibration bounds known for {name!r}; add "
                f"calibration.bounds.{name}=lower,upper to the config"
            )
        entries.append(ParamEntry(name, min(max(value, lower), upper), lower, upper))
    return ParamVector(tuple(entries))


def make_sim_runner(base_config: ScenarioConfig, horizon_days: int):
    """Build the scoring function: apply a parameter vector, scale the
    initial-infection severity, run, return the daily new-infection series."""

    def runner(vector: ParamVector, severity: float, seed: int):
        cfg = base_config.apply_params(vector.as_dict())
        p0 = min(1.0, cfg.p_initial_infected * severity)
        cfg = cfg.with_overrides(
            p_initial_infected=p0, rng_seed=int(seed), days=horizon_days
        )
        out = run_simulation(cfg)
        return out.daily_new_infections()

    return runner


def run_calibration(
    config: ScenarioConfig,
    observed: np.ndarray,
    out_dir=None,
    batches: int | None = None,
    workers: int = 1,
):
    """Fit the configured tunables to an observed daily-infection series.

    Returns ``(best_params, trace)`` and, with ``out_dir`` set, writes
    best_params.txt and trace.csv there.
    """
    settings = config.calibration
    cal_config = CalibrationConfig(
        batches=settings.batches if batches is None else batches,
        severity_levels=settings.severity_scales,
        seeds_per_eval=settings.seeds_per_eval,
        step_fraction=settings.step_fraction,
    )
    initial = build_initial_params(config)
    horizon = int(len(observed))
    runner = make_sim_runner(config, horizon)
    rng = substream(config.rng_seed, "calibration")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            best, trace = hill_climb(
                initial, observed, runner, cal_config, rng, map_fn=pool.map
            )
    else:
        best, trace = hill_climb(initial, observed, runner, cal_config, rng)
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        lines = ["# poisim calibrated parameters"]
        for name in best.names:
            lines.append(f"{name}={best[name]!r}")
        (out_path / "best_params.txt").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        rows = ["batch,fitness"]
        rows.extend(f"{i},{value!r}" for i, value in enumerate(trace))
        (out_path / "trace.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return best, trace


@main.command("calibrate")
@click.option("--config", "config_file", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Scenario config file.")
@click.option("--observed", "observed_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV of day,infections to fit against.")
@click.option("--batches", type=int, default=None,
              help="Override the configured number of improvement batches.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for best_params.txt and trace.csv.")
@click.option("--workers", type=int, default=1, show_default=True,
              help="Threads for scoring runs; results are identical for any value.")
@_handle_errors
def calibrate_cmd(config_file, observed_file, batches, out_dir, workers):
    """Tune parameters until simulated infections track an observed series."""
    if batches is not None and batches < 0:
        raise UsageError("--batches must be non-negative")
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    config = ScenarioConfig.from_file(config_file)
    observed = load_observed_series(observed_file)
    best, trace = run_calibration(
        config, observed, out_dir=out_dir, batches=batches, workers=workers
    )
    click.echo(f"initial fitness: {trace[0]:.6f}")
    click.echo(f"final fitness:   {trace[-1]:.6f}")
    for name in best.names:
        click.echo(f"{name}={best[name]!r}")
    click.echo(f"wrote {Path(out_dir) / 'best_params.txt'}")


@main.group("ingest")
def ingest_group():
    """Turn raw mobility and health data into simulator inputs."""


@ingest_group.command("patterns")
@click.option("--in", "in_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Visit-pattern CSV (poi_id,category,daily_visits,hourly_profile).")
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False),
              help="Output POI category parameter CSV.")
@_handle_errors
def ingest_patterns(in_file, out_file):
    """Derive per-category occupancy and activity slots from visit patterns."""
    patterns = load_patterns(in_file)
    table = derive_category_params(patterns)
    write_poi_param_table(out_file, table)
    click.echo(f"derived parameters for {len(table)} categories")
    click.echo(f"wrote {out_file}")


@ingest_group.command("rates")
@click.option("--in", "in_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Health-rate CSV (band,infection_per_100k,...).")
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False),
              help="Output per-band probability CSV.")
@click.option("--dimension", default="age", show_default=True,
              help="Population dimension the bands describe.")
@_handle_errors
def ingest_rates(in_file, out_file, dimension):
    """Convert per-100k health rates into per-individual probabilities."""
    table = parse_health_rates(in_file, dimension=dimension)
    write_rate_probabilities(out_file, table)
    click.echo(f"converted {len(table.rows)} {dimension} bands")
    click.echo(f"wrote {out_file}")


@ingest_group.command("distancing")
@click.option("--in", "in_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Device-count CSV (date,total_devices,at_home_devices).")
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False),
              help="Output file holding the derived factor.")
@_handle_errors
def ingest_distancing(in_file, out_file):
    """Summarize stay-at-home device data into one mobility factor."""
    factor = derive_social_distancing(in_file)
    write_distancing_factor(out_file, factor)
    click.echo(f"social_distancing_factor={factor!r}")
    click.echo(f"wrote {out_file}")


_STEP_BASEMAP = "Change Basemap"
_STEP_MOVEMENT = "Update Movement Data"
_STEP_PARAMETERS = "Modify Parameters"


def port_city(
    boundary_file,
    pois_file,
    data_dir,
    out_dir,
    n_agents: int = 10_000,
    smoke_test: bool = True,
) -> ScenarioConfig:
    """Assemble a ready-to-run scenario for a new city.

    Three steps, each failing with a step-named error: load the new basemap,
    derive POI counts and category parameters from local visit patterns, and
    derive behavioral parameters from local health and distancing data.
    Writes ``config.txt`` and ``poi_params.csv`` under ``out_dir``; the same
    inputs always produce the same files.
    """
    data_path = Path(data_dir)
    out_path = Path(out_dir)

    try:
        city, locations, report = load_city(boundary_file, pois_file)
    except PoisimError as exc:
        raise PortingError(_STEP_BASEMAP, str(exc)) from exc
    for line in report.lines():
        log.info("%s: %s", _STEP_BASEMAP, line)

    try:
        patterns_file = data_path / "patterns.csv"
        if not patterns_file.exists():
            raise DataError(f"missing required file: {patterns_file}")
        patterns = load_patterns(patterns_file)
        n_pois = derive_poi_count(
            patterns, n_agents, available_locations=len(locations)
        )
        table = derive_category_params(patterns)
    except PoisimError as exc:
        raise PortingError(_STEP_MOVEMENT, str(exc)) from exc

    base = ScenarioConfig()
    try:
        distancing_file = data_path / "distancing.csv"
        if not distancing_file.exists():
            raise DataError(f"missing required file: {distancing_file}")
        distancing = derive_social_distancing(distancing_file)
        bands = dict(base.bands)
        multipliers = {k: dict(v) for k, v in base.susceptibility_multipliers.items()}
        for dim in ("age", "gender", "income"):
            rates_file = data_path / f"rates_{dim}.csv"
            if not rates_file.exists():
                log.warning(
                    "%s: no %s; keeping default %s bands",
                    _STEP_PARAMETERS, rates_file.name, dim,
                )
                continue
            rate_table = parse_health_rates(rates_file, dimension=dim)
            mult = multipliers_from_rates(rate_table)
            labels = tuple(sorted(mult))
            bands[dim] = BandSpec(
                labels=labels, shares=tuple(1.0 / len(labels) for _ in labels)
            )
            multipliers[dim] = mult
    except PoisimError as exc:
        raise PortingError(_STEP_PARAMETERS, str(exc)) from exc

    out_path.mkdir(parents=True, exist_ok=True)
    poi_params_file = out_path / "poi_params.csv"
    write_poi_param_table(poi_params_file, table)

    overrides = dict(
        boundary_file=str(boundary_file),
        pois_file=str(pois_file),
        poi_params_file=str(poi_params_file),
        n_agents=n_agents,
        n_pois=n_pois,
        social_distancing_factor=distancing,
        bands=bands,
        susceptibility_multipliers=multipliers,
    )
    has_hospital = any(loc.category == base.hospital_category for loc in locations)
    if not has_hospital:
        log.warning(
            "%s: no %r POIs in the new city; disabling hospitalization",
            _STEP_PARAMETERS, base.hospital_category,
        )
        overrides["hospitalization_probability"] = 0.0
    config = base.with_overrides(**overrides)
    config.validate()

    if smoke_test:
        smoke = config.with_overrides(
            n_agents=min(200, config.n_agents),
            n_pois=min(50, config.n_pois),
            days=1,
        )
        try:
            run_simulation(smoke)
        except PoisimError as exc:
            raise PortingError(
                _STEP_PARAMETERS, f"validation run failed: {exc}"
            ) from exc

    config.save(out_path / "config.txt")
    return config


@main.command("port")
@click.option("--boundary", "boundary_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="GeoJSON boundary of the new city.")
@click.option("--pois", "pois_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="GeoJSON POIs of the new city.")
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory with patterns.csv, distancing.csv, rates_*.csv.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for the generated config.txt and poi_params.csv.")
@click.option("--agents", "n_agents", type=int, default=10_000, show_default=True,
              help="Population size for the generated scenario.")
@_handle_errors
def port_cmd(boundary_file, pois_file, data_dir, out_dir, n_agents):
    """Set up the simulator for a new city from its local data."""
    if n_agents <= 0:
        raise UsageError("--agents must be positive")
    config = port_city(boundary_file, pois_file, data_dir, out_dir, n_agents=n_agents)
    click.echo(f"n_pois={config.n_pois}")
    click.echo(f"social_distancing_factor={config.social_distancing_factor!r}")
    click.echo(f"wrote {Path(out_dir) / 'config.txt'}")


if __name__ == "__main__":  # pragma: no cover
    main()
