"""Curve calibration: RMSE fitness and stochastic hill climbing.

Fitness of a parameter vector is the RMSE between the observed daily series
and the simulated one, averaged over a fixed set of severity levels and seed
replicates (the replicate seeds are drawn once up front, so every candidate
is scored on common random numbers).  Each batch perturbs a single randomly
chosen parameter; the change is kept only if fitness improves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CalibrationError, UsageError

log = logging.getLogger(__name__)


def rmse(observed: Sequence[float], simulated: Sequence[float]) -> float:
    """Root of the mean per-day squared difference between the two series."""
    a = np.asarray(observed, dtype=float)
    b = np.asarray(simulated, dtype=float)
    if a.ndim != 1 or b.ndim != 1:
        raise UsageError("rmse expects one-dimensional series")
    if a.shape != b.shape:
        raise UsageError(
            f"series length mismatch: observed has {a.size} entries, "
            f"simulated has {b.size}"
        )
    if a.size == 0:
        raise UsageError("rmse needs at least one entry per series")
    diff = a - b
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class ParamEntry:
    name: str
    value: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise UsageError(
                f"parameter {self.name!r}: lower bound {self.lower} exceeds "
                f"upper bound {self.upper}"
            )
        if not self.lower <= self.value <= self.upper:
            raise UsageError(
                f"parameter {self.name!r}: value {self.value} outside "
                f"bounds [{self.lower}, {self.upper}]"
            )


class ParamVector:
    """An ordered, named, box-bounded parameter vector."""

    def __init__(self, entries: Iterable[ParamEntry | tuple]):
        parsed = tuple(
            e if isinstance(e, ParamEntry) else ParamEntry(*e) for e in entries
        )
        if not parsed:
            raise UsageError("parameter vector must not be empty")
        names = [e.name for e in parsed]
        if len(set(names)) != len(names):
            raise UsageError("parameter names must be unique")
        self.entries = parsed
        self._by_name = {e.name: e for e in parsed}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> float:
        return self._by_name[name].value

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamVector) and self.entries == other.entries

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        inner = ", ".join(f"{e.name}={e.value:g}" for e in self.entries)
        return f"ParamVector({inner})"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def values(self) -> tuple[float, ...]:
        return tuple(e.value for e in self.entries)

    def as_dict(self) -> dict[str, float]:
        return {e.name: e.value for e in self.entries}

    def with_value(self, name: str, value: float) -> "ParamVector":
        if name not in self._by_name:
            raise UsageError(f"unknown parameter {name!r}")
        return ParamVector(
            ParamEntry(e.name, value if e.name == name else e.value,
                       e.lower, e.upper)
            for e in self.entries
        )


def perturb(
    params: ParamVector,
    rng: np.random.Generator,
    step_fraction: float = 0.1,
) -> ParamVector:
    """Change exactly one randomly chosen entry by a uniform draw within
    ±step_fraction of its bound width, clamped to the bounds.  Every other
    entry is carried over bit-identically."""
    if step_fraction < 0:
        raise UsageError(f"step_fraction must be >= 0, got {step_fraction}")
    idx = int(rng.integers(len(params)))
    entry = params.entries[idx]
    width = entry.upper - entry.lower
    delta = float(rng.uniform(-step_fraction * width, step_fraction * width))
    new_value = min(max(entry.value + delta, entry.lower), entry.upper)
    return params.with_value(entry.name, new_value)


@dataclass(frozen=True)
class CalibrationConfig:
    """Budget and evaluation settings for hill climbing.

    ``severity_levels`` are opaque values handed to the sim runner (the CLI
    uses initial-infection scale factors).  A zero batch budget is allowed
    and returns the initial vector.
    """

    batches: int = 250
    severity_levels: tuple = (0.5, 1.0, 2.0, 4.0)
    seeds_per_eval: int = 3
    step_fraction: float = 0.1

    def __post_init__(self):
        if self.batches < 0:
            raise UsageError("batches must be >= 0")
        if not self.severity_levels:
            raise UsageError("severity_levels must be non-empty")
        if self.seeds_per_eval < 1:
            raise UsageError("seeds_per_eval must be >= 1")
        if not 0.0 <= self.step_fraction <= 1.0:
            raise UsageError("step_fraction must be in [0, 1]")


@dataclass(frozen=True)
class CalibrationRecord:
    """Outcome of a calibration: best vector plus its scored series."""

    params: ParamVector
    observed: tuple[float, ...]
    simulated: tuple[float, ...]
    horizon_days: int
    fitness: float


def hill_climb(
    initial: ParamVector,
    observed: Sequence[float],
    sim_runner: Callable[[ParamVector, object, int], Sequence[float]],
    config: CalibrationConfig,
    rng: np.random.Generator,
    map_fn: Callable | None = None,
) -> tuple[ParamVector, list[float]]:
    """Stochastic hill climbing over ``config.batches`` batches.

    ``sim_runner(params, severity_level, seed)`` must return a simulated
    daily series the same length as ``observed``.  Returns the best vector
    and the best-so-far fitness trace (length batches + 1, entry 0 being the
    initial fitness); the trace is non-increasing by construction.

    A failing sim run skips its whole batch with a warning; if more than
    half the batch budget fails the calibration aborts.
    """
    observed = np.asarray(observed, dtype=float)
    if map_fn is None:
        map_fn = map
    replicate_seeds = [int(s) for s in rng.integers(0, 2**31 - 1,
                                                    size=config.seeds_per_eval)]

    def fitness(vector: ParamVector) -> float:
        jobs = [
            (vector, level, seed)
            for level in config.severity_levels
            for seed in replicate_seeds
        ]
        scores = list(map_fn(_score_one, ((sim_runner, observed, job) for job in jobs)))
        return float(np.mean(scores))

    try:
        current_fitness = fitness(initial)
    except Exception as exc:
        raise CalibrationError(f"initial fitness evaluation failed: {exc}") from exc

    current = initial
    trace = [current_fitness]
    failed = 0
    for batch in range(1, config.batches + 1):
        candidate = perturb(current, rng, config.step_fraction)
        try:
            candidate_fitness = fitness(candidate)
        except Exception as exc:
            failed += 1
            log.warning("batch %d skipped: simulation failed (%s)", batch, exc)
            if failed > 0.5 * config.batches:
                raise CalibrationError(
                    f"{failed} of {config.batches} batches failed; aborting"
                ) from exc
            trace.append(current_fitness)
            continue
        if candidate_fitness < current_fitness:
            current = candidate
            current_fitness = candidate_fitness
        trace.append(current_fitness)
    return current, trace


def _score_one(packed) -> float:
    sim_runner, observed, (vector, level, seed) = packed
    simulated = sim_runner(vector, level, seed)
    return rmse(observed, simulated)
