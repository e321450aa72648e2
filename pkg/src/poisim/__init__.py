"""City-scale SEIHRD epidemic simulation over points of interest.

Agents live in a polygonal city, follow daily schedules among POIs, and an
infection spreads where they gather.  The package also ships the supporting
tooling: mobility/health-data ingestion, a stochastic hill-climbing
calibrator, and a command line front end.
"""

__version__ = "0.1.0"

from .agents import EpidemicParams, IndividualAgent, PoiAgent, SeihrdState
from .config import ScenarioConfig
from .engine import RunOutput, run_simulation

__all__ = [
    "EpidemicParams",
    "IndividualAgent",
    "PoiAgent",
    "RunOutput",
    "ScenarioConfig",
    "SeihrdState",
    "run_simulation",
    "__version__",
]
