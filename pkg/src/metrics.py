"""
Run metrics in Prometheus text format

Counters live in a private registry so importing the package never touches
the global default registry. The CLI dumps them to metrics.prom next to the
run outputs.
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Gauge,
    Histogram,
    write_to_textfile,
)

from src import __version__

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

TRAJECTORIES = Counter(
    "paramp_trajectories_total",
    "Stochastic trajectories integrated",
    registry=REGISTRY,
)
STEPS = Counter(
    "paramp_integration_steps_total",
    "Integrator time steps taken, summed over trajectories",
    registry=REGISTRY,
)
FITS = Counter(
    "paramp_fits_total",
    "Least-squares fits performed",
    ["kind"],
    registry=REGISTRY,
)
FIT_FAILURES = Counter(
    "paramp_fit_failures_total",
    "Fits reported as not converged",
    ["kind"],
    registry=REGISTRY,
)
COMMAND_SECONDS = Histogram(
    "paramp_command_seconds",
    "Wall time per subcommand",
    ["command"],
    buckets=(0.1, 0.5, 1, 5, 10, 30, 60, 120, 300, 600),
    registry=REGISTRY,
)
INFO = Gauge(
    "paramp_info",
    "Tool information",
    ["version"],
    registry=REGISTRY,
)
INFO.labels(version=__version__).set(1)


def record_fit(kind: str, converged: bool) -> None:
    FITS.labels(kind=kind).inc()
    if not converged:
        FIT_FAILURES.labels(kind=kind).inc()


@contextmanager
def time_command(command: str) -> Iterator[None]:
    """Observe the wall time of a subcommand, also when it fails"""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        COMMAND_SECONDS.labels(command=command).observe(elapsed)
        logger.info(f"{command} finished in {elapsed:.2f} s")


def write_metrics(path: Path) -> Path:
    write_to_textfile(str(path), REGISTRY)
    return path
