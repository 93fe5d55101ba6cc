"""Run metrics exported in Prometheus text format."""

import os

from loguru import logger
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

REPLICATES = Counter(
    "ofbm_replicates_generated_total",
    "Sample paths generated",
    ["scheme"],
    registry=REGISTRY,
)
LEVEL_SECONDS = Histogram(
    "ofbm_level_duration_seconds",
    "Wall time spent on one approximation level",
    ["scheme"],
    registry=REGISTRY,
)
LEVEL_MAX_Z = Gauge(
    "ofbm_level_max_z",
    "Largest covariance z-score at an approximation level",
    ["scheme", "level"],
    registry=REGISTRY,
)


def write_metrics(path: str):
    """Write the registry to a text file for a node-exporter style collector."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_to_textfile(path, REGISTRY)
    logger.debug(f"Metrics written to {path}")
