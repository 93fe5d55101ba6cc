"""
Tool settings and logging setup.

Settings come from config/config.ini, with a .env file next to it and then
plain environment variables taking precedence over the file.
"""

import os
import sys
from configparser import ConfigParser, Error as ConfigParserError
from typing import Optional

from dotenv import load_dotenv
from loguru import logger

from .errors import ConfigError, InvalidInputError

PACKAGE_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG_FILE = os.path.join(PACKAGE_ROOT, "config", "config.ini")

DEFAULT_LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}"


class Settings:
    """Runtime settings for the ofbm command line and library defaults."""

    def __init__(self, config_file: Optional[str] = None):
        """Load settings from an INI file; an explicit file must exist."""
        self.config = ConfigParser()
        if config_file is None:
            self.config_file = DEFAULT_CONFIG_FILE
            required = False
        else:
            self.config_file = config_file
            required = True

        self._load_config(required)
        self._validate()

    def _load_config(self, required: bool):
        """Load configuration from file and environment variables."""
        if os.path.exists(self.config_file):
            try:
                self.config.read(self.config_file)
            except ConfigParserError as e:
                raise ConfigError(f"Cannot parse settings file {self.config_file}: {e}") from e
            load_dotenv(os.path.join(os.path.dirname(self.config_file), ".env"))
        elif required:
            raise FileNotFoundError(f"Configuration file not found: {self.config_file}")

        # Logging
        self.log_level = os.getenv("LOG_LEVEL", self.config.get("logging", "level", fallback="INFO")).upper()
        self.log_file = os.getenv("LOG_FILE", self.config.get("logging", "file", fallback=""))
        self.log_max_size = self._int("logging", "max_size", "10485760")
        self.log_backup_count = self._int("logging", "backup_count", "5")
        self.log_format = self.config.get("logging", "format", fallback=DEFAULT_LOG_FORMAT, raw=True)

        # Quadrature defaults
        self.x_max = self._float("quadrature", "x_max", "10000")
        self.rel_tol = self._float("quadrature", "rel_tol", "1e-8")
        self.panels_near_zero = self._int("quadrature", "panels_near_zero", "40")
        self.grading_ratio = self._float("quadrature", "grading_ratio", "0.5")
        self.max_refinements = self._int("quadrature", "max_refinements", "4")

        # Diagnostics
        self.z_threshold = self._float("diagnostics", "z_threshold", "5.0", env="OFBM_Z_THRESHOLD")
        self.se_floor = self._float("diagnostics", "se_floor", "1e-12")

        # Runtime
        self.threads = self._int("runtime", "threads", "0", env="OFBM_THREADS")
        self.output_dir = os.getenv("OFBM_OUTPUT_DIR", self.config.get("runtime", "output_dir", fallback="results"))

        # Monitoring
        enabled = os.getenv("OFBM_METRICS_ENABLED", self.config.get("monitoring", "metrics_enabled", fallback="false"))
        self.metrics_enabled = enabled.strip().lower() in ("1", "true", "yes", "on")
        self.metrics_file = os.getenv(
            "OFBM_METRICS_FILE", self.config.get("monitoring", "metrics_file", fallback="logs/metrics.prom"))

    def _raw(self, section: str, key: str, fallback: str, env: Optional[str]) -> str:
        value = os.getenv(env) if env else None
        return value if value is not None else self.config.get(section, key, fallback=fallback)

    def _int(self, section: str, key: str, fallback: str, env: Optional[str] = None) -> int:
        raw = self._raw(section, key, fallback, env)
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from e

    def _float(self, section: str, key: str, fallback: str, env: Optional[str] = None) -> float:
        raw = self._raw(section, key, fallback, env)
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from e

    def _validate(self):
        if self.log_level not in ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"Unknown log level: {self.log_level}")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")
        if self.z_threshold <= 0:
            raise ConfigError(f"z_threshold must be positive, got {self.z_threshold}")
        if self.se_floor <= 0:
            raise ConfigError(f"se_floor must be positive, got {self.se_floor}")
        if self.log_backup_count < 0 or self.log_max_size <= 0:
            raise ConfigError("logging max_size must be positive and backup_count non-negative")
        try:
            self.quadrature()
        except InvalidInputError as e:
            raise ConfigError(f"[quadrature] {e}") from e

    @property
    def worker_threads(self) -> int:
        """Thread cap for replicate generation; 0 in the settings means all cores."""
        return self.threads or (os.cpu_count() or 1)

    def quadrature(self):
        """QuadratureConfig built from the [quadrature] section."""
        from .quadrature import QuadratureConfig

        return QuadratureConfig(
            x_max=self.x_max,
            rel_tol=self.rel_tol,
            panels_near_zero=self.panels_near_zero,
            grading_ratio=self.grading_ratio,
            max_refinements=self.max_refinements,
        )


def setup_logging(settings: Settings):
    """Route loguru output to stderr and, if configured, a rotating log file."""
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level, format=settings.log_format)

    if settings.log_file:
        log_dir = os.path.dirname(settings.log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)
        logger.add(
            settings.log_file,
            level=settings.log_level,
            format=settings.log_format,
            rotation=settings.log_max_size,
            retention=settings.log_backup_count,
        )
    logger.debug(f"Logging configured at level {settings.log_level}")
