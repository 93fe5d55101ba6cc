"""
Run configuration: one JSON document per experiment, checked against a JSON
schema and then against the model rules of its scheme.
"""

import copy
import json
import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ConfigError, InvalidInputError
from .model import OfbmSpec
from .partial_sums import StationaryCovSeq
from .quadrature import QuadratureConfig

SCHEMES = ("exact", "telegraph", "partial-sums")

_MATRIX = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
}
_VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["scheme"],
    "properties": {
        "label": {"type": "string"},
        "scheme": {"enum": list(SCHEMES)},
        "d": {"type": "integer", "minimum": 1},
        "D": _MATRIX,
        "A1": _MATRIX,
        "A2": _MATRIX,
        "gamma": _MATRIX,
        "hurst": _VECTOR,
        "scales": _VECTOR,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "points": {"type": "integer", "minimum": 1},
                "dyadic": {"type": "boolean"},
            },
        },
        "levels": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "replicates": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_max": {"type": "number", "minimum": 1},
                "rel_tol": {"type": "number", "minimum": 1e-12, "maximum": 1e-2},
                "panels_near_zero": {"type": "integer", "minimum": 1},
                "grading_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_refinements": {"type": "integer", "minimum": 0},
                "tail_correction": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "paths": {"type": "string"},
                "report": {"type": "string"},
            },
        },
        "self_similarity_c": {"type": "number", "exclusiveMinimum": 0},
        "z_threshold": {"type": "number", "exclusiveMinimum": 0},
    },
}

_VALIDATOR = Draft202012Validator(RUN_CONFIG_SCHEMA)

DEFAULT_CONFIGS = {
    "exact": {
        "label": "exact-mason-xiao-d2",
        "scheme": "exact",
        "d": 2,
        "D": [[0.7, 0.0], [0.0, 0.6]],
        "grid": {"t_max": 1.0, "points": 9, "dyadic": True},
        "replicates": 20000,
        "seed": 20240501,
        "self_similarity_c": 2.0,
    },
    "telegraph": {
        "label": "telegraph-brownian-d1",
        "scheme": "telegraph",
        "d": 1,
        "D": [[0.5]],
        "A1": [[1.0]],
        "A2": [[0.0]],
        "grid": {"t_max": 1.0, "points": 5, "dyadic": True},
        "levels": [10, 100, 1000],
        "replicates": 2000,
        "seed": 20240502,
        "quadrature": {"x_max": 64.0},
    },
    "partial-sums": {
        "label": "partial-sums-fgn-persistent",
        "scheme": "partial-sums",
        "d": 2,
        "hurst": [0.7, 0.6],
        "scales": [1.0, 1.0],
        "grid": {"t_max": 1.0, "points": 6, "dyadic": False},
        "levels": [256, 1024, 4096],
        "replicates": 5000,
        "seed": 20240503,
    },
}


@dataclass(frozen=True)
class GridSpec:
    t_max: float = 1.0
    points: int = 5
    dyadic: bool = True

    def times(self) -> np.ndarray:
        """Equally spaced points from 0 to t_max; a dyadic grid needs points - 1 to be a power of two."""
        if self.points == 1:
            return np.array([self.t_max])
        intervals = self.points - 1
        if self.dyadic and intervals & (intervals - 1):
            raise ConfigError(f"dyadic grid needs 2^k + 1 points, got {self.points}")
        return self.t_max * np.arange(self.points) / intervals


@dataclass(frozen=True, eq=False)
class RunConfig:
    scheme: str
    label: str
    d: int
    D: Optional[np.ndarray]
    A1: Optional[np.ndarray]
    A2: Optional[np.ndarray]
    gamma: Optional[np.ndarray]
    hurst: Optional[np.ndarray]
    scales: Optional[np.ndarray]
    grid: GridSpec
    levels: List[int]
    replicates: int
    seed: int
    quadrature: QuadratureConfig
    output_dir: Optional[str]
    paths_file: str
    report_file: str
    self_similarity_c: float
    z_threshold: Optional[float]
    echo: dict

    def times(self) -> np.ndarray:
        return self.grid.times()

    def spec(self) -> OfbmSpec:
        """Model for the exact and telegraph schemes (and validate / gamma)."""
        if self.D is None:
            if self.hurst is None:
                raise ConfigError("configuration defines neither D nor hurst")
            return OfbmSpec.diagonal(self.hurst, self.label)
        if self.A1 is None:
            return OfbmSpec.mason_xiao(self.D, self.label)
        return OfbmSpec(self.D, self.A1, self.A2, self.label)

    def covariance_sequence(self) -> StationaryCovSeq:
        if self.hurst is None:
            raise ConfigError("partial-sums scheme needs a hurst vector")
        return StationaryCovSeq.fgn(self.hurst, self.scales)

    def exact_gamma(self) -> Optional[np.ndarray]:
        """Gamma for the exact scheme: explicit, from scales for a hurst shortcut, else None (computed)."""
        if self.gamma is not None:
            return self.gamma
        if self.D is None and self.hurst is not None:
            scales = np.ones_like(self.hurst) if self.scales is None else self.scales
            return np.diag(scales**2)
        return None

    def with_overrides(self, seed: Optional[int] = None, replicates: Optional[int] = None,
                       levels: Optional[List[int]] = None) -> "RunConfig":
        raw = copy.deepcopy(self.echo)
        if seed is not None:
            raw["seed"] = seed
        if replicates is not None:
            raw["replicates"] = replicates
        if levels is not None:
            raw["levels"] = levels
        return parse_run_config(raw, base_quadrature=self.quadrature)


def _matrix(raw, name: str, d: int) -> Optional[np.ndarray]:
    if raw is None:
        return None
    arr = np.array(raw, dtype=float)
    if arr.shape != (d, d):
        raise ConfigError(f"{name} must be {d}x{d}, got shape {arr.shape}")
    return arr


def _vector(raw, name: str, d: int) -> Optional[np.ndarray]:
    if raw is None:
        return None
    arr = np.array(raw, dtype=float)
    if arr.shape != (d,):
        raise ConfigError(f"{name} must have {d} entries, got {arr.size}")
    return arr


def _check_scheme_fields(raw: dict):
    scheme = raw["scheme"]
    has_pair = "A1" in raw or "A2" in raw
    if ("A1" in raw) != ("A2" in raw):
        raise ConfigError("A1 and A2 must be given together")
    if scheme == "partial-sums":
        if "hurst" not in raw:
            raise ConfigError("partial-sums scheme needs a hurst vector")
        extra = [k for k in ("D", "A1", "A2", "gamma") if k in raw]
        if extra:
            raise ConfigError(f"partial-sums scheme does not take {', '.join(extra)}")
    else:
        if "hurst" in raw and ("D" in raw or has_pair):
            raise ConfigError(f"{scheme} scheme takes either D (with A1/A2) or a hurst vector, not both")
        if "hurst" not in raw and "D" not in raw:
            raise ConfigError(f"{scheme} scheme needs D or a hurst vector")
        if "scales" in raw and "hurst" not in raw:
            raise ConfigError("scales only apply together with a hurst vector")
    if scheme == "telegraph" and "gamma" in raw:
        raise ConfigError("telegraph scheme does not take gamma")


def parse_run_config(raw: dict, base_quadrature: Optional[QuadratureConfig] = None) -> RunConfig:
    """Validate a decoded JSON document and build the RunConfig.

    Quadrature keys present in the document override base_quadrature (the
    settings defaults); the rest are taken from it.
    """
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        details = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(f"invalid run configuration: {details}")
    _check_scheme_fields(raw)

    if "d" in raw:
        d = raw["d"]
    elif "D" in raw:
        d = len(raw["D"])
    else:
        d = len(raw["hurst"])

    grid_raw = raw.get("grid", {})
    grid = GridSpec(
        t_max=float(grid_raw.get("t_max", 1.0)),
        points=int(grid_raw.get("points", 5)),
        dyadic=bool(grid_raw.get("dyadic", True)),
    )
    grid.times()

    levels = [int(v) for v in raw.get("levels", [1])]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be strictly increasing, got {levels}")
    if raw["scheme"] == "partial-sums" and levels[0] < 2:
        raise ConfigError("partial-sums levels must be >= 2")

    try:
        quadrature = (base_quadrature or QuadratureConfig()).replace(**raw.get("quadrature", {}))
    except InvalidInputError as e:
        raise ConfigError(f"quadrature: {e}") from e

    output = raw.get("output", {})
    return RunConfig(
        scheme=raw["scheme"],
        label=raw.get("label", raw["scheme"]),
        d=d,
        D=_matrix(raw.get("D"), "D", d),
        A1=_matrix(raw.get("A1"), "A1", d),
        A2=_matrix(raw.get("A2"), "A2", d),
        gamma=_matrix(raw.get("gamma"), "gamma", d),
        hurst=_vector(raw.get("hurst"), "hurst", d),
        scales=_vector(raw.get("scales"), "scales", d),
        grid=grid,
        levels=levels,
        replicates=int(raw.get("replicates", 1000)),
        seed=int(raw.get("seed", 0)),
        quadrature=quadrature,
        output_dir=output.get("dir"),
        paths_file=output.get("paths", "paths.csv"),
        report_file=output.get("report", "report.json"),
        self_similarity_c=float(raw.get("self_similarity_c", 2.0)),
        z_threshold=raw.get("z_threshold"),
        echo=copy.deepcopy(raw),
    )


def load_run_config(path: str, base_quadrature: Optional[QuadratureConfig] = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"run configuration not found: {path}")
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return parse_run_config(raw, base_quadrature)


def default_run_config(scheme: str, base_quadrature: Optional[QuadratureConfig] = None) -> RunConfig:
    if scheme not in DEFAULT_CONFIGS:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    return parse_run_config(copy.deepcopy(DEFAULT_CONFIGS[scheme]), base_quadrature)
