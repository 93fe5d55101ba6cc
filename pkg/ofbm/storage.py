"""Atomic writers and readers for paths.csv and report.json."""

import csv
import json
import os
import tempfile
from typing import List, Sequence

import numpy as np
from loguru import logger

from .errors import InvalidInputError
from .paths import GridPath


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _fmt(value: float) -> str:
    return "%.17g" % value


def write_paths_csv(path: str, paths: Sequence[GridPath]):
    """One row per (replicate, grid point): replicate,t,x_1..x_d with 17 significant digits."""
    if not paths:
        raise InvalidInputError("no paths to write")
    d = paths[0].d
    lines = [",".join(["replicate", "t"] + [f"x_{k + 1}" for k in range(d)])]
    for p in paths:
        for t, row in zip(p.grid, p.values):
            lines.append(",".join([str(p.replicate_id), _fmt(t)] + [_fmt(v) for v in row]))
    _atomic_write(path, "\n".join(lines) + "\n")
    logger.info(f"Wrote {len(paths)} paths to {path}")


def read_paths_csv(path: str) -> List[GridPath]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["replicate", "t"]:
            raise InvalidInputError(f"{path} is not a paths file")
        rows = [r for r in reader if r]
    grouped = {}
    for r in rows:
        grouped.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
    out = []
    for rep in sorted(grouped):
        block = np.array(grouped[rep])
        out.append(GridPath(block[:, 0], block[:, 1:], rep))
    return out


def write_report(path: str, report: dict):
    """Sorted keys and fixed indentation so equal reports are byte-identical."""
    _atomic_write(path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    logger.info(f"Wrote report to {path}")


def read_report(path: str) -> dict:
    with open(path, "r") as f:
        return json.load(f)
