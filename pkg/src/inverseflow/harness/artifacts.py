"""Deterministic artifact writers.

Every file starts with `# ` metadata lines (schema name, config hash, seed)
so a finished run can be reproduced exactly; no timestamps or hostnames.
Floats are written with repr, which round-trips and is byte-stable."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable

import numpy as np


def config_hash(doc: dict) -> str:
    """Short stable digest of a JSON-serializable config."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def metadata_lines(schema: str, cfg_hash: str, seed: int) -> list[str]:
    return [f"# schema: {schema}", f"# config_hash: {cfg_hash}", f"# seed: {seed}"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str, schema: str, cfg_hash: str, seed: int,
              columns: list[str], rows: Iterable[Iterable]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = metadata_lines(schema, cfg_hash, seed)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_grid_csv(path: str, schema: str, cfg_hash: str, seed: int,
                   x1_edges: np.ndarray, x2_edges: np.ndarray,
                   density: np.ndarray) -> None:
    """Histogram grid: one row of x1 bin edges, one of x2 bin edges, then
    the density matrix row by row."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = metadata_lines(schema, cfg_hash, seed)
    lines.append(",".join(repr(float(v)) for v in x1_edges))
    lines.append(",".join(repr(float(v)) for v in x2_edges))
    for row in np.asarray(density, dtype=float):
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(np.array([float(v) for v in line.split(",")]))
    return rows[0], rows[1], np.vstack(rows[2:])


def write_json(path: str, schema: str, cfg_hash: str, seed: int,
               payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    doc = {"schema": schema, "config_hash": cfg_hash, "seed": seed, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
