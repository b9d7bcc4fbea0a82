"""Training-data container shared by the surrogate modules.

A Dataset holds an input matrix, an output matrix, and a per-row fidelity
tag. CSV layout: header ``x1,...,xd,y1,...,ym,fidelity`` with fidelity in
{low, high}; leading ``#`` lines are artifact metadata and are skipped on
read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

LOW = "low"
HIGH = "high"

DEFAULT_COST_RATIO = 5.0


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    fidelity: np.ndarray
    x_names: list[str] = field(default_factory=list)
    y_names: list[str] = field(default_factory=list)
    cost_ratio: float = DEFAULT_COST_RATIO

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.fidelity = np.asarray(self.fidelity, dtype=object)
        n = self.X.shape[0]
        if self.Y.shape[0] != n or self.fidelity.shape[0] != n:
            raise ShapeError("X, Y and fidelity must have the same row count")
        bad = set(self.fidelity) - {LOW, HIGH}
        if bad:
            raise ValueError(f"unknown fidelity tags: {sorted(bad)}")
        if self.cost_ratio <= 1.0:
            raise ValueError("cost_ratio must exceed 1")
        if not self.x_names:
            self.x_names = [f"x{i + 1}" for i in range(self.d)]
        if not self.y_names:
            self.y_names = [f"y{j + 1}" for j in range(self.m)]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.Y[:, j]

    def mask(self, fidelity: str) -> np.ndarray:
        return self.fidelity == fidelity

    def subset(self, fidelity: str) -> "Dataset":
        keep = self.mask(fidelity)
        return Dataset(self.X[keep], self.Y[keep], self.fidelity[keep],
                       list(self.x_names), list(self.y_names), self.cost_ratio)

    def count(self, fidelity: str) -> int:
        return int(self.mask(fidelity).sum())

    def appended(self, x: np.ndarray, y: np.ndarray, fidelity: str) -> "Dataset":
        """New dataset with one extra row."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        y = np.asarray(y, dtype=float).reshape(1, -1)
        if x.shape[1] != self.d or y.shape[1] != self.m:
            raise ShapeError("appended row does not match dataset width")
        return Dataset(np.vstack([self.X, x]), np.vstack([self.Y, y]),
                       np.concatenate([self.fidelity, [fidelity]]),
                       list(self.x_names), list(self.y_names), self.cost_ratio)

    def equivalent_cost(self) -> float:
        """High-fidelity-equivalent cost: N_high + N_low / cost_ratio."""
        return self.count(HIGH) + self.count(LOW) / self.cost_ratio

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path, header_lines: list[str] | None = None) -> None:
        with open(path, "w") as f:
            for line in header_lines or []:
                f.write(f"# {line}\n")
            f.write(",".join(self.x_names + self.y_names + ["fidelity"]) + "\n")
            for i in range(self.n):
                row = [_fmt(v) for v in self.X[i]] + [_fmt(v) for v in self.Y[i]]
                f.write(",".join(row + [str(self.fidelity[i])]) + "\n")

    @classmethod
    def from_csv(cls, path, d: int | None = None,
                 cost_ratio: float = DEFAULT_COST_RATIO) -> "Dataset":
        """Read the CSV layout above. ``d`` overrides the input width when
        column names do not follow the x*/y* convention."""
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
        names = lines[0].split(",")
        if names[-1] != "fidelity":
            raise ValueError("last column must be 'fidelity'")
        feat = names[:-1]
        if d is None:
            d = sum(1 for c in feat if c.startswith("x"))
            if d == 0 or d == len(feat):
                raise ValueError("cannot infer input width; pass d explicitly")
        xs, ys, tags = [], [], []
        for ln in lines[1:]:
            parts = ln.split(",")
            vals = [float(v) for v in parts[:-1]]
            xs.append(vals[:d])
            ys.append(vals[d:])
            tags.append(parts[-1])
        return cls(np.array(xs), np.array(ys), np.array(tags, dtype=object),
                   feat[:d], feat[d:], cost_ratio)
