"""Uniform time grids, tabulated functions and fixed-step RK4 integration."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ODEBlowUp

DEFAULT_STEPS = 512


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"grid end {self.T} must exceed start {self.t0}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        s = self.t0 + np.arange(self.n_steps + 1) * self.dt
        s[-1] = self.T
        s.flags.writeable = False
        return s

    @cached_property
    def half_nodes(self) -> np.ndarray:
        """Nodes and RK4 midpoints interleaved (``2 n + 1`` points)."""
        s = self.t0 + np.arange(2 * self.n_steps + 1) * (0.5 * self.dt)
        s[-1] = self.T
        s.flags.writeable = False
        return s

    def __len__(self) -> int:
        return self.n_steps + 1

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a (vector) function at the nodes of a grid.

    ``values`` is stored with shape ``(nodes, dim)``; scalar data passed as a
    1-d array is promoted to ``dim == 1``.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != len(self.grid):
            raise ValueError(f"expected {len(self.grid)} rows of values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise ODEBlowUp(bad, "non-finite grid value")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def scalar(self) -> np.ndarray:
        """The first component as a 1-d array."""
        return self.values[:, 0]

    def __call__(self, s):
        """Linear interpolation in time (componentwise)."""
        s = np.asarray(s, dtype=np.float64)
        out = np.stack([np.interp(s, self.grid.nodes, self.values[:, j]) for j in range(self.dim)], axis=-1)
        return out[..., 0] if self.dim == 1 else out

    def to_csv(self, path, header: list[str] | None = None) -> None:
        if header is None:
            header = ["s"] + [f"v{j}" for j in range(self.dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for s, row in zip(self.grid.nodes, self.values):
                w.writerow([f"{s:.17g}"] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        s = data[:, 0]
        grid = TimeGrid(float(s[0]), float(s[-1]), len(s) - 1)
        return cls(grid, data[:, 1:])


def _check(v, node):
    if not np.all(np.isfinite(v)):
        raise ODEBlowUp(node)


def integrate_forward(rhs: Callable, v0, grid: TimeGrid) -> GridFunction:
    """Classical RK4 for ``v' = rhs(s, v)``, ``v(t0) = v0``."""
    v = np.atleast_1d(np.asarray(v0, dtype=np.float64)).copy()
    _check(v, 0)
    h = grid.dt
    out = np.empty((len(grid), v.size))
    out[0] = v
    for i, s in enumerate(grid.nodes[:-1]):
        k1 = np.asarray(rhs(s, v), dtype=np.float64)
        k2 = np.asarray(rhs(s + 0.5 * h, v + 0.5 * h * k1), dtype=np.float64)
        k3 = np.asarray(rhs(s + 0.5 * h, v + 0.5 * h * k2), dtype=np.float64)
        k4 = np.asarray(rhs(s + h, v + h * k3), dtype=np.float64)
        v = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(v, i + 1)
        out[i + 1] = v
    return GridFunction(grid, out)


def integrate_terminal(rhs: Callable, vT, grid: TimeGrid) -> GridFunction:
    """RK4 for the terminal-value problem ``-v' = rhs(s, v)``, ``v(T) = vT``.

    The system is integrated in reversed time ``tau = T - s``; the terminal
    value is stored exactly.
    """
    v = np.atleast_1d(np.asarray(vT, dtype=np.float64)).copy()
    n = grid.n_steps
    _check(v, n)
    h = grid.dt
    out = np.empty((n + 1, v.size))
    out[n] = v
    nodes = grid.nodes
    for i in range(n, 0, -1):
        s = nodes[i]
        k1 = np.asarray(rhs(s, v), dtype=np.float64)
        k2 = np.asarray(rhs(s - 0.5 * h, v + 0.5 * h * k1), dtype=np.float64)
        k3 = np.asarray(rhs(s - 0.5 * h, v + 0.5 * h * k2), dtype=np.float64)
        k4 = np.asarray(rhs(nodes[i - 1], v + h * k3), dtype=np.float64)
        v = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(v, i - 1)
        out[i - 1] = v
    return GridFunction(grid, out)


def hermite_midpoints(values: np.ndarray, derivs: np.ndarray, dt: float) -> np.ndarray:
    """Interleave node values with cubic Hermite midpoint estimates.

    Returns ``2 n + 1`` values; midpoints are accurate to ``O(dt**4)``.
    """
    values = np.asarray(values, dtype=np.float64)
    derivs = np.asarray(derivs, dtype=np.float64)
    out = np.empty((2 * values.shape[0] - 1,) + values.shape[1:])
    out[::2] = values
    out[1::2] = 0.5 * (values[:-1] + values[1:]) + dt / 8.0 * (derivs[:-1] - derivs[1:])
    return out
