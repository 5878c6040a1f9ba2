"""Sampled vector-valued paths on a time grid.

A GridPath holds values of a K-dimensional path at strictly increasing grid
times.  Unless a caller documents otherwise, the path is interpreted as
right-continuous piecewise constant: values[k] is the value on
[grid[k], grid[k+1]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GridPath", "uniform_grid", "DEFAULT_POINTS_PER_UNIT"]

# default grid resolution for decompositions and solver inputs
DEFAULT_POINTS_PER_UNIT = 1024


def uniform_grid(horizon: float, points_per_unit: int = DEFAULT_POINTS_PER_UNIT) -> np.ndarray:
    """Uniform grid on [0, horizon] with roughly points_per_unit points per unit time."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    m = max(2, int(round(horizon * points_per_unit)) + 1)
    return np.linspace(0.0, float(horizon), m)


@dataclass(frozen=True)
class GridPath:
    """Path values on a strictly increasing time grid.

    Parameters
    ----------
    grid : ndarray, shape (m,)
        Strictly increasing times, grid[0] == 0.
    values : ndarray, shape (m, K)
        Path values; a 1-d array of shape (m,) is accepted and treated as K=1.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if grid.ndim != 1 or values.ndim != 2 or values.shape[0] != grid.shape[0]:
            raise ValueError("grid must be (m,) and values (m, K) with matching m")
        if grid.shape[0] < 2:
            raise ValueError("need at least two grid points")
        if grid[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(grid)) or not np.all(np.isfinite(values)):
            raise ValueError("grid and values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def value_at(self, times) -> np.ndarray:
        """Piecewise-constant (cadlag) evaluation at the given times.

        Times must lie in [0, horizon].  Returns shape (K,) for a scalar
        time and (len(times), K) otherwise.
        """
        t = np.asarray(times, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if t.min() < 0.0 or t.max() > self.horizon + 1e-12:
            raise ValueError("evaluation time outside [0, horizon]")
        idx = np.searchsorted(self.grid, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.grid) - 1)
        out = self.values[idx]
        return out[0] if scalar else out

    def component(self, i: int) -> "GridPath":
        return GridPath(self.grid, self.values[:, i].copy())
