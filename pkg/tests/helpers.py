"""Shared builders: probe paths and the standard test topologies."""

from __future__ import annotations

import numpy as np

from heavyq import GridPath

# routing matrices used across the suite
P_SINGLE = np.array([[0.0]])
P_SINGLE_FEEDBACK = np.array([[0.7]])
P_TANDEM = np.array([[0.0, 1.0], [0.0, 0.0]])
P_CYCLIC_2 = np.array([[0.0, 0.7], [0.7, 0.0]])
P_CYCLIC_3 = np.array([[0.0, 0.7, 0.0], [0.0, 0.0, 0.7], [0.7, 0.0, 0.0]])


def brownian_path(seed, horizon: float = 1.0, points: int = 256, dim: int = 1,
                  scale: float = 1.0, drift: float = 0.0, start=None) -> GridPath:
    """Brownian-type grid path started at `start` (default 0)."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, float(horizon), points + 1)
    dt = grid[1] - grid[0]
    inc = rng.standard_normal((points, dim)) * (scale * np.sqrt(dt)) + drift * dt
    vals = np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])
    if start is not None:
        vals = vals + np.asarray(start, dtype=float)
    return GridPath(grid, vals)


def linear_path(slopes, horizon: float = 1.0, points: int = 256, start=None) -> GridPath:
    """Deterministic path t -> start + slopes * t."""
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    grid = np.linspace(0.0, float(horizon), points + 1)
    vals = np.outer(grid, slopes)
    if start is not None:
        vals = vals + np.asarray(start, dtype=float)
    return GridPath(grid, vals)
