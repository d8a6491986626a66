"""Parameter grids used as priors for the two queueing models."""

from __future__ import annotations

import numpy as np


def _levels(lo: float, hi: float, step: float) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


def model_one_grid(lam: float | None = None) -> list[tuple[float, float]]:
    """Pairs from {0.5, 0.6, ..., 1.9} with theta2 < theta1 (105 points)."""
    levels = _levels(0.5, 1.9, 0.1)
    grid = [(t1, t2) for t1 in levels for t2 in levels if t2 < t1]
    if lam is not None:
        grid = [th for th in grid if lam < th[0] + th[1]]
    return grid


def model_two_grid(lam: float | None = None) -> list[tuple[float, float]]:
    """Pairs from {0.5, 0.7, ..., 1.9} with theta2 < theta1 (28 points)."""
    levels = _levels(0.5, 1.9, 0.2)
    grid = [(t1, t2) for t1 in levels for t2 in levels if t2 < t1]
    if lam is not None:
        grid = [th for th in grid if lam < th[0] + th[1]]
    return grid


def table_order(grid: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Rows grouped by slow-server rate, then by fast-server rate."""
    return sorted(grid, key=lambda th: (th[1], th[0]))


def as_array(grid) -> np.ndarray:
    return np.asarray(grid, dtype=float)
