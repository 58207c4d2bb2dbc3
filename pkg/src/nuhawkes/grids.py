"""Uniform time grids shared by the resolvent, path samplers, and SDE solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Grid"]


@dataclass(frozen=True)
class Grid:
    """Uniform grid with step ``h`` covering ``[0, T]``.

    The grid has ``m = ceil(T / h)`` cells and nodes ``t_k = k * h`` for
    ``k = 0..m``; the last node may overshoot ``T`` by less than one step.
    """

    T: float
    h: float

    def __post_init__(self):
        if not (self.h > 0):
            raise ValueError("grid step h must be positive")
        if not (self.T > 0) or self.h > self.T:
            raise ValueError("grid requires 0 < h <= T")

    @property
    def m(self) -> int:
        # tolerance keeps T/h = integer cases from gaining a spurious cell
        return int(math.ceil(self.T / self.h - 1e-9))

    @property
    def horizon(self) -> float:
        return self.m * self.h

    def nodes(self) -> np.ndarray:
        return np.arange(self.m + 1) * self.h

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) * self.h

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.T, self.h / factor)
