"""Regular cubic lattice of cells in three dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class Lattice:
    n_cells: tuple
    cell_size: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        n = tuple(int(k) for k in np.broadcast_to(np.asarray(self.n_cells), (3,)))
        if any(k < 1 for k in n):
            raise ContractError(f"need at least one cell per axis, got {n}")
        if not self.cell_size > 0:
            raise ContractError("cell_size must be positive")
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))

    @property
    def size(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def cell_volume(self) -> float:
        return self.cell_size**3

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.n_cells) * self.cell_size

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centre coordinates, shape ``(size, 3)``, C order over (x, y, z)."""
        axes = [self.origin[k] + (np.arange(self.n_cells[k]) + 0.5) * self.cell_size for k in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=1)

    def index(self, i: int, j: int = 0, k: int = 0) -> int:
        return int(np.ravel_multi_index((i, j, k), self.n_cells))

    def multi_index(self, cell: int) -> tuple:
        return tuple(int(x) for x in np.unravel_index(cell, self.n_cells))

    def center(self, cell: int) -> np.ndarray:
        return self.centers[cell]

    def distance(self, c1: int, c2: int) -> float:
        return float(np.linalg.norm(self.centers[c1] - self.centers[c2]))

    def neighbours(self, cell: int) -> list:
        idx = self.multi_index(cell)
        out = []
        for axis in range(3):
            for step in (-1, 1):
                j = list(idx)
                j[axis] += step
                if 0 <= j[axis] < self.n_cells[axis]:
                    out.append(self.index(*j))
        return out

    @cached_property
    def adjacent_pairs(self) -> np.ndarray:
        """All nearest-neighbour pairs ``(c, c')`` with ``c < c'``."""
        ids = np.arange(self.size).reshape(self.n_cells)
        pairs = []
        for axis in range(3):
            a = np.take(ids, np.arange(self.n_cells[axis] - 1), axis=axis).reshape(-1)
            b = np.take(ids, np.arange(1, self.n_cells[axis]), axis=axis).reshape(-1)
            pairs.append(np.stack([a, b], axis=1))
        return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)

    def nearest_cell(self, point) -> int:
        p = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.cell_size
        idx = np.clip(np.floor(p).astype(int), 0, np.asarray(self.n_cells) - 1)
        return self.index(*idx)

    def distance_to_boundary(self, point) -> float:
        p = np.asarray(point, dtype=float) - np.asarray(self.origin)
        return float(np.min(np.concatenate([p, self.extent - p])))
