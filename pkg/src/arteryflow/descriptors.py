"""Per-vertex geometry descriptors: nearest-point offsets to inlet, wall and outlets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import nearest_indices
from .mesh import INLET, OUTLET, WALL, TetMesh, require_roles


@dataclass(frozen=True)
class DescriptorMatrix:
    """``n x 9`` rows ``(to_inlet, to_wall, to_outlets)`` in mm."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 9:
            raise ValueError("descriptor matrix must be n x 9")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def to_inlet(self) -> np.ndarray:
        return self.rows[:, 0:3]

    @property
    def to_wall(self) -> np.ndarray:
        return self.rows[:, 3:6]

    @property
    def to_outlets(self) -> np.ndarray:
        return self.rows[:, 6:9]

    def vectors(self) -> np.ndarray:
        """``(n, 3, 3)``: the three offsets as separate Cartesian vectors."""
        return self.rows.reshape(-1, 3, 3)


def nearest_in_set(p, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("point set is empty")
    return points[nearest_indices(np.asarray(p, dtype=np.float64)[None], points)[0]].copy()


def compute_descriptors(mesh: TetMesh) -> DescriptorMatrix:
    require_roles(mesh.roles)
    p = mesh.positions
    blocks = []
    for role in (INLET, WALL, OUTLET):
        # both outlet branches form a single merged set
        targets = p[mesh.roles == role]
        blocks.append(targets[nearest_indices(p, targets)] - p)
    return DescriptorMatrix(np.concatenate(blocks, axis=1))
