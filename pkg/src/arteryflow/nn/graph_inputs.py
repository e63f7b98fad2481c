"""Parameter-independent per-mesh tensors consumed by both networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..graph import GraphHierarchy
from ..mesh import TetMesh
from ..so3 import spherical_harmonics
from .layers import gather_matrix, mean_aggregation_matrix, pool_matrix, unpool_matrix


@dataclass(frozen=True)
class LevelInputs:
    n: int
    positions: np.ndarray  # (n, 3), used only by the raw-coordinate baseline
    edge_vectors: np.ndarray  # (E, 3) p_j - p_i for edge j -> i
    sq_dist: np.ndarray  # (E, 1)
    edge_attr: np.ndarray  # (E, (lmax+1)^2) spherical harmonics of edge directions
    node_attr: np.ndarray  # (n, (lmax+1)^2) mean of incoming edge attributes
    gather_src: sp.csr_matrix
    gather_tgt: sp.csr_matrix
    aggregate: sp.csr_matrix
    pool: sp.csr_matrix | None  # to the next coarser level
    unpool: sp.csr_matrix | None  # from the next coarser level


@dataclass(frozen=True)
class GraphInputs:
    levels: tuple[LevelInputs, ...]

    @property
    def n(self) -> int:
        return self.levels[0].n


def prepare_graph(
    mesh: TetMesh,
    hierarchy: GraphHierarchy,
    attr_lmax: int = 2,
    poison_edge: tuple[int, np.ndarray] | None = None,
) -> GraphInputs:
    """Edge/vertex attributes and sparse operators for every hierarchy level.

    ``poison_edge = (edge, R)`` rotates the attribute of one level-0 edge by
    ``R``; it exists only as a negative control for the verification suite.
    """
    levels = []
    for i, lvl in enumerate(hierarchy.levels):
        pos = mesh.positions[lvl.vertices]
        n = len(pos)
        src, tgt = lvl.edges.sources, lvl.edges.targets
        vec = pos[src] - pos[tgt]
        sq = (vec**2).sum(axis=1)
        length = np.sqrt(sq)
        if (length == 0).any():
            raise ValueError(f"level {i} has a zero-length edge (duplicate vertices)")
        unit = vec / length[:, None]
        if i == 0 and poison_edge is not None:
            e, R = poison_edge
            unit = unit.copy()
            unit[e] = np.asarray(R) @ unit[e]
        edge_attr = spherical_harmonics(unit, attr_lmax)
        agg = mean_aggregation_matrix(tgt, n)
        pool = unpool = None
        if lvl.pool is not None:
            n_next = hierarchy.levels[i + 1].size
            pool = pool_matrix(lvl.pool, n_next)
            unpool = unpool_matrix(lvl.pool, n_next)
        levels.append(
            LevelInputs(
                n=n,
                positions=pos,
                edge_vectors=vec,
                sq_dist=sq[:, None],
                edge_attr=edge_attr,
                node_attr=agg @ edge_attr,
                gather_src=gather_matrix(src, n),
                gather_tgt=gather_matrix(tgt, n),
                aggregate=agg,
                pool=pool,
                unpool=unpool,
            )
        )
    return GraphInputs(tuple(levels))
