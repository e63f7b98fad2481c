"""Neighbourhood graphs, farthest point sampling and the pooling hierarchy.

Every selection rule here breaks ties towards the lowest vertex index so the
whole pipeline is a deterministic function of the input positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TetMesh

BRUTE_FORCE_LIMIT = 50_000
TIE_RTOL = 1e-9  # relative gap below which two distances count as tied
_CHUNK_BYTES = 32 * 2**20


class InsufficientVerticesError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeList:
    """Directed edges ``sources[e] -> targets[e]``.

    Edges from :func:`knn_graph` are grouped by target (ascending) and, within
    a target, ordered by increasing distance.
    """

    sources: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.sources, dtype=np.int64)
        tgt = np.asarray(self.targets, dtype=np.int64)
        if src.shape != tgt.shape or src.ndim != 1:
            raise ValueError("sources and targets must be equal-length 1-D arrays")
        if (src == tgt).any():
            raise ValueError("self-loops are not allowed")
        src.setflags(write=False)
        tgt.setflags(write=False)
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "targets", tgt)

    def __len__(self) -> int:
        return len(self.sources)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.sources.tolist(), self.targets.tolist()))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit differences: exact for coincident points, no cancellation
    d = a[:, None, :] - b[None, :, :]
    return d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2


def _merge_near_ties(d: np.ndarray) -> np.ndarray:
    """Replace values within ``TIE_RTOL`` of a smaller neighbour (in sorted order) by that value.

    Symmetric meshes produce exact distance ties that rounding can split in
    either direction once the mesh is moved; merging them lets the
    lowest-index rule decide consistently.
    """
    order = np.argsort(d, axis=1, kind="stable")
    v = np.take_along_axis(d, order, axis=1)
    with np.errstate(invalid="ignore"):
        close = np.diff(v, axis=1) <= TIE_RTOL * np.abs(v[:, 1:])
    start = np.concatenate([np.ones((len(v), 1), bool), ~close], axis=1)
    idx = np.where(start, np.arange(v.shape[1]), 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    out = np.empty_like(d)
    np.put_along_axis(out, order, np.take_along_axis(v, idx, axis=1), axis=1)
    return out


def _chunk_rows(n_cols: int) -> int:
    return max(1, _CHUNK_BYTES // (24 * max(n_cols, 1)))


def _k_smallest(d: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest entries per row, ties -> lower index."""
    d = _merge_near_ties(d)
    kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
    mask = d <= kth
    counts = mask.sum(axis=1)
    out = np.empty((len(d), k), dtype=np.int64)
    plain = counts == k
    if plain.any():
        cand = np.nonzero(mask[plain])[1].reshape(-1, k)  # ascending index per row
        vals = np.take_along_axis(d[plain], cand, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        out[plain] = np.take_along_axis(cand, order, axis=1)
    for row in np.flatnonzero(~plain):
        cand = np.flatnonzero(mask[row])
        order = np.argsort(d[row, cand], kind="stable")
        out[row] = cand[order[:k]]
    return out


def _knn_brute(positions: np.ndarray, k: int) -> np.ndarray:
    n = len(positions)
    nbrs = np.empty((n, k), dtype=np.int64)
    step = _chunk_rows(n)
    for start in range(0, n, step):
        stop = min(n, start + step)
        d = _sq_dists(positions[start:stop], positions)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        nbrs[start:stop] = _k_smallest(d, k)
    return nbrs


def _knn_tree(positions: np.ndarray, k: int) -> np.ndarray:
    n = len(positions)
    tree = cKDTree(positions)
    nbrs = np.empty((n, k), dtype=np.int64)
    extra = 4
    pending = np.arange(n)
    while len(pending):
        q = min(n, k + 1 + extra)
        _, cand = tree.query(positions[pending], k=q)
        diff = positions[pending][:, None, :] - positions[cand]
        d = diff[..., 0] ** 2 + diff[..., 1] ** 2 + diff[..., 2] ** 2
        d[cand == pending[:, None]] = np.inf
        # re-order candidates by index so the stable selection breaks ties by index
        order = np.argsort(cand, axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        sel = _k_smallest(d, k)
        chosen_d = np.take_along_axis(d, sel, axis=1).max(axis=1)
        # a candidate list is conclusive only if something strictly farther was returned
        finite = np.where(np.isinf(d), -np.inf, d).max(axis=1)
        ok = (chosen_d * (1.0 + TIE_RTOL) < finite) | (q == n)
        nbrs[pending[ok]] = np.take_along_axis(cand, sel, axis=1)[ok]
        pending = pending[~ok]
        extra *= 2
    return nbrs


def knn_neighbors(positions: np.ndarray, k: int, method: str = "auto") -> np.ndarray:
    """``(n, k)`` array of neighbour indices sorted by distance."""
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if k <= 0:
        raise ValueError("k must be positive")
    if n <= k:
        raise InsufficientVerticesError(f"need more than k={k} vertices, got {n}")
    if method == "auto":
        method = "brute" if n <= BRUTE_FORCE_LIMIT else "tree"
    if method == "brute":
        return _knn_brute(positions, k)
    if method == "tree":
        return _knn_tree(positions, k)
    raise ValueError(f"unknown method {method!r}")


def knn_graph(positions: np.ndarray, k: int, method: str = "auto") -> EdgeList:
    nbrs = knn_neighbors(positions, k, method)
    n = len(nbrs)
    return EdgeList(nbrs.reshape(-1), np.repeat(np.arange(n), k))


def nearest_indices(points: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """For each point, the index of its nearest candidate (ties -> lowest index)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    out = np.empty(len(points), dtype=np.int64)
    step = _chunk_rows(len(candidates))
    for start in range(0, len(points), step):
        d = _sq_dists(points[start : start + step], candidates)
        best = d.min(axis=1, keepdims=True)
        out[start : start + step] = np.argmax(d <= best * (1.0 + TIE_RTOL), axis=1)
    return out


def farthest_point_sampling(positions: np.ndarray, count: int, start: int = 0) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if count <= 0:
        raise ValueError("count must be positive")
    if count > n:
        raise ValueError(f"cannot sample {count} of {n} vertices")
    if not 0 <= start < n:
        raise ValueError("start index out of range")
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start
    min_d = _sq_dists(positions, positions[start : start + 1])[:, 0]
    min_d[start] = -1.0
    for i in range(1, count):
        nxt = int(np.argmax(min_d >= min_d.max() * (1.0 - TIE_RTOL)))
        selected[i] = nxt
        d = _sq_dists(positions, positions[nxt : nxt + 1])[:, 0]
        np.minimum(min_d, d, out=min_d)
        min_d[selected[: i + 1]] = -1.0
    return selected


def covering_radius(positions: np.ndarray, sample: np.ndarray) -> float:
    idx = nearest_indices(positions, positions[sample])
    return float(np.sqrt(((positions - positions[sample][idx]) ** 2).sum(axis=1)).max())


@dataclass(frozen=True)
class Level:
    """One resolution of the hierarchy.

    ``vertices`` are global mesh indices (ascending); ``edges`` and ``pool``
    use *local* indices.  ``pool[i]`` is the local index in the next level of
    the vertex that level vertex ``i`` pools into (``None`` at the coarsest).
    """

    vertices: np.ndarray
    edges: EdgeList
    pool: np.ndarray | None

    @property
    def size(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class GraphHierarchy:
    levels: tuple[Level, ...]

    def sizes(self) -> list[int]:
        return [lvl.size for lvl in self.levels]


def level_sizes(n: int, ratios: tuple[float, float]) -> list[int]:
    r1, r2 = ratios
    # small epsilon guards against ceil(25.000000000000004)
    return [n, math.ceil(n * r1 - 1e-9), math.ceil(n * r1 * r2 - 1e-9)]


def build_hierarchy(
    mesh: TetMesh | np.ndarray,
    k: int = 13,
    ratios: tuple[float, float] = (0.25, 0.25),
    start: int = 0,
) -> GraphHierarchy:
    positions = mesh.positions if isinstance(mesh, TetMesh) else np.asarray(mesh, dtype=np.float64)
    if not all(0 < r <= 1 for r in ratios):
        raise ValueError("ratios must lie in (0, 1]")
    sizes = level_sizes(len(positions), ratios)
    if sizes[-1] < k + 1:
        raise InsufficientVerticesError(
            f"coarsest level has {sizes[-1]} vertices; k-NN with k={k} needs at least {k + 1}"
        )
    vertex_sets = [np.arange(len(positions))]
    for size in sizes[1:]:
        prev = vertex_sets[-1]
        local_start = int(np.searchsorted(prev, start)) if start in prev else 0
        chosen = prev[farthest_point_sampling(positions[prev], size, local_start)]
        vertex_sets.append(np.sort(chosen))

    levels = []
    for i, verts in enumerate(vertex_sets):
        edges = knn_graph(positions[verts], k)
        pool = None
        if i + 1 < len(vertex_sets):
            pool = nearest_indices(positions[verts], positions[vertex_sets[i + 1]])
            pool.setflags(write=False)
        verts = verts.copy()
        verts.setflags(write=False)
        levels.append(Level(verts, edges, pool))
    return GraphHierarchy(tuple(levels))
