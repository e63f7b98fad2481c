"""Plain message-passing network used as the non-equivariant reference.

Features are ordinary real vectors. Messages are two-layer perceptrons of
``(f_i, f_j, coordinates)``, where the coordinates are either the raw edge
difference ``p_j - p_i`` or, in the ``raw`` variant, both absolute positions.
Neither variant respects rotations; the ``raw`` one also sees translations.
The pooling topology is the same as in the steerable network.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..descriptors import DescriptorMatrix
from ..graph import GraphHierarchy
from ..mesh import TetMesh
from ..so3 import Irrep, IrrepsLayout
from .graph_inputs import GraphInputs, LevelInputs, prepare_graph
from .layers import graph_norm_apply, norm_init, norm_param_count
from .params import NetworkParameters
from .segnn import STAGE_LEVEL, STAGES, param_reader
from .tensor_product import LayoutMismatchError

COORD_MODES = ("difference", "raw")


@dataclass(frozen=True)
class BaselineConfig:
    width: int = 32
    layers_per_scale: int = 2
    coords: str = "difference"
    velocity_scale: float = 100.0
    length_scale: float = 1.0

    def __post_init__(self):
        if self.coords not in COORD_MODES:
            raise ValueError(f"coords must be one of {COORD_MODES}")
        if self.width < 1 or self.layers_per_scale < 1:
            raise ValueError("width and layers_per_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _dense_init(rng, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, (n_in, n_out)), rng.uniform(-bound, bound, n_out)


class Baseline:
    def __init__(self, config: BaselineConfig = BaselineConfig()):
        self.config = config
        C = config.width
        self.layout = IrrepsLayout(((C, Irrep(0, 1)),))
        n_coord = 3 if config.coords == "difference" else 6
        self.in_dim = 9 + (3 if config.coords == "raw" else 0)
        self.dims = {
            "m1": (2 * C + n_coord, C),
            "m2": (C, C),
            "u1": (2 * C, C),
            "u2": (C, C),
        }

    def layer_names(self):
        return [f"{s}.{i}" for s in STAGES for i in range(self.config.layers_per_scale)]

    def init_params(self, seed: int = 0) -> NetworkParameters:
        rng = np.random.default_rng(seed)
        C = self.config.width
        named = []

        def add_dense(name, n_in, n_out):
            w, b = _dense_init(rng, n_in, n_out)
            named.extend([(f"{name}.w", w), (f"{name}.b", b)])

        add_dense("embed", self.in_dim, C)
        for name in self.layer_names():
            for key, (n_in, n_out) in self.dims.items():
                add_dense(f"{name}.{key}", n_in, n_out)
            named.append((f"{name}.norm", norm_init(self.layout)))
        add_dense("out", C, 3)
        return NetworkParameters.from_arrays(named)

    def _mlp2(self, P, prefix, a, b, x):
        h = ad.silu(ad.dense(x, P(f"{prefix}.{a}.w"), P(f"{prefix}.{a}.b")))
        return ad.dense(h, P(f"{prefix}.{b}.w"), P(f"{prefix}.{b}.b"))

    def layer(self, P, prefix, h, lv: LevelInputs, residual: bool):
        s = self.config.length_scale
        if self.config.coords == "difference":
            coords = lv.edge_vectors / s
        else:
            coords = np.concatenate([lv.gather_tgt @ lv.positions, lv.gather_src @ lv.positions], axis=1) / s
        z = ad.concat([ad.sparse_apply(lv.gather_tgt, h), ad.sparse_apply(lv.gather_src, h), coords], axis=1)
        m = self._mlp2(P, prefix, "m1", "m2", z)
        agg = ad.sparse_apply(lv.aggregate, m)
        out = self._mlp2(P, prefix, "u1", "u2", ad.concat([h, agg], axis=1))
        if residual:
            out = ad.add(h, out)
        return graph_norm_apply(out, self.layout, None, P(f"{prefix}.norm"))

    def forward(self, P, graph: GraphInputs, X: np.ndarray):
        if len(graph.levels) != 3:
            raise LayoutMismatchError("expected a three-level hierarchy")
        if np.shape(X) != (graph.n, 9):
            raise LayoutMismatchError(f"descriptors have shape {np.shape(X)}, expected ({graph.n}, 9)")
        lv = graph.levels
        x = np.asarray(X, dtype=np.float64) / self.config.length_scale
        if self.config.coords == "raw":
            x = np.concatenate([x, lv[0].positions / self.config.length_scale], axis=1)
        h = ad.silu(ad.dense(x, P("embed.w"), P("embed.b")))
        skips = {}
        for stage in STAGES:
            level = STAGE_LEVEL[stage]
            if stage in ("down1", "bottom"):
                h = ad.sparse_apply(lv[level - 1].pool, h)
            elif stage in ("up1", "up0"):
                h = ad.add(ad.sparse_apply(lv[level].unpool, h), skips[level])
            for i in range(self.config.layers_per_scale):
                h = self.layer(P, f"{stage}.{i}", h, lv[level], residual=i > 0)
            if stage in ("down0", "down1"):
                skips[level] = h
        out = ad.dense(h, P("out.w"), P("out.b"))
        return ad.scale(out, self.config.velocity_scale)


_MODELS: dict[BaselineConfig, Baseline] = {}


def get_baseline(config: BaselineConfig) -> Baseline:
    if config not in _MODELS:
        _MODELS[config] = Baseline(config)
    return _MODELS[config]


def baseline_forward(mesh: TetMesh, hierarchy: GraphHierarchy, X: DescriptorMatrix | np.ndarray,
                     params: NetworkParameters, config: BaselineConfig = BaselineConfig(),
                     graph: GraphInputs | None = None) -> np.ndarray:
    model = get_baseline(config)
    rows = X.rows if isinstance(X, DescriptorMatrix) else np.asarray(X)
    if graph is None:
        graph = prepare_graph(mesh, hierarchy, 0)
    P, _ = param_reader(params)
    return np.asarray(model.forward(P, graph, rows))
