"""Steerable E(3)-equivariant message passing network on the pooling hierarchy.

Layer structure (all maps are attribute-steered tensor products):

    message  m_ij = TP(gate(TP([f_i, f_j, |p_j - p_i|^2], a_ij)), a_ij)
    update   f_i <- norm(f_i + TP(gate(TP([f_i, mean_j m_ij], a_i)), a_i))

The network embeds the three descriptor vectors with a self tensor product,
runs ``layers_per_scale`` layers on each of V0 -> V1 -> V2 -> V1 -> V0 with
mean pooling, copy-back unpooling and additive skips between equal scales,
and reads out one odd vector per vertex.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, Var
from ..descriptors import DescriptorMatrix
from ..graph import GraphHierarchy
from ..mesh import TetMesh
from ..so3 import CARTESIAN_TO_L1, L1_TO_CARTESIAN, Irrep, IrrepsLayout, SteerableTensor
from .graph_inputs import GraphInputs, LevelInputs, prepare_graph
from .layers import gate_apply, gate_input_layout, graph_norm_apply, norm_init, norm_param_count
from .params import NetworkParameters
from .tensor_product import LayoutMismatchError, TensorProductMap, tp_apply

STAGES = ("down0", "down1", "bottom", "up1", "up0")
STAGE_LEVEL = {"down0": 0, "down1": 1, "bottom": 2, "up1": 1, "up0": 0}

SCALAR = Irrep(0, 1)
VECTOR = Irrep(1, -1)


@dataclass(frozen=True)
class SegnnConfig:
    hidden: str = "16x0e + 8x1o + 4x2e"
    attr_lmax: int = 2
    layers_per_scale: int = 2
    velocity_scale: float = 100.0  # mm/s per unit of network output
    length_scale: float = 1.0  # mm; descriptors and squared distances are divided by it

    def __post_init__(self):
        layout = IrrepsLayout.parse(self.hidden)
        if layout.num_scalars == 0:
            raise ValueError("hidden layout needs at least one l=0 entry")
        if self.layers_per_scale < 1:
            raise ValueError("layers_per_scale must be positive")

    @property
    def hidden_layout(self) -> IrrepsLayout:
        layout = IrrepsLayout.parse(self.hidden)
        # scalars first, as the gate convention requires
        return IrrepsLayout(tuple(sorted(layout.entries, key=lambda e: (e[1].l, -e[1].p))))

    def to_dict(self) -> dict:
        return asdict(self)


class Segnn:
    def __init__(self, config: SegnnConfig = SegnnConfig()):
        self.config = config
        H = config.hidden_layout
        self.hidden = H
        self.gated = gate_input_layout(H)
        self.attrs = IrrepsLayout.spherical_harmonics(config.attr_lmax)
        self.input_layout = IrrepsLayout(((1, SCALAR), (3, VECTOR)))
        self.message_in = H + H + IrrepsLayout(((1, SCALAR),))
        self.update_in = H + H
        self.tp_embed = TensorProductMap(self.input_layout, self.input_layout, self.gated)
        self.tp_m1 = TensorProductMap(self.message_in, self.attrs, self.gated)
        self.tp_m2 = TensorProductMap(H, self.attrs, H)
        self.tp_u1 = TensorProductMap(self.update_in, self.attrs, self.gated)
        self.tp_u2 = TensorProductMap(H, self.attrs, H)
        self.tp_out = TensorProductMap(H, self.attrs, IrrepsLayout(((1, VECTOR),)))

    # -- parameters ---------------------------------------------------------

    def layer_names(self) -> list[str]:
        return [f"{s}.{i}" for s in STAGES for i in range(self.config.layers_per_scale)]

    @cached_property
    def param_shapes(self) -> list[tuple[str, int]]:
        shapes = [("embed.tp", self.tp_embed.weight_count), ("embed.norm", norm_param_count(self.gated))]
        for name in self.layer_names():
            shapes += [
                (f"{name}.m1", self.tp_m1.weight_count),
                (f"{name}.m2", self.tp_m2.weight_count),
                (f"{name}.u1", self.tp_u1.weight_count),
                (f"{name}.u2", self.tp_u2.weight_count),
                (f"{name}.norm", norm_param_count(self.hidden)),
            ]
        shapes.append(("out.tp", self.tp_out.weight_count))
        return shapes

    def init_params(self, seed: int = 0) -> NetworkParameters:
        rng = np.random.default_rng(seed)
        tps = {"m1": self.tp_m1, "m2": self.tp_m2, "u1": self.tp_u1, "u2": self.tp_u2}
        named = [("embed.tp", self.tp_embed.init_weights(rng)), ("embed.norm", norm_init(self.gated))]
        for name in self.layer_names():
            for key in ("m1", "m2", "u1", "u2"):
                named.append((f"{name}.{key}", tps[key].init_weights(rng)))
            named.append((f"{name}.norm", norm_init(self.hidden)))
        named.append(("out.tp", self.tp_out.init_weights(rng)))
        return NetworkParameters.from_arrays(named)

    # -- building blocks ----------------------------------------------------

    def message(self, P, prefix: str, f_i, f_j, sq_dist, a_ij):
        """phi_m on a batch of edges; inputs are row-aligned arrays or Vars."""
        z = ad.concat([f_i, f_j, np.asarray(sq_dist).reshape(-1, 1) / self.config.length_scale**2], axis=1)
        h = gate_apply(tp_apply(self.tp_m1, z, a_ij, P(f"{prefix}.m1")), self.gated)
        return tp_apply(self.tp_m2, h, a_ij, P(f"{prefix}.m2"))

    def update(self, P, prefix: str, f_i, aggregated, a_i, residual: bool = True):
        """phi_f plus the residual connection (before normalisation)."""
        u = ad.concat([f_i, aggregated], axis=1)
        h = gate_apply(tp_apply(self.tp_u1, u, a_i, P(f"{prefix}.u1")), self.gated)
        out = tp_apply(self.tp_u2, h, a_i, P(f"{prefix}.u2"))
        return ad.add(f_i, out) if residual else out

    def layer(self, P, prefix: str, h, lv: LevelInputs, residual: bool, graph_ids=None):
        f_i = ad.sparse_apply(lv.gather_tgt, h)
        f_j = ad.sparse_apply(lv.gather_src, h)
        m = self.message(P, prefix, f_i, f_j, lv.sq_dist, lv.edge_attr)
        agg = ad.sparse_apply(lv.aggregate, m)
        h = self.update(P, prefix, h, agg, lv.node_attr, residual)
        return graph_norm_apply(h, self.hidden, graph_ids, P(f"{prefix}.norm"))

    def embed_inputs(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        vecs = X.reshape(-1, 3, 3)[:, :, CARTESIAN_TO_L1] / self.config.length_scale
        return np.concatenate([np.ones((len(X), 1)), vecs.reshape(-1, 9)], axis=1)

    # -- forward ------------------------------------------------------------

    def forward(self, P, graph: GraphInputs, X: np.ndarray):
        """Velocity (n, 3) as an array or Var, depending on what ``P`` returns."""
        if len(graph.levels) != 3:
            raise LayoutMismatchError("expected a three-level hierarchy")
        if np.shape(X) != (graph.n, 9):
            raise LayoutMismatchError(f"descriptors have shape {np.shape(X)}, expected ({graph.n}, 9)")
        L = self.config.layers_per_scale
        lv = graph.levels
        x_in = self.embed_inputs(X)
        h = tp_apply(self.tp_embed, x_in, x_in, P("embed.tp"))
        h = gate_apply(graph_norm_apply(h, self.gated, None, P("embed.norm")), self.gated)

        skips = {}
        for stage in STAGES:
            level = STAGE_LEVEL[stage]
            if stage in ("down1", "bottom"):
                h = ad.sparse_apply(lv[level - 1].pool, h)
            elif stage in ("up1", "up0"):
                h = ad.add(ad.sparse_apply(lv[level].unpool, h), skips[level])
            for i in range(L):
                h = self.layer(P, f"{stage}.{i}", h, lv[level], residual=i > 0)
            if stage in ("down0", "down1"):
                skips[level] = h

        out = tp_apply(self.tp_out, h, lv[0].node_attr, P("out.tp"))
        perm = np.eye(3)[:, L1_TO_CARTESIAN] * self.config.velocity_scale
        return ad.dense(out, perm)


def param_reader(params: NetworkParameters, tape: Tape | None = None):
    """Return ``(P, leaf)``: ``P(name)`` yields a slice (a Var when taped)."""
    if tape is None:
        return (lambda name: params[name]), None
    leaf = tape.leaf(params.vector)

    def P(name):
        start, stop, shape = params.entry(name)
        return ad.take_slice(leaf, start, stop, shape)

    return P, leaf


_MODELS: dict[SegnnConfig, Segnn] = {}


def get_model(config: SegnnConfig) -> Segnn:
    if config not in _MODELS:
        _MODELS[config] = Segnn(config)
    return _MODELS[config]


def segnn_forward(
    mesh: TetMesh,
    hierarchy: GraphHierarchy,
    X: DescriptorMatrix | np.ndarray,
    params: NetworkParameters,
    config: SegnnConfig = SegnnConfig(),
    graph: GraphInputs | None = None,
) -> np.ndarray:
    model = get_model(config)
    rows = X.rows if isinstance(X, DescriptorMatrix) else np.asarray(X)
    if graph is None:
        graph = prepare_graph(mesh, hierarchy, config.attr_lmax)
    P, _ = param_reader(params)
    return np.asarray(model.forward(P, graph, rows))


# -- standalone wrappers around single building blocks -----------------------


def segnn_message(model: Segnn, params: NetworkParameters, prefix: str, f_i: SteerableTensor,
                  f_j: SteerableTensor, sq_dist, a_ij: SteerableTensor) -> SteerableTensor:
    for t in (f_i, f_j):
        if t.layout != model.hidden:
            raise LayoutMismatchError("features do not match the hidden layout")
    if a_ij.layout != model.attrs:
        raise LayoutMismatchError("edge attributes do not match the attribute layout")
    fi, fj = np.atleast_2d(f_i.coefficients), np.atleast_2d(f_j.coefficients)
    m = model.message(lambda n: params[n], prefix, fi, fj, np.atleast_1d(sq_dist), np.atleast_2d(a_ij.coefficients))
    return SteerableTensor(model.hidden, m.reshape(f_i.coefficients.shape))


def segnn_update(model: Segnn, params: NetworkParameters, prefix: str, f_i: SteerableTensor,
                 aggregated: SteerableTensor, a_i: SteerableTensor, residual: bool = True) -> SteerableTensor:
    for t in (f_i, aggregated):
        if t.layout != model.hidden:
            raise LayoutMismatchError("features do not match the hidden layout")
    if a_i.layout != model.attrs:
        raise LayoutMismatchError("vertex attributes do not match the attribute layout")
    out = model.update(lambda n: params[n], prefix, np.atleast_2d(f_i.coefficients),
                       np.atleast_2d(aggregated.coefficients), np.atleast_2d(a_i.coefficients), residual)
    return SteerableTensor(model.hidden, out.reshape(f_i.coefficients.shape))
