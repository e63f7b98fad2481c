"""Synthetic artery tubes with an analytic Poiseuille velocity field.

Tubes are structured tetrahedralisations of a straight or circular-arc
cylinder.  Each cross-section is a hexagonal disk pattern (centre plus rings
of ``6 j`` vertices), extruded along the centreline and split into three
tetrahedra per prism.  A seeded jitter perturbs the cross-section pattern and
the plane spacing so that no two distances in the mesh coincide; without it
nearest-point and k-NN ties would be resolved by floating-point noise and
symmetry tests would be meaningless.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .mesh import INLET, INTERIOR, OUTLET, WALL, TetMesh, read_vtk, save_mesh
from .so3 import Rotation


@dataclass(frozen=True)
class TubeSpec:
    length: float = 12.0  # mm
    radius: float = 1.5  # mm
    axial_segments: int = 8
    radial_rings: int = 3
    bend_angle: float = 0.0  # rad, 0 = straight
    v_max: float = 100.0  # mm/s
    seed: int = 0
    jitter: float = 0.05  # fraction of local spacing; 0 gives the regular mesh

    def validate(self) -> None:
        if self.length <= 0 or self.radius <= 0 or self.v_max <= 0:
            raise ValueError("length, radius and v_max must be positive")
        if self.axial_segments < 4:
            raise ValueError("axial_segments must be >= 4")
        if self.radial_rings < 2:
            raise ValueError("radial_rings must be >= 2")
        if not 0 <= self.bend_angle < 2 * math.pi:
            raise ValueError("bend_angle must lie in [0, 2 pi)")
        if self.bend_angle > 0 and self.length / self.bend_angle <= self.radius:
            raise ValueError("bend radius must exceed tube radius")
        if not 0 <= self.jitter < 0.2:
            raise ValueError("jitter must lie in [0, 0.2)")


def tube_counts(spec: TubeSpec) -> tuple[int, int]:
    """Closed-form ``(n_vertices, n_tets)`` of :func:`gen_tube`."""
    J, A = spec.radial_rings, spec.axial_segments
    per_plane = 1 + 3 * J * (J + 1)
    return (A + 1) * per_plane, 3 * A * 6 * J * J


def _disk_pattern(J: int):
    """Unjittered ring radii fractions, angles and triangles of the hex disk."""
    ring = [0]
    angle = [0.0]
    frac = [0.0]
    starts = [0]
    for j in range(1, J + 1):
        starts.append(len(ring))
        for i in range(6 * j):
            ring.append(j)
            angle.append(2 * math.pi * i / (6 * j))
            frac.append(j / J)
    tris = []
    for i in range(6):
        tris.append((0, 1 + i, 1 + (i + 1) % 6))
    for j in range(2, J + 1):
        n0, n1 = 6 * (j - 1), 6 * j
        s0, s1 = starts[j - 1], starts[j]
        i0 = i1 = 0
        while i0 < n0 or i1 < n1:
            na = 2 * math.pi * (i0 + 1) / n0 if i0 < n0 else math.inf
            nb = 2 * math.pi * (i1 + 1) / n1 if i1 < n1 else math.inf
            if nb <= na:
                tris.append((s0 + i0 % n0, s1 + i1 % n1, s1 + (i1 + 1) % n1))
                i1 += 1
            else:
                tris.append((s0 + i0 % n0, s1 + i1 % n1, s0 + (i0 + 1) % n0))
                i0 += 1
    return np.array(ring), np.array(angle), np.array(frac), np.array(tris, dtype=np.int64)


@dataclass(frozen=True)
class _TubeGeometry:
    local: np.ndarray  # (n, 2) cross-section coordinates
    arc: np.ndarray  # (n,) arc length of each vertex's plane
    on_rim: np.ndarray  # (n,) bool, outer ring
    positions: np.ndarray
    tangents: np.ndarray
    tets: np.ndarray
    roles: np.ndarray


def _frame(spec: TubeSpec, s: np.ndarray):
    if spec.bend_angle == 0:
        zero, one = np.zeros_like(s), np.ones_like(s)
        c = np.stack([zero, zero, s], axis=1)
        t = np.stack([zero, zero, one], axis=1)
        n1 = np.stack([one, zero, zero], axis=1)
    else:
        rc = spec.length / spec.bend_angle
        phi = s / rc
        zero = np.zeros_like(s)
        c = np.stack([rc * (1 - np.cos(phi)), zero, rc * np.sin(phi)], axis=1)
        t = np.stack([np.sin(phi), zero, np.cos(phi)], axis=1)
        n1 = np.stack([np.cos(phi), zero, -np.sin(phi)], axis=1)
    n2 = np.broadcast_to(np.array([0.0, 1.0, 0.0]), c.shape)
    return c, t, n1, n2


def _geometry(spec: TubeSpec) -> _TubeGeometry:
    spec.validate()
    J, A = spec.radial_rings, spec.axial_segments
    rng = np.random.default_rng(spec.seed)
    ring, angle, frac, tris = _disk_pattern(J)
    P = len(ring)

    # jittered cross-section, shared by every plane
    dr = spec.radius / J
    radius = frac * spec.radius
    inner = ring < J
    u = radius * np.cos(angle)
    w = radius * np.sin(angle)
    if spec.jitter > 0:
        rho = spec.jitter * dr * np.sqrt(rng.random(P))
        theta = 2 * math.pi * rng.random(P)
        u = u + np.where(inner, rho * np.cos(theta), 0.0)
        w = w + np.where(inner, rho * np.sin(theta), 0.0)
        dtheta = spec.jitter * (2 * math.pi / (6 * J)) * (2 * rng.random(P) - 1)
        rim_angle = angle + dtheta
        u = np.where(inner, u, spec.radius * np.cos(rim_angle))
        w = np.where(inner, w, spec.radius * np.sin(rim_angle))

    h = spec.length / A
    s_planes = np.arange(A + 1) * h
    if spec.jitter > 0:
        s_planes[1:-1] += spec.jitter * h * (2 * rng.random(A - 1) - 1)
    s_planes[-1] = spec.length

    local = np.tile(np.stack([u, w], axis=1), (A + 1, 1))
    arc = np.repeat(s_planes, P)
    on_rim = np.tile(~inner, A + 1)
    c, t, n1, n2 = _frame(spec, arc)
    positions = c + local[:, :1] * n1 + local[:, 1:] * n2

    tets = []
    for k in range(A):
        for tri in tris:
            a, b, cc = sorted(int(x) + k * P for x in tri)
            a2, b2, c2 = a + P, b + P, cc + P
            tets.extend([(a, b, cc, c2), (a, b, b2, c2), (a, a2, b2, c2)])
    tets = np.array(tets, dtype=np.int64)
    p = positions[tets]
    vol = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0])
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]

    roles = np.full(len(positions), INTERIOR, dtype=np.int64)
    roles[on_rim] = WALL
    roles[:P] = INLET
    roles[-P:] = OUTLET
    return _TubeGeometry(local, arc, on_rim, positions, t, tets, roles)


def gen_tube(spec: TubeSpec) -> TetMesh:
    g = _geometry(spec)
    mesh = TetMesh(g.positions, g.tets, g.roles)
    if (mesh.signed_volumes() <= 0).any():
        raise ValueError("degenerate tube: inverted tetrahedra")
    return mesh


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid ``(R, t)`` minimising ``|R src + t - dst|``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def analytic_flow(mesh: TetMesh, spec: TubeSpec) -> np.ndarray:
    """Parabolic profile ``v_max (1 - r^2/R^2)`` along the local centreline tangent.

    Works on any rigid motion of ``gen_tube(spec)``: the motion is recovered
    by aligning the canonical vertices with ``mesh``.
    """
    g = _geometry(spec)
    if mesh.n_vertices != len(g.positions) or not np.array_equal(mesh.roles, g.roles):
        raise ValueError("mesh was not generated from this TubeSpec")
    R, t = _kabsch(g.positions, mesh.positions)
    resid = np.abs(g.positions @ R.T + t - mesh.positions).max()
    if resid > 1e-6 * max(spec.length, spec.radius):
        raise ValueError(f"mesh is not a rigid motion of the TubeSpec tube (residual {resid:.3g} mm)")
    r2 = (g.local**2).sum(axis=1) / spec.radius**2
    speed = spec.v_max * (1.0 - r2)
    speed[g.on_rim] = 0.0
    return (speed[:, None] * g.tangents) @ R.T


def divergence(mesh: TetMesh, field: np.ndarray) -> np.ndarray:
    """Vertex divergence: volume-weighted mean of per-tet linear-interpolant divergences."""
    p = mesh.positions[mesh.tets]
    v = np.asarray(field)[mesh.tets]
    E = p[:, 1:] - p[:, :1]  # (m, 3, 3) edge rows
    dV = v[:, 1:] - v[:, :1]  # (m, 3, 3)
    G = np.linalg.solve(E, dV)  # G[i, j] = d v_j / d x_i
    div = np.trace(G, axis1=1, axis2=2)
    vol = np.abs(mesh.signed_volumes())
    num = np.zeros(mesh.n_vertices)
    den = np.zeros(mesh.n_vertices)
    for c in range(4):
        np.add.at(num, mesh.tets[:, c], vol * div)
        np.add.at(den, mesh.tets[:, c], vol)
    return num / np.where(den > 0, den, 1.0)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class SpecRanges:
    """Uniform sampling ranges (inclusive) for :func:`gen_dataset`."""

    length: tuple[float, float] = (9.0, 15.0)
    radius: tuple[float, float] = (1.2, 2.0)
    bend_angle: tuple[float, float] = (0.0, math.pi / 3)
    axial_segments: tuple[int, int] = (8, 8)
    radial_rings: tuple[int, int] = (3, 3)
    v_max: tuple[float, float] = (100.0, 100.0)

    def validate(self) -> None:
        for name, (lo, hi) in asdict(self).items():
            if hi < lo:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")


@dataclass(frozen=True)
class Sample:
    mesh: TetMesh
    velocity: np.ndarray
    spec: TubeSpec
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))


def sample_specs(count: int, ranges: SpecRanges, seed: int) -> list[TubeSpec]:
    if count < 1:
        raise ValueError("count must be >= 1")
    ranges.validate()
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        specs.append(
            TubeSpec(
                length=float(rng.uniform(*ranges.length)),
                radius=float(rng.uniform(*ranges.radius)),
                bend_angle=float(rng.uniform(*ranges.bend_angle)),
                axial_segments=int(rng.integers(ranges.axial_segments[0], ranges.axial_segments[1] + 1)),
                radial_rings=int(rng.integers(ranges.radial_rings[0], ranges.radial_rings[1] + 1)),
                v_max=float(rng.uniform(*ranges.v_max)),
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return specs


def rigidly_moved(sample: Sample, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> Sample:
    """Apply ``p -> R p + t`` to the mesh and ``v -> R v`` to the field."""
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    return replace(
        sample,
        mesh=sample.mesh.transformed(R, t),
        velocity=sample.velocity @ R.T,
        rotation=R @ sample.rotation,
        translation=R @ sample.translation + t,
    )


def gen_dataset(
    count: int,
    ranges: SpecRanges | None = None,
    seed: int = 0,
    random_rotation: bool = False,
    translation_scale: float = 10.0,
) -> list[Sample]:
    ranges = ranges or SpecRanges()
    specs = sample_specs(count, ranges, seed)
    motion_rng = np.random.default_rng([seed, 1])
    out = []
    for spec in specs:
        mesh = gen_tube(spec)
        sample = Sample(mesh, analytic_flow(mesh, spec), spec)
        if random_rotation:
            R = Rotation.random(motion_rng).matrix
            t = motion_rng.uniform(-translation_scale, translation_scale, 3)
            sample = rigidly_moved(sample, R, t)
        out.append(sample)
    return out


MANIFEST = "manifest.json"


def save_dataset(samples: list[Sample], directory: str | Path, extra: dict | None = None) -> Path:
    """Write ``sample_###.vtk`` files plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        name = f"sample_{i:03d}.vtk"
        (directory / name).write_text(save_mesh(s.mesh, s.velocity, title=f"arteryflow sample {i}"))
        entries.append(
            {
                "file": name,
                "spec": asdict(s.spec),
                "rotation": s.rotation.tolist(),
                "translation": s.translation.tolist(),
                "n_vertices": s.mesh.n_vertices,
            }
        )
    manifest = {"format_version": 1, "samples": entries}
    manifest.update(extra or {})
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(directory: str | Path) -> tuple[list[Sample], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    samples = []
    for entry in manifest["samples"]:
        mesh, vectors = read_vtk((directory / entry["file"]).read_text())
        if "velocity" not in vectors:
            raise ValueError(f"{entry['file']}: missing velocity array")
        samples.append(
            Sample(
                mesh,
                vectors["velocity"],
                TubeSpec(**entry["spec"]),
                np.array(entry["rotation"]),
                np.array(entry["translation"]),
            )
        )
    return samples, manifest
