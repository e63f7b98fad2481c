import json

import numpy as np
import pytest

from arteryflow.mesh import INLET, INTERIOR, OUTLET, WALL
from arteryflow.so3 import Rotation
from arteryflow.synthetic import (SpecRanges, TubeSpec, analytic_flow, divergence, gen_dataset, gen_tube,
                                  load_dataset, rigidly_moved, save_dataset, tube_counts)


def count_by_hand(J, A):
    # centre + 6j vertices on ring j, per plane; 6 j^2 triangles per disk, 3 tets per prism
    per_plane = 1 + sum(6 * j for j in range(1, J + 1))
    return (A + 1) * per_plane, A * 3 * sum(6 * (2 * j - 1) for j in range(1, J + 1))


@pytest.mark.parametrize("J,A,bend", [(2, 4, 0.0), (3, 8, 0.0), (4, 6, 1.2), (2, 5, 0.3)])
def test_counts_and_positive_volumes(J, A, bend):
    spec = TubeSpec(radial_rings=J, axial_segments=A, bend_angle=bend)
    mesh = gen_tube(spec)
    assert (mesh.n_vertices, len(mesh.tets)) == tube_counts(spec) == count_by_hand(J, A)
    assert (mesh.signed_volumes() > 0).all()


def test_tet_volumes_fill_the_tube():
    spec = TubeSpec(jitter=0.0, radial_rings=4)
    vol = gen_tube(spec).signed_volumes().sum()
    # inscribed 24-gon-ish hex disk: polygon area times length
    J = spec.radial_rings
    area = 0.5 * 6 * J * spec.radius**2 * np.sin(2 * np.pi / (6 * J))
    assert vol == pytest.approx(area * spec.length, rel=1e-12)


def test_roles_partition():
    mesh = gen_tube(TubeSpec(bend_angle=0.5))
    counts = np.bincount(mesh.roles, minlength=4)
    assert counts.sum() == mesh.n_vertices
    assert all(c > 0 for c in counts)
    assert set(np.unique(mesh.roles)) == {INLET, WALL, OUTLET, INTERIOR}


def test_straight_wall_at_radius():
    spec = TubeSpec(radius=1.7)
    mesh = gen_tube(spec)
    p = mesh.positions[mesh.roles == WALL]
    np.testing.assert_allclose(np.hypot(p[:, 0], p[:, 1]), 1.7, atol=1e-9)


def test_degenerate_specs():
    for bad in (TubeSpec(axial_segments=3), TubeSpec(radial_rings=1), TubeSpec(radius=-1.0),
                TubeSpec(bend_angle=6.0, length=5.0, radius=1.5)):
        with pytest.raises(ValueError):
            gen_tube(bad)


def test_flow_examples():
    spec = TubeSpec(jitter=0.0, radial_rings=2)
    mesh = gen_tube(spec)
    v = analytic_flow(mesh, spec)
    p = mesh.positions
    r = np.hypot(p[:, 0], p[:, 1])
    axis = r < 1e-12
    np.testing.assert_allclose(v[axis], [[0.0, 0.0, spec.v_max]] * int(axis.sum()), atol=1e-12)
    assert not v[mesh.roles == WALL].any()
    half = np.abs(r - spec.radius / 2) < 1e-12
    assert half.any()
    np.testing.assert_allclose(np.linalg.norm(v[half], axis=1), 0.75 * spec.v_max, rtol=1e-12)


def test_flow_on_bent_tube_follows_tangent():
    spec = TubeSpec(bend_angle=1.0)
    mesh = gen_tube(spec)
    v = analytic_flow(mesh, spec)
    assert not v[mesh.roles == WALL].any()
    assert np.linalg.norm(v, axis=1).max() <= spec.v_max
    inlet = mesh.roles == INLET
    # inlet plane sits at phi = 0, tangent +z
    assert np.abs(v[inlet][:, :2]).max() < 1e-12


def test_flow_mismatch():
    mesh = gen_tube(TubeSpec(seed=1))
    with pytest.raises(ValueError):
        analytic_flow(mesh, TubeSpec(seed=2))
    with pytest.raises(ValueError):
        analytic_flow(mesh, TubeSpec(radial_rings=2))


def test_divergence_free_straight():
    spec = TubeSpec()
    mesh = gen_tube(spec)
    div = divergence(mesh, analytic_flow(mesh, spec))
    interior = mesh.roles == INTERIOR
    assert np.abs(div[interior]).max() < 1e-6 * spec.v_max / spec.radius


def test_divergence_oracle_linear_field():
    mesh = gen_tube(TubeSpec(bend_angle=0.6))
    A = np.array([[1.0, 2.0, 0.5], [0.0, -3.0, 1.0], [4.0, 0.0, 0.25]])
    div = divergence(mesh, mesh.positions @ A.T)
    np.testing.assert_allclose(div, np.trace(A), rtol=1e-9)


def test_dataset_determinism_and_count():
    a = gen_dataset(3, seed=5, random_rotation=True)
    b = gen_dataset(3, seed=5, random_rotation=True)
    for x, y in zip(a, b):
        assert np.array_equal(x.mesh.positions, y.mesh.positions)
        assert np.array_equal(x.velocity, y.velocity)
    assert len(gen_dataset(1, seed=0)) == 1
    with pytest.raises(ValueError):
        gen_dataset(2, SpecRanges(length=(10.0, 9.0)))
    with pytest.raises(ValueError):
        gen_dataset(0)


def test_specs_within_ranges():
    ranges = SpecRanges(length=(10.0, 11.0), radius=(1.0, 1.1), bend_angle=(0.0, 0.2))
    for s in gen_dataset(8, ranges, seed=2):
        assert 10.0 <= s.spec.length <= 11.0 and 1.0 <= s.spec.radius <= 1.1 and 0 <= s.spec.bend_angle <= 0.2


def test_rotated_sample_recomputes_flow():
    for s in gen_dataset(4, SpecRanges(bend_angle=(0.0, 0.0)), seed=9, random_rotation=True):
        np.testing.assert_allclose(analytic_flow(s.mesh, s.spec), s.velocity, atol=1e-9)
        np.testing.assert_allclose(s.mesh.positions, gen_tube(s.spec).positions @ s.rotation.T + s.translation,
                                   atol=1e-9)


def test_rigidly_moved_pairs(rng):
    s = gen_dataset(1, seed=3)[0]
    R = Rotation.random(rng).matrix
    m = rigidly_moved(s, R, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(m.velocity, s.velocity @ R.T, atol=1e-12)
    np.testing.assert_allclose(m.rotation, R)


def test_dataset_roundtrip(tmp_path):
    samples = gen_dataset(2, seed=1, random_rotation=True)
    save_dataset(samples, tmp_path)
    back, manifest = load_dataset(tmp_path)
    assert len(back) == 2
    for a, b in zip(samples, back):
        assert np.array_equal(a.mesh.positions, b.mesh.positions)
        assert np.array_equal(a.velocity, b.velocity)
        assert a.spec == b.spec
        np.testing.assert_array_equal(a.rotation, b.rotation)
    assert json.loads((tmp_path / "manifest.json").read_text())["samples"][0]["rotation"] == samples[0].rotation.tolist()
