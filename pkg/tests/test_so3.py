import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arteryflow.so3 import (CARTESIAN_TO_L1, Irrep, IrrepsLayout, Rotation, SteerableTensor,
                            UnsupportedDegreeError, clebsch_gordan, l1_to_vector, layout_wigner_d,
                            real_spherical_harmonics, rotate_steerable, spherical_harmonics,
                            vector_to_l1, wigner_d)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_irrep_dimension_and_parse():
    assert Irrep(3, 1).dim == 7
    assert Irrep.parse("2e") == Irrep(2, 1)
    layout = IrrepsLayout.parse("16x0e + 8x1o + 4x2e")
    assert layout.dim == 16 + 24 + 20
    assert layout.num_scalars == 16


def test_sh_layout_parities():
    layout = IrrepsLayout.spherical_harmonics(3)
    assert [ir.p for _, ir in layout] == [(-1) ** l for l in range(4)]


def test_layout_rejects_bad_lengths():
    with pytest.raises(ValueError):
        SteerableTensor(IrrepsLayout.parse("1x1o"), np.zeros(4))


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Rotation(np.eye(3) * 1.001)


def test_sh_degree_zero_is_one(rng):
    for _ in range(5):
        y = real_spherical_harmonics(unit(rng.normal(size=3)), 0)
        assert y.coefficients.tolist() == [1.0]


def test_sh_l1_norm_on_z_axis():
    y = real_spherical_harmonics([0.0, 0.0, 1.0], 1).coefficients
    assert np.linalg.norm(y[1:4]) == pytest.approx(np.sqrt(3), abs=1e-14)


def test_sh_component_normalisation_monte_carlo():
    # mean square of every component over the sphere is 1
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200_000, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    ms = (spherical_harmonics(x, 3) ** 2).mean(axis=0)
    assert np.abs(ms - 1).max() < 0.03


def test_sh_block_norms_exact(rng):
    x = rng.normal(size=(50, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    Y = spherical_harmonics(x, 8)
    for l in range(9):
        block = Y[:, l * l : (l + 1) ** 2]
        np.testing.assert_allclose((block**2).sum(axis=1), 2 * l + 1, rtol=1e-11)


def test_sh_preconditions():
    with pytest.raises(ValueError):
        real_spherical_harmonics([1.0, 1.0, 0.0], 2)
    with pytest.raises(UnsupportedDegreeError):
        real_spherical_harmonics([1.0, 0.0, 0.0], 9)


def test_sh_rotation_property(rng):
    layout = IrrepsLayout.spherical_harmonics(4)
    worst = 0.0
    for _ in range(100):
        R = Rotation.random(rng)
        x = unit(rng.normal(size=3))
        lhs = spherical_harmonics(R.matrix @ x, 4)
        rhs = layout_wigner_d(layout, R) @ spherical_harmonics(x, 4)
        worst = max(worst, np.abs(lhs - rhs).max())
    assert worst < 1e-10


def test_wigner_l0_and_identity(rng):
    R = Rotation.random(rng)
    assert wigner_d(0, R).tolist() == [[1.0]]
    for l in range(5):
        np.testing.assert_allclose(wigner_d(l, Rotation.identity()), np.eye(2 * l + 1), atol=1e-12)


def test_wigner_l1_is_permuted_matrix(rng):
    R = Rotation.random(rng)
    P = np.eye(3)[CARTESIAN_TO_L1]
    np.testing.assert_allclose(wigner_d(1, R), P @ R.matrix @ P.T, atol=1e-15)
    # and it agrees with the action on sampled directions
    for _ in range(10):
        x = unit(rng.normal(size=3))
        Y = spherical_harmonics(np.array([x, R.matrix @ x]), 1)[:, 1:]
        np.testing.assert_allclose(Y[1], wigner_d(1, R) @ Y[0], atol=1e-12)


def test_wigner_homomorphism_and_orthogonality(rng):
    worst = 0.0
    for _ in range(100):
        r1, r2 = Rotation.random(rng), Rotation.random(rng)
        for l in range(4):
            D = wigner_d(l, r1 @ r2)
            worst = max(worst, np.abs(D - wigner_d(l, r1) @ wigner_d(l, r2)).max())
            worst = max(worst, np.abs(D.T @ D - np.eye(2 * l + 1)).max())
    assert worst < 1e-10


def test_wigner_degree_limit():
    with pytest.raises(UnsupportedDegreeError):
        wigner_d(9, Rotation.identity())


def test_cg_examples():
    assert clebsch_gordan(0, 0, 0).tolist() == [[[1.0]]]
    assert not clebsch_gordan(1, 2, 4).any()
    C = clebsch_gordan(1, 1, 0)[:, :, 0]
    np.testing.assert_allclose(np.abs(C), np.eye(3) / np.sqrt(3), atol=1e-14)


def test_cg_normalisation():
    for l1 in range(4):
        for l2 in range(4):
            for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                assert (clebsch_gordan(l1, l2, l3) ** 2).sum() == pytest.approx(2 * l3 + 1, rel=1e-12)


def test_cg_intertwining(rng):
    worst = 0.0
    for _ in range(20):
        R = Rotation.random(rng)
        D = [wigner_d(l, R) for l in range(4)]
        for l1 in range(4):
            for l2 in range(4):
                for l3 in range(abs(l1 - l2), min(l1 + l2, 3) + 1):
                    C = clebsch_gordan(l1, l2, l3)
                    lhs = np.einsum("abc,ai,bj->ijc", C, D[l1], D[l2])
                    rhs = np.einsum("ijk,ck->ijc", C, D[l3])
                    worst = max(worst, np.abs(lhs - rhs).max())
    assert worst < 1e-9


def test_cg_read_only_and_degree_limit():
    with pytest.raises(ValueError):
        clebsch_gordan(1, 1, 2)[0, 0, 0] = 1.0
    with pytest.raises(UnsupportedDegreeError):
        clebsch_gordan(9, 0, 9)


def test_rotate_steerable_examples(rng):
    R = Rotation.random(rng)
    scalars = SteerableTensor(IrrepsLayout.parse("4x0e"), rng.normal(size=4))
    assert np.array_equal(rotate_steerable(scalars, R).coefficients, scalars.coefficients)
    v = rng.normal(size=3)
    t = SteerableTensor(IrrepsLayout.parse("1x1o"), vector_to_l1(v))
    np.testing.assert_allclose(l1_to_vector(rotate_steerable(t, R).coefficients), R.matrix @ v, atol=1e-14)
    mixed = SteerableTensor(IrrepsLayout.parse("2x0e+3x1o+2x2e"), rng.normal(size=2 + 9 + 10))
    np.testing.assert_allclose(rotate_steerable(mixed, Rotation.identity()).coefficients, mixed.coefficients, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotate_steerable_inverse_roundtrip(seed):
    rng = np.random.default_rng(seed)
    layout = IrrepsLayout.parse("2x0e+2x1o+1x2e+1x3o")
    t = SteerableTensor(layout, rng.normal(size=(4, layout.dim)))
    R = Rotation.random(rng)
    back = rotate_steerable(rotate_steerable(t, R), R.inverse())
    assert np.abs(back.coefficients - t.coefficients).max() < 1e-12
