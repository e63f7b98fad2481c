import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arteryflow.mesh import (INLET, INTERIOR, OUTLET, WALL, MeshFormatError, MissingRoleError, TetMesh,
                             load_mesh, read_vtk, save_mesh)
from arteryflow.synthetic import TubeSpec, gen_tube, tube_counts


def single_tet():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0.25, 0.25, 0.25]], dtype=float)
    return TetMesh(pos, [[0, 1, 2, 3]], [INLET, WALL, OUTLET, WALL, INTERIOR])


def test_roundtrip_bit_exact():
    m = single_tet()
    back = load_mesh(save_mesh(m))
    assert np.array_equal(back.positions, m.positions)
    assert np.array_equal(back.tets, m.tets)
    assert np.array_equal(back.roles, m.roles)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=15, max_size=15))
def test_roundtrip_arbitrary_floats(values):
    m = single_tet()
    pos = np.array(values).reshape(5, 3)
    m2 = TetMesh(pos, m.tets, m.roles)
    field = pos[::-1] * 0.37
    back, vectors = read_vtk(save_mesh(m2, field))
    assert np.array_equal(back.positions, pos)
    assert np.array_equal(vectors["velocity"], field)


def test_vectors_format():
    m = single_tet()
    text = save_mesh(m, np.tile([1.0, 2.0, 3.0], (5, 1)))
    block = text.split("VECTORS velocity double\n")[1].splitlines()
    assert block[:5] == ["1 2 3"] * 5
    zero = save_mesh(m, np.zeros((5, 3))).split("VECTORS velocity double\n")[1].splitlines()
    assert all(np.array(line.split(), dtype=float).tolist() == [0.0, 0.0, 0.0] for line in zero)


def test_header_and_cell_type():
    text = save_mesh(single_tet())
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "CELL_TYPES 1\n10\n" in text
    assert "SCALARS role int 1" in text


def test_field_length_mismatch():
    with pytest.raises(ValueError):
        save_mesh(single_tet(), np.zeros((4, 3)))


def test_triangle_cell_rejected_with_line():
    text = save_mesh(single_tet()).replace("4 0 1 2 3", "3 0 1 2")
    with pytest.raises(MeshFormatError, match="line"):
        load_mesh(text)


def test_wrong_cell_type_rejected():
    text = save_mesh(single_tet()).replace("CELL_TYPES 1\n10", "CELL_TYPES 1\n5")
    with pytest.raises(MeshFormatError, match="cell type"):
        load_mesh(text)


def test_missing_role_array():
    text = save_mesh(single_tet())
    text = text.split("POINT_DATA")[0]
    with pytest.raises(MeshFormatError, match="role"):
        load_mesh(text)


def test_index_out_of_range():
    text = save_mesh(single_tet()).replace("4 0 1 2 3", "4 0 1 2 9")
    with pytest.raises(MeshFormatError, match="out of range"):
        load_mesh(text)


def test_malformed_number_names_line():
    text = save_mesh(single_tet()).replace("0.25 0.25 0.25", "0.25 abc 0.25")
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(text)
    assert exc.value.line == 10


def test_invariants_enforced():
    with pytest.raises(MissingRoleError):
        TetMesh(np.zeros((4, 3)), [[0, 1, 2, 3]], [WALL, WALL, OUTLET, WALL])
    with pytest.raises(ValueError):
        TetMesh(np.zeros((4, 3)), [[0, 1, 1, 3]], [INLET, WALL, OUTLET, WALL])
    with pytest.raises(ValueError):
        TetMesh(np.full((4, 3), np.nan), [[0, 1, 2, 3]], [INLET, WALL, OUTLET, WALL])


def test_tube_vertex_count_from_file():
    spec = TubeSpec(radial_rings=2, axial_segments=4)
    m = load_mesh(save_mesh(gen_tube(spec)))
    assert m.n_vertices == tube_counts(spec)[0]
