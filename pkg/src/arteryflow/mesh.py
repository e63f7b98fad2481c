"""Tetrahedral mesh container and VTK legacy ASCII reader/writer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

INLET, WALL, OUTLET, INTERIOR = 0, 1, 2, 3
ROLE_NAMES = {INLET: "inlet", WALL: "wall", OUTLET: "outlet", INTERIOR: "interior"}

VTK_TETRA = 10


class MeshFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingRoleError(ValueError):
    def __init__(self, role: int):
        self.role = ROLE_NAMES[role]
        super().__init__(f"mesh has no vertex with role '{self.role}'")


def require_roles(roles: np.ndarray, needed=(INLET, WALL, OUTLET)) -> None:
    present = set(np.unique(roles).tolist())
    for role in needed:
        if role not in present:
            raise MissingRoleError(role)


@dataclass(frozen=True)
class TetMesh:
    """Vertices (mm), tetrahedra and per-vertex boundary roles.

    Arrays are stored read-only; rigid motions go through :meth:`transformed`.
    """

    positions: np.ndarray
    tets: np.ndarray
    roles: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        tets = np.array(self.tets, dtype=np.int64).reshape(-1, 4)
        roles = np.array(self.roles, dtype=np.int64)
        n = len(pos)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must be an n x 3 array")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        if roles.shape != (n,):
            raise ValueError("need exactly one role per vertex")
        if roles.size and (roles.min() < 0 or roles.max() > 3):
            raise ValueError("roles must be in 0..3")
        if tets.size:
            if tets.min() < 0 or tets.max() >= n:
                raise ValueError("tetrahedron index out of range")
            s = np.sort(tets, axis=1)
            if (s[:, 1:] == s[:, :-1]).any():
                raise ValueError("tetrahedron with repeated vertex")
        require_roles(roles)
        for a in (pos, tets, roles):
            a.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "tets", tets)
        object.__setattr__(self, "roles", roles)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def role_indices(self, role: int) -> np.ndarray:
        return np.flatnonzero(self.roles == role)

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "TetMesh":
        R = np.asarray(rotation, dtype=np.float64)
        return TetMesh(self.positions @ R.T + np.asarray(translation, dtype=np.float64), self.tets, self.roles)

    def signed_volumes(self) -> np.ndarray:
        p = self.positions[self.tets]
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def _fmt(x: float) -> str:
    # shortest round-trip repr, without a trailing ".0"
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def save_mesh(
    mesh: TetMesh,
    field: np.ndarray | None = None,
    extra_vectors: Mapping[str, np.ndarray] | None = None,
    title: str = "arteryflow tetrahedral mesh",
) -> str:
    """Serialise to VTK legacy ASCII; ``field`` becomes VECTORS ``velocity``."""
    n = mesh.n_vertices
    vectors: dict[str, np.ndarray] = {}
    if field is not None:
        vectors["velocity"] = np.asarray(field, dtype=np.float64)
    for name, arr in (extra_vectors or {}).items():
        vectors[name] = np.asarray(arr, dtype=np.float64)
    for name, arr in vectors.items():
        if arr.shape != (n, 3):
            raise ValueError(f"vector array '{name}' has shape {arr.shape}, expected ({n}, 3)")

    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " "), "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {n} double")
    lines.extend(" ".join(_fmt(c) for c in p) for p in mesh.positions)
    m = len(mesh.tets)
    lines.append(f"CELLS {m} {5 * m}")
    lines.extend("4 " + " ".join(str(int(i)) for i in t) for t in mesh.tets)
    lines.append(f"CELL_TYPES {m}")
    lines.extend([str(VTK_TETRA)] * m)
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS role int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(r)) for r in mesh.roles)
    for name, arr in vectors.items():
        lines.append(f"VECTORS {name} double")
        lines.extend(" ".join(_fmt(c) for c in v) for v in arr)
    return "\n".join(lines) + "\n"


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> tuple[int, str]:
        while self.pos < len(self.lines):
            self.pos += 1
            line = self.lines[self.pos - 1].strip()
            if line:
                return self.pos, line
        raise MeshFormatError("unexpected end of file", self.pos)

    def done(self) -> bool:
        return all(not l.strip() for l in self.lines[self.pos:])


def _numbers(line_no: int, line: str, count: int, kind=float) -> list:
    parts = line.split()
    if len(parts) != count:
        raise MeshFormatError(f"expected {count} values, got {len(parts)}", line_no)
    try:
        return [kind(p) for p in parts]
    except ValueError as exc:
        raise MeshFormatError(f"bad number ({exc})", line_no) from None


def read_vtk(content: str | bytes) -> tuple[TetMesh, dict[str, np.ndarray]]:
    """Parse a VTK file into a mesh plus its VECTORS arrays keyed by name."""
    text = content.decode("ascii") if isinstance(content, bytes) else content
    src = _Lines(text)
    no, line = src.next()
    if not line.startswith("# vtk DataFile Version"):
        raise MeshFormatError("missing '# vtk DataFile Version' header", no)
    src.next()  # title
    no, line = src.next()
    if line.upper() != "ASCII":
        raise MeshFormatError("only ASCII files are supported", no)
    no, line = src.next()
    if line.split() != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise MeshFormatError("expected 'DATASET UNSTRUCTURED_GRID'", no)

    positions = cells = cell_types = roles = None
    vectors: dict[str, np.ndarray] = {}
    n_point_data = None
    while not src.done():
        no, line = src.next()
        head = line.split()
        key = head[0].upper()
        if key == "POINTS":
            if len(head) != 3:
                raise MeshFormatError("malformed POINTS header", no)
            n = int(head[1])
            positions = np.array([_numbers(*src.next(), 3) for _ in range(n)], dtype=np.float64).reshape(n, 3)
        elif key == "CELLS":
            m = int(head[1])
            cells = []
            for _ in range(m):
                cno, cline = src.next()
                parts = cline.split()
                if not parts:
                    raise MeshFormatError("empty cell", cno)
                if int(parts[0]) != 4:
                    raise MeshFormatError(f"non-tetrahedral cell with {parts[0]} vertices", cno)
                cells.append((cno, _numbers(cno, " ".join(parts[1:]), 4, int)))
        elif key == "CELL_TYPES":
            m = int(head[1])
            cell_types = []
            for _ in range(m):
                cno, cline = src.next()
                t = _numbers(cno, cline, 1, int)[0]
                if t != VTK_TETRA:
                    raise MeshFormatError(f"unsupported cell type {t} (only tetrahedra, type 10)", cno)
                cell_types.append(t)
        elif key == "POINT_DATA":
            n_point_data = int(head[1])
        elif key == "SCALARS":
            if n_point_data is None:
                raise MeshFormatError("SCALARS before POINT_DATA", no)
            name = head[1]
            lno, lut = src.next()
            if not lut.upper().startswith("LOOKUP_TABLE"):
                raise MeshFormatError("expected LOOKUP_TABLE", lno)
            vals = []
            while len(vals) < n_point_data:
                vno, vline = src.next()
                vals.extend(_numbers(vno, vline, len(vline.split()), float))
            if name == "role":
                roles = np.array(vals)
                if not np.all(roles == np.round(roles)):
                    raise MeshFormatError("role array must hold integers", no)
                roles = roles.astype(np.int64)
                if roles.min() < 0 or roles.max() > 3:
                    raise MeshFormatError("role values must be in 0..3", no)
        elif key == "VECTORS":
            if n_point_data is None:
                raise MeshFormatError("VECTORS before POINT_DATA", no)
            vectors[head[1]] = np.array(
                [_numbers(*src.next(), 3) for _ in range(n_point_data)], dtype=np.float64
            ).reshape(n_point_data, 3)
        else:
            raise MeshFormatError(f"unsupported section '{head[0]}'", no)

    if positions is None:
        raise MeshFormatError("missing POINTS section")
    if cells is None or cell_types is None:
        raise MeshFormatError("missing CELLS or CELL_TYPES section")
    if len(cells) != len(cell_types):
        raise MeshFormatError("CELLS and CELL_TYPES counts differ")
    if roles is None:
        raise MeshFormatError("missing integer point-data array 'role'")
    if n_point_data != len(positions):
        raise MeshFormatError("POINT_DATA count differs from POINTS count")
    for cno, idx in cells:
        if min(idx) < 0 or max(idx) >= len(positions):
            raise MeshFormatError("cell vertex index out of range", cno)
    tets = np.array([idx for _, idx in cells], dtype=np.int64).reshape(-1, 4)
    try:
        mesh = TetMesh(positions, tets, roles)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from exc
    return mesh, vectors


def load_mesh(content: str | bytes) -> TetMesh:
    return read_vtk(content)[0]
