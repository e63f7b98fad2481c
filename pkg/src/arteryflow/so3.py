"""Real representation theory of O(3) used by the steerable network.

Conventions
-----------
* Real spherical harmonics with *component* normalisation: for a unit vector
  ``x`` the degree-``l`` block satisfies ``|Y_l(x)|^2 = 2l + 1`` and every
  component has unit mean square over the sphere.
* Inside a degree-``l`` block components are ordered ``m = -l, ..., l``.
  For ``l = 1`` this makes the block proportional to ``(y, z, x)``, so a
  Cartesian vector ``v`` is stored as ``v[[1, 2, 0]]`` (see
  :data:`CARTESIAN_TO_L1`).  This is the only basis permutation in the package.
* Wigner-D matrices act on those blocks: ``Y_l(R x) = D_l(R) Y_l(x)``.
* Clebsch-Gordan tensors ``C[a, b, c]`` couple blocks ``l1 x l2 -> l3`` with
  ``sum C**2 = 2 l3 + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

L_MAX = 8

# Cartesian (x, y, z) -> degree-1 component order (m=-1, 0, 1) == (y, z, x)
CARTESIAN_TO_L1 = np.array([1, 2, 0])
L1_TO_CARTESIAN = np.argsort(CARTESIAN_TO_L1)


class UnsupportedDegreeError(ValueError):
    pass


def _check_degree(*degrees: int) -> None:
    for l in degrees:
        if l < 0 or l > L_MAX:
            raise UnsupportedDegreeError(f"degree {l} outside supported range 0..{L_MAX}")


@dataclass(frozen=True, order=True)
class Irrep:
    """Irreducible representation of O(3): degree ``l`` and parity ``p`` (+1 even, -1 odd)."""

    l: int
    p: int

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("degree must be non-negative")
        if self.p not in (1, -1):
            raise ValueError("parity must be +1 or -1")

    @classmethod
    def parse(cls, text: str) -> "Irrep":
        text = text.strip()
        parity = {"e": 1, "o": -1}[text[-1]]
        return cls(int(text[:-1]), parity)

    @property
    def dim(self) -> int:
        return 2 * self.l + 1

    def __str__(self) -> str:
        return f"{self.l}{'e' if self.p == 1 else 'o'}"


@dataclass(frozen=True)
class IrrepsLayout:
    """Ordered sequence of ``(multiplicity, Irrep)`` entries.

    Entries may repeat degrees; their order fixes the memory layout of the
    coefficient vector.
    """

    entries: tuple[tuple[int, Irrep], ...]

    def __post_init__(self):
        for mul, ir in self.entries:
            if mul <= 0:
                raise ValueError("multiplicities must be positive")
            if not isinstance(ir, Irrep):
                raise TypeError("entries must hold Irrep instances")

    @classmethod
    def parse(cls, text: str) -> "IrrepsLayout":
        """Parse ``"16x0e + 8x1o + 4x2e"``."""
        entries = []
        for chunk in text.split("+"):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "x" in chunk:
                mul, ir = chunk.split("x")
                entries.append((int(mul), Irrep.parse(ir)))
            else:
                entries.append((1, Irrep.parse(chunk)))
        return cls(tuple(entries))

    @classmethod
    def spherical_harmonics(cls, l_max: int) -> "IrrepsLayout":
        return cls(tuple((1, Irrep(l, (-1) ** l)) for l in range(l_max + 1)))

    def __add__(self, other: "IrrepsLayout") -> "IrrepsLayout":
        return IrrepsLayout(self.entries + other.entries)

    def __iter__(self) -> Iterator[tuple[int, Irrep]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __str__(self) -> str:
        return " + ".join(f"{mul}x{ir}" for mul, ir in self.entries)

    @property
    def dim(self) -> int:
        return sum(mul * ir.dim for mul, ir in self.entries)

    @property
    def num_scalars(self) -> int:
        return sum(mul for mul, ir in self.entries if ir.l == 0)

    @property
    def lmax(self) -> int:
        return max(ir.l for _, ir in self.entries)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for mul, ir in self.entries:
            out.append(slice(start, start + mul * ir.dim))
            start += mul * ir.dim
        return out

    def blocks(self) -> Iterator[tuple[slice, int]]:
        """Yield ``(slice, l)`` for every single irrep copy, in memory order."""
        start = 0
        for mul, ir in self.entries:
            for _ in range(mul):
                yield slice(start, start + ir.dim), ir.l
                start += ir.dim

    def scalar_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        for sl, l in self.blocks():
            if l == 0:
                mask[sl] = True
        return mask


@dataclass(frozen=True)
class SteerableTensor:
    """Coefficients laid out by ``layout`` along the last axis.

    Leading axes (e.g. one row per vertex) are allowed; every row transforms
    independently.
    """

    layout: IrrepsLayout
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if coeffs.shape[-1:] != (self.layout.dim,):
            raise ValueError(
                f"coefficient length {coeffs.shape[-1:]} does not match layout dim {self.layout.dim}"
            )
        object.__setattr__(self, "coefficients", coeffs)


@dataclass(frozen=True)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        if np.abs(m.T @ m - np.eye(3)).max() > 1e-12 or abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise ValueError("matrix is not a proper rotation")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Haar-random rotation via a sign-fixed QR decomposition."""
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        # re-orthonormalise to keep the 1e-12 invariants comfortably
        u, _, vt = np.linalg.svd(q)
        return cls(u @ vt)

    @classmethod
    def about_axis(cls, axis: Sequence[float], angle: float) -> "Rotation":
        k = np.asarray(axis, dtype=np.float64)
        k = k / np.linalg.norm(k)
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return cls(np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T.copy())


def vector_to_l1(v: np.ndarray) -> np.ndarray:
    return np.asarray(v)[..., CARTESIAN_TO_L1]


def l1_to_vector(t: np.ndarray) -> np.ndarray:
    return np.asarray(t)[..., L1_TO_CARTESIAN]


# ---------------------------------------------------------------------------
# spherical harmonics


def spherical_harmonics(vectors: np.ndarray, l_max: int) -> np.ndarray:
    """Component-normalised real spherical harmonics of (unit) vectors.

    Returns an array of shape ``(..., (l_max + 1)**2)`` laid out as
    ``IrrepsLayout.spherical_harmonics(l_max)``.  The polynomial form is
    evaluated directly, so inputs are *not* re-normalised.
    """
    _check_degree(l_max)
    v = np.asarray(vectors, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]

    # reduced associated Legendre functions Q[l][m] = P_l^m(z) / rho^m (no Condon-Shortley phase)
    Q = [[None] * (l_max + 1) for _ in range(l_max + 1)]
    for m in range(l_max + 1):
        Q[m][m] = np.full_like(z, float(_double_factorial(2 * m - 1)))
        if m + 1 <= l_max:
            Q[m + 1][m] = (2 * m + 1) * z * Q[m][m]
        for l in range(m + 2, l_max + 1):
            Q[l][m] = ((2 * l - 1) * z * Q[l - 1][m] - (l + m - 1) * Q[l - 2][m]) / (l - m)

    # rho^m cos(m phi), rho^m sin(m phi) as polynomials in x, y
    cos_m = [np.ones_like(x)]
    sin_m = [np.zeros_like(x)]
    for m in range(1, l_max + 1):
        cos_m.append(cos_m[-1] * x - sin_m[-1] * y)
        sin_m.append(sin_m[-1] * x + cos_m[-2] * y)

    out = np.empty(v.shape[:-1] + ((l_max + 1) ** 2,))
    for l in range(l_max + 1):
        offset = l * l + l  # index of m = 0
        for m in range(l + 1):
            norm = math.sqrt((2 * l + 1) * math.factorial(l - m) / math.factorial(l + m))
            if m == 0:
                out[..., offset] = norm * Q[l][0]
            else:
                norm *= math.sqrt(2.0)
                out[..., offset + m] = norm * Q[l][m] * cos_m[m]
                out[..., offset - m] = norm * Q[l][m] * sin_m[m]
    return out


def _double_factorial(n: int) -> int:
    return 1 if n <= 0 else n * _double_factorial(n - 2)


def real_spherical_harmonics(direction: Sequence[float], l_max: int) -> SteerableTensor:
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError("direction must be a 3-vector")
    _check_degree(l_max)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return SteerableTensor(IrrepsLayout.spherical_harmonics(l_max), spherical_harmonics(d, l_max))


# ---------------------------------------------------------------------------
# Wigner-D


@lru_cache(maxsize=None)
def _wigner_design(l: int) -> tuple[np.ndarray, np.ndarray]:
    # fixed generic directions; D is recovered from Y_l(R x_k) = D Y_l(x_k)
    rng = np.random.default_rng(1234 + l)
    pts = rng.standard_normal((4 * (2 * l + 1), 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    A = spherical_harmonics(pts, l)[:, l * l:(l + 1) ** 2]
    pinv = np.linalg.pinv(A.T)
    pts.setflags(write=False)
    pinv.setflags(write=False)
    return pts, pinv


def wigner_d(l: int, r: Rotation | np.ndarray) -> np.ndarray:
    """Real Wigner-D matrix of degree ``l`` in the spherical-harmonic basis."""
    _check_degree(l)
    R = r.matrix if isinstance(r, Rotation) else np.asarray(r, dtype=np.float64)
    if l == 0:
        return np.ones((1, 1))
    if l == 1:
        return R[np.ix_(CARTESIAN_TO_L1, CARTESIAN_TO_L1)].copy()
    pts, pinv = _wigner_design(l)
    B = spherical_harmonics(pts @ R.T, l)[:, l * l:(l + 1) ** 2]
    return B.T @ pinv


def layout_wigner_d(layout: IrrepsLayout, r: Rotation | np.ndarray) -> np.ndarray:
    """Block-diagonal representation matrix of a whole layout."""
    D = np.zeros((layout.dim, layout.dim))
    cache: dict[int, np.ndarray] = {}
    for sl, l in layout.blocks():
        if l not in cache:
            cache[l] = wigner_d(l, r)
        D[sl, sl] = cache[l]
    return D


def rotate_steerable(t: SteerableTensor, r: Rotation) -> SteerableTensor:
    _check_degree(*(ir.l for _, ir in t.layout))
    out = t.coefficients.copy()
    for (mul, ir), sl in zip(t.layout, t.layout.slices()):
        if ir.l == 0:
            continue
        D = wigner_d(ir.l, r)
        block = t.coefficients[..., sl].reshape(t.coefficients.shape[:-1] + (mul, ir.dim))
        out[..., sl] = (block @ D.T).reshape(t.coefficients.shape[:-1] + (mul * ir.dim,))
    return SteerableTensor(t.layout, out)


# ---------------------------------------------------------------------------
# Clebsch-Gordan


def _fixed_rotations(count: int, seed: int) -> list[Rotation]:
    rng = np.random.default_rng(seed)
    return [Rotation.random(rng) for _ in range(count)]


@lru_cache(maxsize=None)
def _clebsch_gordan_cached(l1: int, l2: int, l3: int) -> np.ndarray:
    d1, d2, d3 = 2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1
    C = np.zeros((d1, d2, d3))
    if not abs(l1 - l2) <= l3 <= l1 + l2:
        C.setflags(write=False)
        return C
    # C spans the null space of  kron(D1^T, D2^T, I) - kron(I, I, D3)  for every rotation
    n = d1 * d2 * d3
    M = np.zeros((n, n))
    for r in _fixed_rotations(3, seed=20240917):
        D1, D2, D3 = wigner_d(l1, r), wigner_d(l2, r), wigner_d(l3, r)
        L = np.kron(np.kron(D1.T, D2.T), np.eye(d3)) - np.kron(np.eye(d1 * d2), D3)
        M += L.T @ L
    evals, evecs = np.linalg.eigh(M)
    if evals[0] > 1e-8 or (n > 1 and evals[1] < 1e-6):
        raise RuntimeError(f"unexpected intertwiner space for ({l1},{l2},{l3}): {evals[:3]}")
    c = evecs[:, 0]
    c[np.abs(c) < 1e-14] = 0.0
    lead = np.flatnonzero(np.abs(c) > 1e-6 * np.abs(c).max())[0]
    c *= np.sign(c[lead]) * math.sqrt(d3) / np.linalg.norm(c)
    C = c.reshape(d1, d2, d3)
    C.setflags(write=False)
    return C


def clebsch_gordan(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real CG tensor coupling degrees ``l1 x l2 -> l3`` (read-only, cached).

    Solved numerically from the intertwining identity and normalised so
    that ``sum C**2 == 2*l3 + 1``; the overall sign makes the first
    non-negligible entry (C order) positive.
    """
    _check_degree(l1, l2, l3)
    return _clebsch_gordan_cached(l1, l2, l3)


def random_rotations(count: int, rng: np.random.Generator) -> list[Rotation]:
    return [Rotation.random(rng) for _ in range(count)]


def as_rotation(r: Rotation | np.ndarray | Iterable) -> Rotation:
    return r if isinstance(r, Rotation) else Rotation(np.asarray(r, dtype=np.float64))
