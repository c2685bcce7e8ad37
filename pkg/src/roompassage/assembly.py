"""P1 finite element operators with exact element integrals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .mesh import OMEGA, PASSAGE, ROOM, TriMesh


class AssemblyError(ValueError):
    pass


class SparseSymMatrix:
    """Symmetric sparse matrix stored as its lower triangle (CSR, with diagonal).

    ``full()`` returns the symmetric-expanded CSC matrix consumed by solvers.
    """

    def __init__(self, lower: sp.spmatrix):
        lower = sp.tril(sp.csr_matrix(lower)).tocsr()
        lower.sum_duplicates()
        lower.eliminate_zeros()
        lower.sort_indices()
        if lower.shape[0] != lower.shape[1]:
            raise AssemblyError(f"matrix must be square, got {lower.shape}")
        self.lower = lower
        self._full = None

    @classmethod
    def from_full(cls, A) -> "SparseSymMatrix":
        return cls(sp.tril(sp.csr_matrix(A)))

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self):
        return self.lower.shape

    @property
    def indptr(self) -> np.ndarray:
        return self.lower.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.lower.indices

    @property
    def data(self) -> np.ndarray:
        return self.lower.data

    def full(self) -> sp.csc_matrix:
        if self._full is None:
            L = self.lower
            D = sp.diags(L.diagonal())
            self._full = (L + L.T - D).tocsc()
        return self._full

    def toarray(self) -> np.ndarray:
        return self.full().toarray()

    def __matmul__(self, x):
        return self.full() @ x

    def norm1(self) -> float:
        return float(abs(self.full()).sum(axis=0).max())

    def to_coo_text(self) -> str:
        """``row col value`` lines (lower triangle, 17 significant digits)."""
        coo = self.lower.tocoo()
        return "".join(f"{i} {j} {v:.17g}\n" for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    @classmethod
    def from_coo_text(cls, text: str, n: int) -> "SparseSymMatrix":
        rows, cols, vals = [], [], []
        for line in text.splitlines():
            i, j, v = line.split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
        return cls(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


MatrixLike = Union[SparseSymMatrix, sp.spmatrix, np.ndarray]


def as_csc(A: MatrixLike) -> sp.csc_matrix:
    if isinstance(A, SparseSymMatrix):
        return A.full()
    return sp.csc_matrix(A)


@dataclass(frozen=True)
class DensityField:
    """Piecewise constant density: 1 on the base and passages, ``rho`` on rooms."""

    room: float = 1.0
    omega: float = 1.0
    passage: float = 1.0

    def __post_init__(self):
        if min(self.room, self.omega, self.passage) <= 0:
            raise AssemblyError("density must be strictly positive")

    def per_triangle(self, mesh: TriMesh) -> np.ndarray:
        lut = np.empty(3)
        lut[OMEGA], lut[PASSAGE], lut[ROOM] = self.omega, self.passage, self.room
        return lut[mesh.region_kind]


@dataclass(frozen=True)
class TraceMap:
    """Gamma vertex ids and their boundary degree-of-freedom numbers ``0..m-1``."""

    vertex_ids: np.ndarray
    n_volume: int
    _lookup: dict = field(default=None, repr=False, compare=False)

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> "TraceMap":
        ids = np.asarray(mesh.gamma_vertex_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise AssemblyError("gamma vertex ids are not unique")
        return cls(ids, mesh.n_vertices, {int(v): k for k, v in enumerate(ids.tolist())})

    @property
    def m(self) -> int:
        return len(self.vertex_ids)

    def dof(self, vertex: int) -> int:
        return self._lookup[int(vertex)]

    def selection(self) -> sp.csr_matrix:
        """The ``m x n_volume`` matrix taking nodal values to their Gamma traces."""
        m = self.m
        return sp.csr_matrix((np.ones(m), (np.arange(m), self.vertex_ids)), shape=(m, self.n_volume))


def _element_geometry(mesh: TriMesh):
    p = mesh.vertices[mesh.triangles]
    # edge opposite to local vertex k
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    area = 0.5 * (e[:, 2, 0] * (-e[:, 1, 1]) - e[:, 2, 1] * (-e[:, 1, 0]))
    if np.any(area <= 0):
        bad = int(np.argmin(area))
        raise AssemblyError(f"degenerate or inverted triangle {bad} (area {area[bad]:.3e})")
    return e, area


def _lower_from_elements(mesh: TriMesh, local: np.ndarray) -> SparseSymMatrix:
    T = mesh.triangles
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(a + 1):
            ia, ib = T[:, a], T[:, b]
            rows.append(np.maximum(ia, ib))
            cols.append(np.minimum(ia, ib))
            vals.append(local[:, a, b])
    n = mesh.n_vertices
    L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return SparseSymMatrix(L)


def element_stiffness(mesh: TriMesh) -> np.ndarray:
    e, area = _element_geometry(mesh)
    return np.einsum("tai,tbi->tab", e, e) / (4.0 * area)[:, None, None]


def element_mass(mesh: TriMesh, weights: Optional[np.ndarray] = None) -> np.ndarray:
    _, area = _element_geometry(mesh)
    w = area if weights is None else area * weights
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return w[:, None, None] * ref[None]


def assemble_stiffness(mesh: TriMesh) -> SparseSymMatrix:
    """``K_ab = int grad(phi_a) . grad(phi_b)`` over P1 hat functions."""
    return _lower_from_elements(mesh, element_stiffness(mesh))


def assemble_mass(mesh: TriMesh, density: Optional[DensityField] = None) -> SparseSymMatrix:
    """``M_ab = int phi_a phi_b rho``."""
    density = density or DensityField()
    return _lower_from_elements(mesh, element_mass(mesh, density.per_triangle(mesh)))


def assemble_boundary_mass(mesh: TriMesh, trace: TraceMap) -> SparseSymMatrix:
    """1-D P1 mass matrix on the Gamma edges, in boundary dof numbering."""
    edges = mesh.gamma_edges()
    if len(edges) == 0:
        raise AssemblyError("Gamma has no edges")
    lookup = np.full(mesh.n_vertices, -1, dtype=np.int64)
    lookup[trace.vertex_ids] = np.arange(trace.m)
    a, b = lookup[edges[:, 0]], lookup[edges[:, 1]]
    if np.any(a < 0) or np.any(b < 0):
        raise AssemblyError("Gamma edge endpoint missing from the trace map")
    L = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    rows = np.concatenate([a, b, np.maximum(a, b)])
    cols = np.concatenate([a, b, np.minimum(a, b)])
    vals = np.concatenate([L / 3.0, L / 3.0, L / 6.0])
    m = trace.m
    return SparseSymMatrix(sp.coo_matrix((vals, (rows, cols)), shape=(m, m)))


def lift_boundary_mass(G: SparseSymMatrix, trace: TraceMap) -> SparseSymMatrix:
    """``T^t G T``: the Gamma mass acting on volume nodal values."""
    T = trace.selection()
    return SparseSymMatrix.from_full(T.T @ G.full() @ T)


def assemble_Aqr_blocks(
    K: SparseSymMatrix,
    M: SparseSymMatrix,
    G: SparseSymMatrix,
    trace: TraceMap,
    q: float,
    r: float,
):
    """Two-field pencil ``(S, B)`` for unknowns ``(u1 nodal, u2 on Gamma)``.

    ``S = [[K + qr T'GT, -qr T'G], [-qr GT, qr G]]`` and ``B = [[M, 0], [0, r G]]``.
    """
    if not (np.isfinite(q) and q > 0):
        raise AssemblyError(f"q must be finite and positive, got {q}")
    if not (np.isfinite(r) and r > 0):
        raise AssemblyError(f"r must be finite and positive (r = 0 is the A_q case), got {r}")
    T = trace.selection()
    Gf = G.full()
    qr = q * r
    S = sp.bmat([[K.full() + qr * (T.T @ Gf @ T), None], [-qr * (Gf @ T), qr * Gf]])
    B = sp.bmat([[M.full(), None], [None, r * Gf]])
    return SparseSymMatrix(S), SparseSymMatrix(B)
