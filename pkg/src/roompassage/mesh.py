"""Conforming structured triangulations of the multi-rectangle domain.

Every rectangle (base, passages, rooms) gets a tensor-product grid whose lines
include all interface abscissae, so the grids agree along shared segments.
Grid spacing is graded geometrically (ratio 2) away from the passages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import BaseDomain, PerturbedDomain

OMEGA, PASSAGE, ROOM = 0, 1, 2
GAMMA, OUTER = 0, 1

REGION_NAMES = {OMEGA: "omega", PASSAGE: "passage", ROOM: "room"}
BOUNDARY_NAMES = {GAMMA: "gamma", OUTER: "outer"}

DEFAULT_VERTEX_BUDGET = 2_000_000


class MeshBudgetError(RuntimeError):
    pass


@dataclass
class TriMesh:
    """Triangle mesh with per-triangle region tags and tagged boundary edges.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    region_kind : (T,) int array with values OMEGA, PASSAGE, ROOM
    region_index : (T,) int array, room/passage index ``i`` or -1 on omega
    boundary_edges : (E, 2) int array
    boundary_tag : (E,) int array with values GAMMA, OUTER
    gamma_vertex_ids : vertices on gamma edges, ordered by x
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region_kind: np.ndarray
    region_index: np.ndarray
    boundary_edges: np.ndarray
    boundary_tag: np.ndarray
    gamma_vertex_ids: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def region_area(self, kind: int, index: Optional[int] = None) -> float:
        sel = self.region_kind == kind
        if index is not None:
            sel &= self.region_index == index
        return float(self.signed_areas()[sel].sum())

    def gamma_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_tag == GAMMA]

    def diameter(self) -> float:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))


@dataclass(frozen=True)
class QualityReport:
    min_angle: float
    max_aspect_ratio: float
    vertex_count: int
    triangle_count: int
    min_edge_length: float


# ---------------------------------------------------------------- 1-D grading


def _interval_distance(x0: float, x1: float, a: float, b: float) -> float:
    if x1 < a:
        return a - x1
    if x0 > b:
        return x0 - b
    return 0.0


def graded_points(
    lo: float,
    hi: float,
    cap: float,
    fine_zones: Sequence[Tuple[float, float, float]] = (),
    breakpoints: Iterable[float] = (),
) -> np.ndarray:
    """Grid points on ``[lo, hi]`` refined by dyadic bisection.

    A cell is split while its length exceeds
    ``min(cap, min_z max(size_z, dist(cell, zone_z)))`` for the fine zones
    ``(a, b, size)``, which yields cell sizes doubling away from each zone.
    ``breakpoints`` inside ``(lo, hi)`` are always grid points.
    """
    knots = sorted({lo, hi, *(x for x in breakpoints if lo < x < hi)})
    out = [knots[0]]
    for a, b in zip(knots[:-1], knots[1:]):
        stack = [(a, b)]
        cells = []
        while stack:
            x0, x1 = stack.pop()
            allowed = cap
            for za, zb, size in fine_zones:
                allowed = min(allowed, max(size, _interval_distance(x0, x1, za, zb)))
            if x1 - x0 > allowed * (1.0 + 1e-12):
                mid = 0.5 * (x0 + x1)
                stack.append((mid, x1))
                stack.append((x0, mid))
            else:
                cells.append(x1)
        out.extend(cells)
    return np.asarray(out, dtype=float)


def uniform_points(lo: float, hi: float, cap: float, min_cells: int = 1) -> np.ndarray:
    n = max(min_cells, int(math.ceil((hi - lo) / cap - 1e-12)))
    pts = lo + (hi - lo) * np.arange(n + 1) / n
    pts[-1] = hi
    return pts


# ------------------------------------------------------------ grid assembly


def _grid(xs: np.ndarray, ys: np.ndarray):
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(nx * ny).reshape(nx, ny)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[1:, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v11 = idx[1:, 1:].ravel()
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return verts, tris


def _edge_table(triangles: np.ndarray):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, inverse, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.ravel(), counts


def edge_use_counts(mesh: TriMesh) -> np.ndarray:
    """Number of triangles sharing each distinct edge."""
    return _edge_table(mesh.triangles)[2]


def _finish(vertices, triangles, kind, index) -> TriMesh:
    edges, _, counts = _edge_table(triangles)
    bnd = edges[counts == 1]
    on_top = (vertices[bnd[:, 0], 1] == 0.0) & (vertices[bnd[:, 1], 1] == 0.0)
    tag = np.where(on_top, GAMMA, OUTER).astype(np.int8)
    gamma_ids = np.unique(bnd[on_top])
    gamma_ids = gamma_ids[np.argsort(vertices[gamma_ids, 0], kind="stable")]
    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        region_kind=np.asarray(kind, dtype=np.int8),
        region_index=np.asarray(index, dtype=np.int64),
        boundary_edges=bnd,
        boundary_tag=tag,
        gamma_vertex_ids=gamma_ids,
    )


def _merge(blocks: List[Tuple[np.ndarray, np.ndarray, int, int]], vertex_budget: int) -> TriMesh:
    total = sum(len(b[0]) for b in blocks)
    if total > vertex_budget:
        raise MeshBudgetError(f"mesh needs {total} vertices, budget is {vertex_budget}")
    all_v, all_t, kinds, indices = [], [], [], []
    offset = 0
    for verts, tris, kind, index in blocks:
        all_v.append(verts)
        all_t.append(tris + offset)
        kinds.append(np.full(len(tris), kind))
        indices.append(np.full(len(tris), index))
        offset += len(verts)
    V = np.concatenate(all_v)
    # lexicographic (x, y) order fixes the merged numbering
    uniq, inv = np.unique(V, axis=0, return_inverse=True)
    T = inv.ravel()[np.concatenate(all_t)]
    return _finish(uniq, T.astype(np.int64), np.concatenate(kinds), np.concatenate(indices))


def mesh_rectangle(base: BaseDomain, target_h: float, vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> TriMesh:
    """Uniform right-triangle mesh of the base rectangle."""
    if target_h <= 0:
        raise ValueError("target_h must be positive")
    xs = uniform_points(0.0, base.W, target_h)
    ys = uniform_points(-base.H, 0.0, target_h)
    verts, tris = _grid(xs, ys)
    return _merge([(verts, tris, OMEGA, -1)], vertex_budget)


def passage_lines(domain: PerturbedDomain, target_h: float) -> List[np.ndarray]:
    """Abscissae of the grid lines crossing each passage (at least 2 cells)."""
    out = []
    for x0, x1, _, _ in domain.passages:
        out.append(uniform_points(x0, x1, min(target_h, 0.5 * (x1 - x0)), min_cells=2))
    return out


def mesh_perturbed_domain(
    domain: PerturbedDomain,
    target_h: float,
    aspect_limit: float = 8.0,
    vertex_budget: int = DEFAULT_VERTEX_BUDGET,
    room_min_cells: int = 4,
) -> TriMesh:
    """Mesh the base rectangle, every passage and every room conformingly.

    Inside a passage the cell width is ``min(target_h, width/2)`` and the cell
    length is capped so that the longest/shortest edge ratio of the right
    triangles stays below ``aspect_limit``.  Outside the passages the grid
    is graded with ratio 2 from the passage cell width up to ``target_h``.
    """
    if target_h <= 0:
        raise ValueError("target_h must be positive")
    if aspect_limit <= math.sqrt(2.0):
        raise ValueError("aspect_limit must exceed sqrt(2)")
    base, p = domain.base, domain.params
    plines = passage_lines(domain, target_h)
    zones = [(t[0], t[1], pl[1] - pl[0]) for t, pl in zip(domain.passages, plines)]
    finest = min(z[2] for z in zones)

    # x-lines of the base: graded outside passages, passage lines inside
    knots = [0.0, base.W]
    for t in domain.passages:
        knots += [t[0], t[1]]
    knots = sorted(set(knots))
    xs = [np.array([0.0])]
    for a, b in zip(knots[:-1], knots[1:]):
        inside = [pl for t, pl in zip(domain.passages, plines) if t[0] == a and t[1] == b]
        seg = inside[0] if inside else graded_points(a, b, target_h, zones)
        xs.append(seg[1:])
    xs_omega = np.concatenate(xs)
    ys_omega = graded_points(-base.H, 0.0, target_h, [(0.0, 0.0, finest)])

    estimate = len(xs_omega) * len(ys_omega)
    if estimate > vertex_budget:
        raise MeshBudgetError(f"base grid alone needs {estimate} vertices, budget is {vertex_budget}")

    blocks = []
    verts, tris = _grid(xs_omega, ys_omega)
    blocks.append((verts, tris, OMEGA, -1))

    stretch = math.sqrt(aspect_limit**2 - 1.0) * (1.0 - 1e-9)
    for i, t, room, pl, zone in zip(domain.index_set, domain.passages, domain.rooms, plines, zones):
        width_cell = pl[1] - pl[0]
        ys_t = uniform_points(0.0, p.h, min(target_h, stretch * width_cell))
        if len(pl) * len(ys_t) > vertex_budget:
            raise MeshBudgetError(f"passage {i} needs {len(pl) * len(ys_t)} vertices")
        verts, tris = _grid(pl, ys_t)
        blocks.append((verts, tris, PASSAGE, i))

        rx0, rx1, ry0, ry1 = room
        cap = min(target_h, (rx1 - rx0) / room_min_cells, (ry1 - ry0) / room_min_cells)
        left = graded_points(rx0, t[0], cap, [zone])
        right = graded_points(t[1], rx1, cap, [zone])
        xs_room = np.concatenate([left, pl[1:-1], right])
        ys_room = graded_points(ry0, ry1, cap, [(ry0, ry0, zone[2])])
        verts, tris = _grid(xs_room, ys_room)
        blocks.append((verts, tris, ROOM, i))

    return _merge(blocks, vertex_budget)


def refine_uniform(mesh: TriMesh, vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> TriMesh:
    """Split every triangle into four through its edge midpoints."""
    edges, inverse, _ = _edge_table(mesh.triangles)
    nv = mesh.n_vertices
    if nv + len(edges) > vertex_budget:
        raise MeshBudgetError(f"refined mesh needs {nv + len(edges)} vertices, budget is {vertex_budget}")
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    V = np.concatenate([mesh.vertices, mids])
    nt = mesh.n_triangles
    m = nv + inverse.reshape(3, nt).T  # midpoints of edges (01, 12, 20)
    a, b, c = mesh.triangles.T
    m01, m12, m20 = m.T
    T = np.concatenate(
        [
            np.column_stack([a, m01, m20]),
            np.column_stack([m01, b, m12]),
            np.column_stack([m20, m12, c]),
            np.column_stack([m01, m12, m20]),
        ]
    )
    kind = np.tile(mesh.region_kind, 4)
    index = np.tile(mesh.region_index, 4)
    return _finish(V, T.astype(np.int64), kind, index)


def mesh_quality(mesh: TriMesh) -> QualityReport:
    p = mesh.vertices[mesh.triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    angles = []
    for k in range(3):
        u = -e[:, (k - 1) % 3]  # edges leaving vertex k
        v = e[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (lengths[:, (k - 1) % 3] * lengths[:, k])
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return QualityReport(
        min_angle=float(np.min(angles)),
        max_aspect_ratio=float(np.max(lengths.max(axis=1) / lengths.min(axis=1))),
        vertex_count=mesh.n_vertices,
        triangle_count=mesh.n_triangles,
        min_edge_length=float(lengths.min()),
    )


# ------------------------------------------------------------------- text io


def _region_label(kind: int, index: int) -> str:
    return "omega" if kind == OMEGA else f"{REGION_NAMES[kind]}:{index}"


def write_mesh(mesh: TriMesh) -> str:
    """Plain-text dump: ``V T E`` header, vertices, triangles, boundary edges."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [
        f"{i} {j} {k} {_region_label(kind, idx)}"
        for (i, j, k), kind, idx in zip(mesh.triangles.tolist(), mesh.region_kind.tolist(), mesh.region_index.tolist())
    ]
    lines += [f"{i} {j} {BOUNDARY_NAMES[t]}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tag.tolist())]
    return "\n".join(lines) + "\n"


def read_mesh(text: str) -> TriMesh:
    rows = text.splitlines()
    nv, nt, ne = (int(x) for x in rows[0].split())
    verts = np.array([[float(a) for a in r.split()] for r in rows[1 : 1 + nv]], dtype=float).reshape(nv, 2)
    tris, kind, index = [], [], []
    names = {v: k for k, v in REGION_NAMES.items()}
    for r in rows[1 + nv : 1 + nv + nt]:
        i, j, k, label = r.split()
        tris.append((int(i), int(j), int(k)))
        name, _, idx = label.partition(":")
        kind.append(names[name])
        index.append(int(idx) if idx else -1)
    bnames = {v: k for k, v in BOUNDARY_NAMES.items()}
    edges, tags = [], []
    for r in rows[1 + nv + nt : 1 + nv + nt + ne]:
        i, j, label = r.split()
        edges.append((int(i), int(j)))
        tags.append(bnames[label])
    edges = np.array(edges, dtype=np.int64).reshape(ne, 2)
    tags = np.array(tags, dtype=np.int8)
    gamma_ids = np.unique(edges[tags == GAMMA])
    gamma_ids = gamma_ids[np.argsort(verts[gamma_ids, 0], kind="stable")]
    return TriMesh(
        vertices=verts,
        triangles=np.array(tris, dtype=np.int64).reshape(nt, 3),
        region_kind=np.array(kind, dtype=np.int8),
        region_index=np.array(index, dtype=np.int64),
        boundary_edges=edges,
        boundary_tag=tags,
        gamma_vertex_ids=gamma_ids,
    )
