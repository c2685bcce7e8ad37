import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from roompassage.assembly import (
    AssemblyError,
    DensityField,
    SparseSymMatrix,
    TraceMap,
    assemble_Aqr_blocks,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    element_mass,
    element_stiffness,
    lift_boundary_mass,
)
from roompassage.geometry import BaseDomain, ShapeSpec, build_perturbed_domain, exponents_to_params, expected_area
from roompassage.mesh import OMEGA, ROOM, TriMesh, _finish, mesh_perturbed_domain, mesh_rectangle, refine_uniform

BASE = BaseDomain()


def single_triangle(scale=1.0, kind=OMEGA):
    v = np.array([[0.0, -1.0], [1.0, -1.0], [0.0, 0.0]]) * [scale, 1.0]
    return _finish(v, np.array([[0, 1, 2]]), [kind], [-1 if kind == OMEGA else 1])


def test_reference_stiffness():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]) - [0.0, 1.0]
    m = _finish(v, np.array([[0, 1, 2]]), [OMEGA], [-1])
    Ke = element_stiffness(m)[0]
    assert np.allclose(Ke, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)


def test_reference_mass():
    m = single_triangle(2.0)
    Me = element_mass(m)[0]
    assert np.allclose(Me, (1.0 / 12) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)


def test_room_density_scales_mass():
    m = single_triangle(kind=ROOM)
    M1 = assemble_mass(m).toarray()
    M10 = assemble_mass(m, DensityField(room=10.0)).toarray()
    assert np.allclose(M10, 10 * M1, rtol=1e-15)


def test_density_must_be_positive():
    with pytest.raises(AssemblyError):
        DensityField(room=0.0)


def test_degenerate_triangle_aborts():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    m = TriMesh(v, np.array([[0, 1, 2]]), np.zeros(1, np.int8), -np.ones(1, np.int64), np.zeros((0, 2), np.int64), np.zeros(0, np.int8), np.array([0, 1, 2]))
    with pytest.raises(AssemblyError):
        assemble_stiffness(m)


@pytest.fixture(scope="module")
def perturbed():
    dom = build_perturbed_domain(BASE, exponents_to_params(0.25, 2, -1), ShapeSpec())
    return dom, mesh_perturbed_domain(dom, 1 / 8)


def test_stiffness_kernel_and_psd(perturbed):
    _, m = perturbed
    K = assemble_stiffness(m)
    assert np.abs(K @ np.ones(m.n_vertices)).max() < 1e-12
    x = m.vertices[:, 0]
    assert x @ (K @ x) > 0
    # energy of f(x, y) = x is exactly the area
    dom, _ = perturbed
    assert x @ (K @ x) == pytest.approx(expected_area(dom), rel=1e-12)


def test_symmetry_exact(perturbed):
    _, m = perturbed
    for A in (assemble_stiffness(m), assemble_mass(m, DensityField(room=4.0))):
        F = A.full()
        assert (F - F.T).nnz == 0 or np.abs((F - F.T).data).max() == 0.0


def test_total_mass(perturbed):
    dom, m = perturbed
    rho = 4.0
    M = assemble_mass(m, DensityField(room=rho))
    one = np.ones(m.n_vertices)
    rooms = sum((b[1] - b[0]) * (b[3] - b[2]) for b in dom.rooms)
    passages = sum((t[1] - t[0]) * (t[3] - t[2]) for t in dom.passages)
    assert one @ (M @ one) == pytest.approx(dom.base.area + passages + rho * rooms, rel=1e-12)


def test_boundary_mass_single_edge():
    m = mesh_rectangle(BaseDomain(0.5, 1.0), 1.0)
    tr = TraceMap.from_mesh(m)
    G = assemble_boundary_mass(m, tr).toarray()
    assert np.allclose(G, (0.5 / 6) * np.array([[2, 1], [1, 2]]), atol=1e-16)


@pytest.mark.parametrize("n", [3, 8, 13])
def test_boundary_mass_total(n):
    m = mesh_rectangle(BASE, 1.0 / n)
    G = assemble_boundary_mass(m, TraceMap.from_mesh(m))
    one = np.ones(G.n)
    assert one @ (G @ one) == pytest.approx(1.0, rel=1e-14)


def test_trace_map():
    m = mesh_rectangle(BASE, 0.25)
    tr = TraceMap.from_mesh(m)
    assert tr.m == 5
    assert [tr.dof(v) for v in tr.vertex_ids] == list(range(5))
    T = tr.selection()
    u = m.vertices[:, 0] + 3.0
    assert np.allclose(T @ u, m.vertices[tr.vertex_ids, 0] + 3.0)


def test_refinement_consistency(perturbed):
    _, m = perturbed
    r = refine_uniform(m)
    for mesh_a, mesh_b in ((m, r),):
        Ma, Mb = assemble_mass(mesh_a, DensityField(room=3.0)), assemble_mass(mesh_b, DensityField(room=3.0))
        oa, ob = np.ones(Ma.n), np.ones(Mb.n)
        assert oa @ (Ma @ oa) == pytest.approx(ob @ (Mb @ ob), rel=1e-12)
    sq = mesh_rectangle(BASE, 0.25)
    sq2 = refine_uniform(sq)
    Ga = assemble_boundary_mass(sq, TraceMap.from_mesh(sq))
    Gb = assemble_boundary_mass(sq2, TraceMap.from_mesh(sq2))
    assert np.ones(Ga.n) @ (Ga @ np.ones(Ga.n)) == pytest.approx(np.ones(Gb.n) @ (Gb @ np.ones(Gb.n)), rel=1e-12)


@pytest.fixture(scope="module")
def blocks():
    m = mesh_rectangle(BASE, 1 / 8)
    K, M = assemble_stiffness(m), assemble_mass(m)
    tr = TraceMap.from_mesh(m)
    G = assemble_boundary_mass(m, tr)
    S, B = assemble_Aqr_blocks(K, M, G, tr, 1.6, 0.25)
    return m, K, M, G, tr, S, B


def test_block_kernel(blocks):
    _, _, _, _, _, S, _ = blocks
    U = np.full(S.n, 2.5)
    assert np.abs(S @ U).max() < 1e-12


def test_block_boundary_only(blocks):
    m, _, _, G, tr, S, _ = blocks
    rng = np.random.default_rng(0)
    u2 = rng.standard_normal(tr.m)
    U = np.concatenate([np.zeros(m.n_vertices), u2])
    assert U @ (S @ U) == pytest.approx(1.6 * 0.25 * u2 @ (G @ u2), rel=1e-12)


def test_block_matched_trace(blocks):
    m, K, _, _, tr, S, _ = blocks
    u1 = np.random.default_rng(1).standard_normal(m.n_vertices)
    U = np.concatenate([u1, tr.selection() @ u1])
    assert U @ (S @ U) == pytest.approx(u1 @ (K @ u1), rel=1e-12)


def test_block_definiteness(blocks):
    _, _, _, _, _, S, B = blocks
    s = np.linalg.eigvalsh(S.toarray())
    b = np.linalg.eigvalsh(B.toarray())
    assert s.min() > -1e-12 and b.min() > 0


def test_block_rejects_r_zero(blocks):
    _, K, M, G, tr, _, _ = blocks
    with pytest.raises(AssemblyError):
        assemble_Aqr_blocks(K, M, G, tr, 1.6, 0.0)
    with pytest.raises(AssemblyError):
        assemble_Aqr_blocks(K, M, G, tr, np.inf, 0.25)


def test_lift_boundary_mass(blocks):
    m, _, _, G, tr, _, _ = blocks
    Gt = lift_boundary_mass(G, tr)
    u = m.vertices[:, 0] ** 2
    g = u[tr.vertex_ids]
    assert u @ (Gt @ u) == pytest.approx(g @ (G @ g), rel=1e-14)


def test_coo_text_round_trip(blocks):
    _, K, _, _, _, _, _ = blocks
    text = K.to_coo_text()
    again = SparseSymMatrix.from_coo_text(text, K.n)
    assert (again.full() != K.full()).nnz == 0
    assert all(len(line.split()) == 3 for line in text.splitlines())


coords = st.floats(-1.0, 0.0, allow_nan=False)


@settings(max_examples=50)
@given(
    pts=st.lists(st.tuples(coords, coords), min_size=3, max_size=3),
    grad=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    c=st.floats(-5, 5),
)
def test_element_stiffness_affine_exact(pts, grad, c):
    # energy of an affine function over a triangle equals |grad|^2 * area
    v = np.array(pts)
    e1, e2 = v[1] - v[0], v[2] - v[0]
    cross = e1[0] * e2[1] - e1[1] * e2[0]
    assume(abs(cross) > 1e-3)
    if cross < 0:
        v = v[[0, 2, 1]]
    m = _finish(v, np.array([[0, 1, 2]]), [OMEGA], [-1])
    g = np.array(grad)
    u = v @ g + c
    assert u @ element_stiffness(m)[0] @ u == pytest.approx(g @ g * abs(cross) / 2, rel=1e-9, abs=1e-12)
