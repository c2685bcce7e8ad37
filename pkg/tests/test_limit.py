import math

import numpy as np
import pytest

from roompassage.eigensolve import eigs_in_interval
from roompassage.geometry import BaseDomain, ShapeSpec, classify_regime
from roompassage.limit import (
    CLUSTER,
    ESSENTIAL,
    DegenerateConfigurationError,
    LimitProblem,
    branches_to_spectrum,
    compute_k0,
    dirichlet_gamma_analytic,
    dirichlet_gamma_eigenvalues,
    neumann_rectangle_analytic,
    robin_curve,
    robin_eigenvalues,
    separable_oracle,
    sigma0_for_regime,
    spectrum_A,
    spectrum_Aq,
    spectrum_Aqr_block,
    spectrum_Aqr_fixedpoint,
    spectrum_Ar,
)
from roompassage.mesh import mesh_rectangle

from .conftest import CANONICAL_Q as Q, CANONICAL_R as R

PI2 = math.pi**2


# ------------------------------------------------------------ analytic


def test_neumann_analytic_unit_square():
    s = neumann_rectangle_analytic(1, 1, 25)
    assert np.allclose(s.values, [0, PI2, 2 * PI2], rtol=1e-15)
    assert list(s.multiplicities) == [1, 2, 1]


def test_neumann_analytic_small_window():
    s = neumann_rectangle_analytic(1, 1, 5)
    assert list(s.values) == [0.0]


def test_neumann_analytic_wide():
    s = neumann_rectangle_analytic(2, 1, 10)
    assert np.allclose(s.values, [0, PI2 / 4, PI2], rtol=1e-15)
    assert np.allclose(s.values[1:], [2.4674, 9.8696], atol=1e-4)


def test_dirichlet_analytic_list():
    brute = sorted(PI2 * (p * p + (m + 0.5) ** 2) for p in range(5) for m in range(5))
    s = dirichlet_gamma_analytic(1, 1, 40)
    assert np.allclose(s.expanded(), [v for v in brute if v <= 40], rtol=1e-15)
    assert s.values[0] == pytest.approx(PI2 / 4, rel=1e-15)


def test_limit_problem_ranges():
    with pytest.raises(ValueError):
        LimitProblem("A_qr", 0.0, 0.25)
    with pytest.raises(ValueError):
        LimitProblem("A_r", r=0.0)
    with pytest.raises(ValueError):
        LimitProblem("A_q", math.inf)
    with pytest.raises(ValueError):
        LimitProblem("B")


@pytest.mark.parametrize(
    "alpha,beta,variant",
    [(2, -1, "A_qr"), (4, 0, "A_q"), (1, -1, "A_r"), (1, 0, "A")],
)
def test_limit_problem_for_regime(alpha, beta, variant):
    p = LimitProblem.for_regime(classify_regime(alpha, beta, ShapeSpec()))
    assert p.variant == variant
    if variant == "A_qr":
        assert (p.q, p.r) == pytest.approx((1.6, 0.25), rel=1e-15)
    if variant == "A_q":
        assert p.q == 0.0


# ------------------------------------------------------------ FEM limit spectra


def test_spectrum_A_coarse_kernel():
    ops = mesh_rectangle(BaseDomain(), 0.5)
    s = spectrum_A(ops, 100)
    assert abs(s.values[0]) < 1e-9


def test_spectrum_A_matches_analytic(unit_ops):
    s = spectrum_A(unit_ops(64), 25)
    ref = neumann_rectangle_analytic(1, 1, 25)
    assert list(s.multiplicities) == list(ref.multiplicities)
    assert np.allclose(s.values[1:], ref.values[1:], rtol=1e-2)


def test_spectrum_Aq_merge():
    ops = mesh_rectangle(BaseDomain(), 1 / 32)
    s = spectrum_Aq(ops, Q, 25)
    assert np.allclose(s.values, [0, 1.6, PI2, 2 * PI2], rtol=1e-2, atol=1e-9)
    assert s.tags[1] == (ESSENTIAL,)
    assert s.tagged(ESSENTIAL).sum() == 1


def test_spectrum_Aq_coincident(unit_ops):
    ops = unit_ops(16)
    base = spectrum_A(ops, 25)
    q = float(base.values[1])
    s = spectrum_Aq(ops, q, 25)
    assert s.multiplicities[1] == base.multiplicities[1] + 1
    assert ESSENTIAL in s.tags[1]


def test_spectrum_Aq_beyond_window(unit_ops):
    ops = unit_ops(16)
    a, b = spectrum_A(ops, 25), spectrum_Aq(ops, 30.0, 25)
    assert np.array_equal(a.values, b.values) and not b.tagged(ESSENTIAL).any()


def test_spectrum_Aq_zero_is_tagged(unit_ops):
    s = spectrum_Aq(unit_ops(16), 0.0, 25)
    assert s.multiplicities[0] == 2 and ESSENTIAL in s.tags[0]


def test_spectrum_Ar_small_r_tends_to_neumann(unit_ops):
    ops = unit_ops(16)
    a = spectrum_A(ops, 60).expanded()
    b = spectrum_Ar(ops, 1e-8, 60).expanded()
    assert len(a) == len(b)
    assert np.allclose(a, b, rtol=1e-6, atol=1e-9)


def test_spectrum_Ar_matches_oracle(unit_ops):
    s = spectrum_Ar(unit_ops(64), 1.0, 30).expanded()
    ref = separable_oracle(1, 1, LimitProblem("A_r", r=1.0), 30).expanded()
    assert abs(s[0]) < 1e-9
    assert s[1] == pytest.approx(ref[1], rel=1e-2)


def test_spectrum_Ar_constant_kernel(unit_ops):
    ops = unit_ops(16)
    spec = eigs_in_interval(ops.K.full(), ops.M.full() + R * ops.G_lifted, -1e-8, 1.0, vectors=True)
    v = spec.vectors[:, 0]
    assert abs(spec.values[0]) < 1e-9 and np.ptp(v) < 1e-8 * np.abs(v).max()


def test_robin_zero_is_neumann(unit_ops):
    ops = unit_ops(32)
    assert np.allclose(robin_eigenvalues(ops, 0.0, 4).expanded(), spectrum_A(ops, 25).expanded(), rtol=1e-9, atol=1e-9)


def test_robin_large_negative_approaches_dirichlet(unit_ops):
    ops = unit_ops(32)
    lam = robin_eigenvalues(ops, -1e6, 1).values[0]
    lam_d = dirichlet_gamma_eigenvalues(ops, 1).values[0]
    assert lam <= lam_d
    assert lam == pytest.approx(PI2 / 4, rel=1e-2)
    assert lam == pytest.approx(lam_d, rel=1e-4)


def test_robin_positive_mu_negative_eigenvalue(unit_ops):
    s = robin_eigenvalues(unit_ops(16), 4.0, 2)
    assert s.values[0] < 0


@pytest.mark.parametrize("n", [8, 16])
def test_robin_monotone_in_mu(unit_ops, n):
    ops = unit_ops(n)
    mus = np.linspace(-30.0, 30.0, 20)
    pts = robin_curve(ops, mus, 8)
    table = np.array([p.lambda_k_mu for p in pts]).reshape(20, 8)
    tol = 1e-9 * np.maximum(1.0, np.abs(table[1:]))
    assert np.all(table[:-1] >= table[1:] - tol)


def test_dirichlet_fem_above_analytic():
    ref = dirichlet_gamma_analytic(1, 1, 40).expanded()[:4]
    gaps = []
    for n in (16, 32):
        fem = dirichlet_gamma_eigenvalues(mesh_rectangle(BaseDomain(), 1 / n), 4).expanded()
        assert np.all(fem >= ref * (1 - 1e-12))
        assert fem[0] > 0
        gaps.append(np.max(fem - ref))
    assert gaps[1] < 0.5 * gaps[0]


def test_k0_values(unit_ops):
    ops = unit_ops(32)
    assert compute_k0(ops, 1.6) == 0
    assert compute_k0(ops, 3.0) == 1
    assert compute_k0(ops, 1e-9) == 0
    assert compute_k0(ops, 15.0) == 2


def test_k0_degenerate(unit_ops):
    ops = unit_ops(16)
    lam_d = dirichlet_gamma_eigenvalues(ops, 1).values[0]
    with pytest.raises(DegenerateConfigurationError, match="perturb"):
        compute_k0(ops, lam_d * (1 + 1e-8))
    assert compute_k0(ops, lam_d * (1 + 1e-4)) == 1


# ------------------------------------------------------------ A_qr


@pytest.fixture(scope="module")
def qr32(unit_ops):
    ops = unit_ops(32)
    fp = spectrum_Aqr_fixedpoint(ops, Q, R, 30, window=1e-2)
    block = spectrum_Aqr_block(ops, Q, R, 30)
    return ops, fp, block


def test_fixedpoint_structure(qr32):
    _, fp, _ = qr32
    plus = [b for b in fp if b.branch == "plus"]
    minus = [b for b in fp if b.branch == "minus"]
    assert plus[0].k == 1 and plus[0].lam == 0.0
    assert all(b.lam < Q for b in plus) and all(b.lam > Q for b in minus)
    lp = [b.lam for b in plus]
    assert all(b > a for a, b in zip(lp, lp[1:]))
    lm = [b.lam for b in minus]
    assert all(b >= a for a, b in zip(lm, lm[1:]))
    assert [b.k for b in plus] == list(range(1, len(plus) + 1))
    assert [b.k for b in minus] == list(range(1, len(minus) + 1))
    assert all(b.bisection_width <= 1e-9 * max(1.0, Q) for b in fp)


def test_fixedpoint_mu_consistency(qr32):
    # the root brackets a sign change of lambda_k(mu(lambda)) - lambda
    ops, fp, _ = qr32
    for b in fp[1:6] + [x for x in fp if x.branch == "minus"]:
        assert b.mu_at_solution == pytest.approx(b.lam * Q * R / (Q - b.lam), rel=1e-12)
        w = max(b.bisection_width, 1e-10)
        g = []
        for lam in (b.lam - w, b.lam + w):
            mu = lam * Q * R / (Q - lam)
            g.append(robin_eigenvalues(ops, mu, b.k).expanded()[b.k - 1] - lam)  # k0 = 0 here
        assert g[0] > 0 > g[1]


def test_fixedpoint_matches_block(qr32):
    _, fp, block = qr32
    b = block.values[~block.tagged(CLUSTER)]
    f = np.array(sorted(x.lam for x in fp))
    assert len(b) == len(f)
    assert np.allclose(b, f, rtol=1e-6, atol=1e-9)


def test_block_kernel_and_cluster(unit_ops):
    counts = []
    for n in (16, 32):
        s = spectrum_Aqr_block(unit_ops(n), Q, R, 30)
        assert abs(s.values[0]) < 1e-9
        counts.append(int(s.multiplicities[s.tagged(CLUSTER)].sum()))
    assert counts[1] > counts[0] > 0


def test_plus_accumulation_bounded(unit_ops):
    fp = spectrum_Aqr_fixedpoint(unit_ops(32), Q, R, 30)
    lp = [b.lam for b in fp if b.branch == "plus"]
    assert len(lp) > 15
    assert all(b > a for a, b in zip(lp, lp[1:])) and lp[-1] < Q
    assert Q - lp[-1] < 1e-2 * Q


def test_minus_roots_below_paired_dirichlet(unit_ops):
    ops = unit_ops(32)
    for q in (1.6, 3.0):
        k0 = compute_k0(ops, q)
        fp = spectrum_Aqr_fixedpoint(ops, q, R, 30, window=1e-2)
        minus = [b for b in fp if b.branch == "minus"]
        dirichlet = dirichlet_gamma_eigenvalues(ops, k0 + len(minus)).expanded()
        for b in minus:
            assert b.lam < dirichlet[k0 + b.k - 1]


def test_minus_count_can_exceed_dirichlet_count():
    # exact separable data: four minus roots below 30 but only three Dirichlet values in (q, 30]
    orc = separable_oracle(1, 1, LimitProblem("A_qr", Q, R), 30)
    minus = orc.values[orc.values > Q]
    dirichlet = dirichlet_gamma_analytic(1, 1, 30).values
    assert len(minus) == 4
    assert ((dirichlet > Q) & (dirichlet <= 30)).sum() == 3


def test_branches_to_spectrum_tags(qr32):
    _, fp, _ = qr32
    s = branches_to_spectrum(fp)
    assert s.tags[0] == ("branch+",) and s.tags[-1] == ("branch-",)


# ------------------------------------------------------------ separable oracle


def test_oracle_neumann_degenerate_case():
    s = separable_oracle(1, 1, LimitProblem("A"), 50)
    assert np.allclose(s.expanded(), neumann_rectangle_analytic(1, 1, 50).expanded(), rtol=1e-12, atol=1e-12)


def test_oracle_small_r_tends_to_neumann():
    s = separable_oracle(1, 1, LimitProblem("A_r", r=1e-9), 50).expanded()
    assert np.allclose(s, neumann_rectangle_analytic(1, 1, 50).expanded(), rtol=1e-6, atol=1e-9)


def test_oracle_zero_root():
    for prob in (LimitProblem("A_r", r=0.7), LimitProblem("A_qr", Q, R)):
        assert separable_oracle(1, 1, prob, 20).values[0] == 0.0


def test_oracle_steklov_first_root():
    # p = 0 mode cos(t (y + 1)), t^2 = lam, outward derivative -t sin t = lam r cos t
    r = 0.25
    s = separable_oracle(1, 1, LimitProblem("A_r", r=r), 30)
    lam = s.values[1]
    t = math.sqrt(lam)
    assert abs(t * math.sin(t) + lam * r * math.cos(t)) < 1e-9
    assert 0 < lam < PI2


def test_oracle_qr_window_excluded():
    s = separable_oracle(1, 1, LimitProblem("A_qr", Q, R), 30, window=1e-2)
    assert not np.any((s.values > Q * 0.99) & (s.values < Q * 1.01))
    plus = s.values[s.values < Q]
    assert all(t == ("branch+",) for v, t in zip(s.values, s.tags) if v < Q)
    assert len(plus) > 5


# ------------------------------------------------------------ dispatch


def test_sigma0_dispatch(unit_ops):
    ops = unit_ops(16)
    shape = ShapeSpec()
    a = sigma0_for_regime(classify_regime(1, 0, shape), ops, 25)
    assert np.array_equal(a.values, spectrum_A(ops, 25).values)
    z = sigma0_for_regime(classify_regime(4, 0, shape), ops, 25)
    assert z.multiplicities[0] == 2 and ESSENTIAL in z.tags[0]
    r = sigma0_for_regime(classify_regime(1, -1, shape), ops, 25)
    assert np.allclose(r.values, spectrum_Ar(ops, 0.25, 25).values)
    qr = sigma0_for_regime(classify_regime(2, -1, shape), ops, 25)
    assert ESSENTIAL in qr.tags[int(np.argmin(abs(qr.values - Q)))]
    assert qr.tagged(CLUSTER).any()
