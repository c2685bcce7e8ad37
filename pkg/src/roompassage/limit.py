"""Spectra of the limit operators on the base rectangle.

Four limit problems appear depending on the (q, r) regime:

* ``A``    -- Neumann Laplacian,
* ``A_q``  -- Neumann Laplacian plus the isolated essential point ``q``,
* ``A_r``  -- Laplacian with ``du/dn = lambda r u`` on Gamma,
* ``A_qr`` -- Laplacian with ``du/dn = lambda q r / (q - lambda) u`` on Gamma,
  realized either as a two-field pencil or through Robin eigenvalue curves.

The Robin route uses ``lambda_k(mu)``, the eigenvalues with ``du/dn = mu u`` on
Gamma.  ``lambda`` is an eigenvalue of ``A_qr`` iff ``lambda = lambda_k(mu(lambda))``
with ``mu(lambda) = lambda q r / (q - lambda)``.  Because ``lambda_k`` is
nonincreasing in ``mu`` the function ``g_k(lambda) = lambda_k(mu(lambda)) - lambda``
is decreasing on each side of the pole, and its sign at ``lambda`` is decided by a
single inertia count of ``K - mu(lambda) G - lambda M``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .assembly import (
    SparseSymMatrix,
    TraceMap,
    assemble_Aqr_blocks,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    lift_boundary_mass,
)
from .eigensolve import (
    EigSolveOptions,
    ShiftedFactorization,
    SingularShiftError,
    Spectrum,
    count_below,
    eigs_in_interval,
    eigs_smallest,
)
from .geometry import RegimeClass
from .mesh import TriMesh

log = logging.getLogger(__name__)

ZERO_MARGIN = 1e-8
ESSENTIAL = "essential-limit"
CLUSTER = "essential-limit-cluster"
PLUS, MINUS = "branch+", "branch-"


class DegenerateConfigurationError(ValueError):
    """``q`` (nearly) coincides with a Dirichlet-on-Gamma eigenvalue."""


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class LimitProblem:
    variant: str
    q: float = math.inf
    r: float = 0.0

    def __post_init__(self):
        if self.variant not in ("A", "A_q", "A_r", "A_qr"):
            raise ValueError(f"unknown limit variant {self.variant!r}")
        if self.variant in ("A_q", "A_qr") and not (math.isfinite(self.q) and self.q >= 0):
            raise ValueError(f"{self.variant} needs finite q >= 0, got {self.q}")
        if self.variant == "A_qr" and self.q <= 0:
            raise ValueError("A_qr needs q > 0")
        if self.variant in ("A_r", "A_qr") and not (math.isfinite(self.r) and self.r > 0):
            raise ValueError(f"{self.variant} needs finite r > 0, got {self.r}")

    @classmethod
    def for_regime(cls, regime: RegimeClass) -> "LimitProblem":
        variant = regime.limit_operator
        if variant == "A_qr" and regime.q_kind == "zero":
            # q = 0: the two-field operator splits into A plus the null operator
            return cls("A_q", 0.0, regime.r_value)
        return cls(variant, regime.q_value, regime.r_value)


@dataclass(frozen=True)
class RobinCurvePoint:
    mu: float
    k: int
    lambda_k_mu: float


@dataclass(frozen=True)
class BranchEigenvalue:
    k: int
    branch: str  # "plus" or "minus"
    lam: float
    mu_at_solution: float
    bisection_width: float


class BaseOperators:
    """Assembled operators of the base mesh, built once and shared."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh

    @cached_property
    def K(self) -> SparseSymMatrix:
        return assemble_stiffness(self.mesh)

    @cached_property
    def M(self) -> SparseSymMatrix:
        return assemble_mass(self.mesh)

    @cached_property
    def trace(self) -> TraceMap:
        return TraceMap.from_mesh(self.mesh)

    @cached_property
    def G(self) -> SparseSymMatrix:
        return assemble_boundary_mass(self.mesh, self.trace)

    @cached_property
    def G_lifted(self) -> sp.csc_matrix:
        return lift_boundary_mass(self.G, self.trace).full()

    @cached_property
    def interior(self) -> np.ndarray:
        keep = np.ones(self.mesh.n_vertices, dtype=bool)
        keep[self.trace.vertex_ids] = False
        return np.flatnonzero(keep)

    def dirichlet_pencil(self):
        idx = self.interior
        return self.K.full()[idx][:, idx], self.M.full()[idx][:, idx]

    def robin_matrix(self, mu: float) -> sp.csc_matrix:
        return (self.K.full() - mu * self.G_lifted).tocsc()


def _ops(mesh_or_ops) -> BaseOperators:
    return mesh_or_ops if isinstance(mesh_or_ops, BaseOperators) else BaseOperators(mesh_or_ops)


# ------------------------------------------------------------ analytic forms


def neumann_rectangle_analytic(W: float, H: float, Lambda: float) -> Spectrum:
    """Eigenvalues ``pi^2 (p^2/W^2 + m^2/H^2) <= Lambda`` with multiplicities."""
    if min(W, H, Lambda) <= 0:
        raise ValueError("W, H and Lambda must be positive")
    vals = []
    for p in range(int(W * math.sqrt(Lambda) / math.pi) + 2):
        for m in range(int(H * math.sqrt(Lambda) / math.pi) + 2):
            v = math.pi**2 * (p**2 / W**2 + m**2 / H**2)
            if v <= Lambda:
                vals.append(v)
    return Spectrum.from_values(vals)


def dirichlet_gamma_analytic(W: float, H: float, Lambda: float) -> Spectrum:
    """Dirichlet on the top side, Neumann elsewhere: ``pi^2 (p^2/W^2 + (m+1/2)^2/H^2)``."""
    vals = []
    for p in range(int(W * math.sqrt(Lambda) / math.pi) + 2):
        for m in range(int(H * math.sqrt(Lambda) / math.pi) + 2):
            v = math.pi**2 * (p**2 / W**2 + (m + 0.5) ** 2 / H**2)
            if v <= Lambda:
                vals.append(v)
    return Spectrum.from_values(vals)


# ------------------------------------------------------------ FEM spectra


def spectrum_A(mesh_omega, Lambda: float, opts: Optional[EigSolveOptions] = None) -> Spectrum:
    ops = _ops(mesh_omega)
    return eigs_in_interval(ops.K, ops.M, -ZERO_MARGIN, Lambda, opts)


def spectrum_Aq(mesh_omega, q: float, Lambda: float, opts: Optional[EigSolveOptions] = None) -> Spectrum:
    spec = spectrum_A(mesh_omega, Lambda, opts)
    if q <= Lambda:
        spec = spec.with_point(q, ESSENTIAL)
    return spec


def spectrum_Ar(mesh_omega, r: float, Lambda: float, opts: Optional[EigSolveOptions] = None) -> Spectrum:
    """Pencil ``(K, M + r G)``: mass ``int u^2 + r int_Gamma u^2``."""
    if r <= 0:
        raise ValueError("r must be positive")
    ops = _ops(mesh_omega)
    return eigs_in_interval(ops.K.full(), ops.M.full() + r * ops.G_lifted, -ZERO_MARGIN, Lambda, opts)


def robin_eigenvalues(mesh_omega, mu: float, k: int, opts: Optional[EigSolveOptions] = None) -> Spectrum:
    """``k`` smallest eigenvalues with ``du/dn = mu u`` on Gamma (negative for large ``mu``)."""
    ops = _ops(mesh_omega)
    return eigs_smallest(ops.robin_matrix(mu), ops.M.full(), k, opts, vectors=False)


def robin_curve(mesh_omega, mus, k: int, opts: Optional[EigSolveOptions] = None) -> List[RobinCurvePoint]:
    ops = _ops(mesh_omega)
    out = []
    for mu in mus:
        vals = robin_eigenvalues(ops, float(mu), k, opts).expanded()
        out.extend(RobinCurvePoint(float(mu), j + 1, float(v)) for j, v in enumerate(vals))
    return out


def dirichlet_gamma_eigenvalues(mesh_omega, k: int, opts: Optional[EigSolveOptions] = None) -> Spectrum:
    ops = _ops(mesh_omega)
    Kd, Md = ops.dirichlet_pencil()
    return eigs_smallest(Kd, Md, k, opts, vectors=False)


def compute_k0(mesh_omega, q: float, opts: Optional[EigSolveOptions] = None, tol: float = 1e-6) -> int:
    """Number of Dirichlet-on-Gamma eigenvalues not exceeding ``q``."""
    if q <= 0:
        return 0
    ops = _ops(mesh_omega)
    Kd, Md = ops.dirichlet_pencil()
    delta = tol * max(1.0, q)
    try:
        below = count_below(Kd, Md, q - delta, opts)
        above = count_below(Kd, Md, q + delta, opts)
    except SingularShiftError as exc:
        raise DegenerateConfigurationError(f"q={q} is within {delta:g} of a Dirichlet eigenvalue; perturb q") from exc
    if below != above:
        raise DegenerateConfigurationError(f"q={q} is within {delta:g} of a Dirichlet eigenvalue; perturb q")
    return below


def spectrum_Aqr_block(
    mesh_omega,
    q: float,
    r: float,
    Lambda: float,
    opts: Optional[EigSolveOptions] = None,
    window: float = 1e-2,
) -> Spectrum:
    """Eigenvalues of the two-field pencil; values within ``q(1 +- window)`` are
    tagged as the discrete image of the essential point."""
    ops = _ops(mesh_omega)
    S, B = assemble_Aqr_blocks(ops.K, ops.M, ops.G, ops.trace, q, r)
    spec = eigs_in_interval(S, B, -ZERO_MARGIN, Lambda, opts)
    return spec.tag_window(q * (1 - window), q * (1 + window), CLUSTER)


# ------------------------------------------------------------ fixed point


class _BranchCounter:
    """``count(lam)`` = number of ``k`` with ``lambda_k(mu(lam)) < lam``."""

    def __init__(self, ops: BaseOperators, q: float, r: float, opts: EigSolveOptions):
        self.K = ops.K.full()
        self.M = ops.M.full()
        self.G = ops.G_lifted
        self.q, self.qr = q, q * r
        self.opts = opts
        self.evaluations = 0

    def mu(self, lam: float) -> float:
        return lam * self.qr / (self.q - lam)

    def __call__(self, lam: float) -> int:
        self.evaluations += 1
        S = (self.K - self.mu(lam) * self.G).tocsc()
        return ShiftedFactorization(S, self.M, lam, self.opts).negatives

    def nudged(self, lam: float, lo: float, hi: float) -> Tuple[float, int]:
        step = 1e-6 * (hi - lo)
        for j in range(12):
            x = lam + (0.0 if j == 0 else (-1) ** j * step * (j + 1) / 2)
            if lo < x < hi:
                try:
                    return x, self(x)
                except SingularShiftError:
                    continue
        raise SingularShiftError(lam)


def _bisect_all(counter: _BranchCounter, a: float, ca: int, b: float, cb: int, width: float):
    """Brackets ``(k, lo, hi)``, ``hi - lo <= width``, for every index ``k`` in ``(ca, cb]``."""
    out = []
    stack = [(a, ca, b, cb)]
    while stack:
        a, ca, b, cb = stack.pop()
        if cb <= ca:
            continue
        if b - a <= width:
            out.extend((k, a, b) for k in range(ca + 1, cb + 1))
            continue
        m, cm = counter.nudged(0.5 * (a + b), a, b)
        stack.append((m, cm, b, cb))
        stack.append((a, ca, m, cm))
    return sorted(out)


def spectrum_Aqr_fixedpoint(
    mesh_omega,
    q: float,
    r: float,
    Lambda: float,
    opts: Optional[EigSolveOptions] = None,
    width_rtol: float = 1e-9,
    window: Optional[float] = None,
    max_ladder: int = 60,
) -> List[BranchEigenvalue]:
    """Eigenvalues of ``A_qr`` in ``[0, Lambda]`` as intersections of the Robin
    curves with the two branches of ``mu = lambda q r / (q - lambda)``.

    Each root is bracketed by bisection on the sign of ``g_k`` down to
    ``width_rtol * max(1, q)``.  With ``window`` set, plus-branch roots above
    ``q (1 - window)`` and minus-branch roots below ``q (1 + window)`` are
    counted but not resolved.
    """
    opts = opts or EigSolveOptions()
    if q <= 0 or r <= 0:
        raise ValueError("q and r must be positive")
    ops = _ops(mesh_omega)
    k0 = compute_k0(ops, q, opts)
    counter = _BranchCounter(ops, q, r, opts)
    width = width_rtol * max(1.0, q)
    out: List[BranchEigenvalue] = [BranchEigenvalue(1, "plus", 0.0, 0.0, 0.0)]

    # plus branch: ladder q(1 - 2^-j) brackets the roots accumulating at q
    plus_top = q * (1.0 - window) if window else q
    a, ca = 0.0, 1  # lambda_1(mu) < lam for every small lam > 0
    brackets = []
    for j in range(1, max_ladder + 1):
        b = q * (1.0 - 2.0**-j)
        if b <= a:
            continue
        last = b >= plus_top or q - b <= width
        if last:
            b = min(b, plus_top)
        b, cb = counter.nudged(b, a, q)
        brackets += _bisect_all(counter, a, ca, b, cb, width)
        a, ca = b, cb
        if last:
            break
    for k, lo, hi in brackets:
        lam = 0.5 * (lo + hi)
        if lam <= Lambda:
            out.append(BranchEigenvalue(k, "plus", lam, counter.mu(lam), hi - lo))
    log.info("plus branch: %d roots resolved below %.6g", len(brackets) + 1, a)

    # minus branch: count(q+) = k0, curve k0 + k meets the branch once
    cap = Lambda * (1.0 + 1e-3)
    if cap > q:
        lo = q * (1.0 + window) if window else q
        c_lo = k0
        if window:
            lo, c_lo = counter.nudged(lo, q, cap)
        hi, c_hi = counter.nudged(cap, q, 2 * cap)
        for k, a_, b_ in _bisect_all(counter, lo, c_lo, hi, c_hi, width):
            lam = 0.5 * (a_ + b_)
            if lam <= Lambda:
                out.append(BranchEigenvalue(k - k0, "minus", lam, counter.mu(lam), b_ - a_))
        if window and c_lo > k0:
            log.info("minus branch: %d roots inside the q-window left unresolved", c_lo - k0)
    log.info("fixed point: %d roots, %d inertia evaluations", len(out), counter.evaluations)
    return out


def branches_to_spectrum(branches: List[BranchEigenvalue], merge_rtol: float = 1e-8) -> Spectrum:
    vals = [b.lam for b in branches]
    spec = Spectrum.from_values(vals, merge_rtol)
    tags = []
    for v in spec.values:
        names = sorted({PLUS if b.branch == "plus" else MINUS for b in branches if abs(b.lam - v) <= merge_rtol * max(1.0, abs(v))})
        tags.append(tuple(names))
    spec.tags = tuple(tags)
    return spec


# ------------------------------------------------------------ separable oracle


def _char_fn(lam: float, c_p: float, H: float, problem: LimitProblem) -> float:
    """Sign-faithful characteristic function of the transverse 1-D problem.

    With ``s = lam - c_p`` the solution with ``f'(-H) = 0`` is ``cos(sqrt(s)(y+H))``
    (``cosh`` for ``s < 0``); the top condition ``f'(0) = mu f(0)`` becomes
    ``phi + mu psi = 0``.  For ``A_qr`` the relation is multiplied by ``q - lam``,
    and for ``s < 0`` it is divided by ``cosh``.
    """
    s = lam - c_p
    if s >= 0:
        t = math.sqrt(s)
        phi, psi = t * math.sin(t * H), math.cos(t * H)
    else:
        t = math.sqrt(-s)
        phi, psi = -t * math.tanh(t * H), 1.0
    if problem.variant == "A_r":
        return phi + lam * problem.r * psi
    if problem.variant == "A_qr":
        return (problem.q - lam) * phi + lam * problem.q * problem.r * psi
    if problem.variant in ("A", "A_q"):
        return phi
    raise ValueError(problem.variant)


def _scan_roots(f, lo: float, hi: float, n0: int, max_halvings: int) -> List[float]:
    """Sign-change roots of ``f`` on ``(lo, hi]``, grid halved until the count settles."""
    if hi <= lo:
        return []

    def brackets(n):
        xs = np.linspace(lo, hi, n + 1)
        fs = np.array([f(x) for x in xs])
        sg = np.sign(fs)
        out = []
        for i in range(n):
            if sg[i + 1] == 0:
                out.append((xs[i + 1], xs[i + 1]))
            elif sg[i] != 0 and sg[i] != sg[i + 1]:
                out.append((xs[i], xs[i + 1]))
        return out

    n = n0
    prev = brackets(n)
    for _ in range(max_halvings):
        n *= 2
        cur = brackets(n)
        step = (hi - lo) / n
        roots_mid = [0.5 * (a + b) for a, b in cur]
        gap = min(np.diff(roots_mid)) if len(roots_mid) > 1 else math.inf
        if len(cur) == len(prev) and step <= 0.5 * gap:
            return [a if a == b else brentq(f, a, b, xtol=1e-14, rtol=1e-15) for a, b in cur]
        prev = cur
    raise OracleError(f"root count did not stabilise on [{lo}, {hi}] after {max_halvings} halvings")


def separable_oracle(
    W: float,
    H: float,
    problem: LimitProblem,
    Lambda: float,
    window: float = 1e-2,
    max_halvings: int = 6,
    p_max: int = 10_000,
) -> Spectrum:
    """Eigenvalues on the rectangle by separation ``u = cos(p pi x / W) f(y)``.

    For ``A_qr`` the roots inside ``q (1 +- window)`` are not resolved (there are
    infinitely many accumulating at ``q``); values carry branch tags.
    """
    lo_eps = 1e-12 * max(1.0, Lambda)
    vals: List[float] = []
    for p in range(p_max):
        c_p = (p * math.pi / W) ** 2

        def f(lam, c_p=c_p):
            return _char_fn(lam, c_p, H, problem)

        found: List[float] = []
        if problem.variant == "A_qr":
            q = problem.q
            pieces = [(lo_eps, min(Lambda, q * (1 - window))), (q * (1 + window), Lambda)]
        else:
            pieces = [(lo_eps, Lambda)]
        for a, b in pieces:
            found += _scan_roots(f, a, b, 256, max_halvings)
        if p == 0:
            found = [0.0] + found
        vals.extend(found)
        if c_p > Lambda and not found:
            if problem.variant == "A_r":
                # lam r < t tanh(t H) for all lam <= Lambda: no further roots
                t = math.sqrt(c_p - Lambda)
                if Lambda * problem.r < t * math.tanh(t * H):
                    break
            else:
                break
    else:
        raise OracleError("transverse index did not terminate")
    order = np.argsort(vals, kind="stable")
    vals_sorted = np.asarray(vals)[order]
    spec = Spectrum.from_values(vals_sorted)
    if problem.variant == "A_qr":
        spec.tags = tuple((PLUS,) if v < problem.q else (MINUS,) for v in spec.values)
    return spec


def separable_dirichlet(W: float, H: float, Lambda: float) -> Spectrum:
    return dirichlet_gamma_analytic(W, H, Lambda)


# ------------------------------------------------------------ dispatch


def sigma0_for_regime(
    regime: RegimeClass,
    mesh_omega,
    Lambda: float,
    opts: Optional[EigSolveOptions] = None,
    window: float = 1e-2,
) -> Spectrum:
    """Limit spectrum on ``[0, Lambda]`` selected by the (q, r) case table."""
    problem = LimitProblem.for_regime(regime)
    if problem.variant == "A":
        return spectrum_A(mesh_omega, Lambda, opts)
    if problem.variant == "A_q":
        return spectrum_Aq(mesh_omega, problem.q, Lambda, opts)
    if problem.variant == "A_r":
        return spectrum_Ar(mesh_omega, problem.r, Lambda, opts)
    spec = spectrum_Aqr_block(mesh_omega, problem.q, problem.r, Lambda, opts, window)
    if problem.q <= Lambda:
        spec = spec.with_point(problem.q, ESSENTIAL)
    return spec
