"""Sparse symmetric generalized eigenproblems ``S u = lambda B u``.

Eigenvalues in an interval are found by spectrum slicing: the number of
eigenvalues below a shift ``sigma`` is the negative inertia of ``S - sigma B``
(Sylvester), read off the pivots of a symmetric LDL^T factorization.  Each
slice holding at most ``block_size`` eigenvalues is then solved by
shift-invert Lanczos around its midpoint, reusing that factorization.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .assembly import MatrixLike, as_csc

log = logging.getLogger(__name__)

DENSE_ORACLE_LIMIT = 2000


class EigSolveError(RuntimeError):
    pass


class SingularShiftError(EigSolveError):
    """``S - sigma B`` is numerically singular; perturb the shift."""

    def __init__(self, shift: float, message: str = ""):
        self.shift = shift
        super().__init__(message or f"S - sigma*B is numerically singular at sigma={shift!r}")


class ConvergenceError(EigSolveError):
    pass


class CertificationError(EigSolveError):
    pass


@dataclass(frozen=True)
class EigSolveOptions:
    tol: float = 1e-9
    max_iter: int = 5000
    block_size: int = 24
    pad: int = 6
    merge_rtol: float = 1e-8
    pivot_rtol: float = 1e-14
    seed: int = 20240607

    def __post_init__(self):
        if not 0.0 < self.tol < 1e-3:
            raise ValueError(f"tolerance must lie in (0, 1e-3), got {self.tol}")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")


@dataclass
class Spectrum:
    """Ascending distinct eigenvalues with multiplicities, tags and residuals.

    ``vectors`` (optional) holds one column per eigenvalue counted with
    multiplicity, in ascending order.
    """

    values: np.ndarray
    multiplicities: np.ndarray
    tags: Tuple[Tuple[str, ...], ...] = ()
    residuals: Optional[np.ndarray] = None
    vectors: Optional[np.ndarray] = field(default=None, repr=False)
    certified_count: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.multiplicities = np.asarray(self.multiplicities, dtype=np.int64)
        if not self.tags:
            self.tags = tuple(() for _ in self.values)
        if self.residuals is None:
            self.residuals = np.zeros(len(self.values))
        if len(self.values) > 1 and np.any(np.diff(self.values) <= 0):
            raise ValueError("spectrum values must be strictly ascending")
        if np.any(self.multiplicities < 1):
            raise ValueError("multiplicities must be >= 1")

    @classmethod
    def empty(cls, certified_count: Optional[int] = 0) -> "Spectrum":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), certified_count=certified_count)

    @classmethod
    def from_values(
        cls,
        values: Sequence[float],
        merge_rtol: float = 1e-8,
        residuals: Optional[Sequence[float]] = None,
        vectors: Optional[np.ndarray] = None,
        tag: Optional[str] = None,
        certified_count: Optional[int] = None,
    ) -> "Spectrum":
        vals = np.asarray(values, dtype=float)
        order = np.argsort(vals, kind="stable")
        vals = vals[order]
        res = np.zeros(len(vals)) if residuals is None else np.asarray(residuals, dtype=float)[order]
        if vectors is not None:
            vectors = vectors[:, order]
        groups = merge_groups(vals, merge_rtol)
        out_v = np.array([vals[g].mean() for g in groups])
        out_m = np.array([len(g) for g in groups], dtype=np.int64)
        out_r = np.array([res[g].max() for g in groups])
        tags = tuple((tag,) if tag else () for _ in groups)
        return cls(out_v, out_m, tags, out_r, vectors, certified_count)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    def expanded(self) -> np.ndarray:
        """Values repeated according to multiplicity."""
        return np.repeat(self.values, self.multiplicities)

    def restrict(self, lo: float, hi: float) -> "Spectrum":
        sel = (self.values >= lo) & (self.values <= hi)
        vec = None
        if self.vectors is not None:
            cols = np.repeat(sel, self.multiplicities)
            vec = self.vectors[:, cols]
        return Spectrum(
            self.values[sel],
            self.multiplicities[sel],
            tuple(t for t, s in zip(self.tags, sel) if s),
            self.residuals[sel],
            vec,
        )

    def with_point(self, value: float, tag: str, merge_rtol: float = 1e-8, multiplicity: int = 1) -> "Spectrum":
        """Add one value, merging it (and its tag) into a coinciding value."""
        vals = list(self.values)
        mult = list(self.multiplicities)
        tags = [tuple(t) for t in self.tags]
        res = list(self.residuals)
        for k, v in enumerate(vals):
            if abs(v - value) <= merge_rtol * max(1.0, abs(v)):
                mult[k] += multiplicity
                if tag not in tags[k]:
                    tags[k] = tags[k] + (tag,)
                return Spectrum(np.array(vals), np.array(mult), tuple(tags), np.array(res), None, self.certified_count)
        pos = int(np.searchsorted(self.values, value))
        vals.insert(pos, float(value))
        mult.insert(pos, multiplicity)
        tags.insert(pos, (tag,))
        res.insert(pos, 0.0)
        return Spectrum(np.array(vals), np.array(mult, dtype=np.int64), tuple(tags), np.array(res), None, self.certified_count)

    def tag_window(self, lo: float, hi: float, tag: str) -> "Spectrum":
        tags = tuple(t + (tag,) if lo <= v <= hi and tag not in t else t for v, t in zip(self.values, self.tags))
        return replace(self, tags=tags)

    def tagged(self, tag: str) -> np.ndarray:
        return np.array([tag in t for t in self.tags], dtype=bool)


def merge_groups(sorted_values: np.ndarray, rtol: float) -> List[np.ndarray]:
    """Index groups of consecutive values closer than ``rtol * max(1, |v|)``."""
    if len(sorted_values) == 0:
        return []
    groups = [[0]]
    for k in range(1, len(sorted_values)):
        prev = sorted_values[groups[-1][-1]]
        if sorted_values[k] - prev <= rtol * max(1.0, abs(prev)):
            groups[-1].append(k)
        else:
            groups.append([k])
    return [np.array(g) for g in groups]


# ------------------------------------------------------------ factorization


class ShiftedFactorization:
    """Symmetric LDL^T factorization of ``S - sigma B`` with its inertia.

    SuperLU is run with diagonal pivoting only and a symmetric ordering, so
    ``P (S - sigma B) P^t = L U`` with ``U = D L^t``; the signs of ``diag(U)``
    are the inertia of ``S - sigma B``.
    """

    def __init__(self, S: sp.csc_matrix, B: sp.csc_matrix, sigma: float, opts: EigSolveOptions):
        self.sigma = float(sigma)
        A = (S - sigma * B).tocsc()
        try:
            lu = sla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise SingularShiftError(sigma, f"factorization breakdown at sigma={sigma!r}: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise EigSolveError(f"factorization at sigma={sigma!r} used off-diagonal pivots; inertia unavailable")
        d = lu.U.diagonal()
        scale = np.abs(d).max() if len(d) else 1.0
        if len(d) and np.abs(d).min() <= opts.pivot_rtol * scale:
            raise SingularShiftError(sigma)
        self.lu = lu
        self.n = A.shape[0]
        self.negatives = int(np.count_nonzero(d < 0))

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self.lu.solve(np.asarray(x, dtype=float))

    def operator(self) -> sla.LinearOperator:
        return sla.LinearOperator((self.n, self.n), matvec=self.solve, dtype=float)


def _pencil(S: MatrixLike, B: MatrixLike):
    Sc, Bc = as_csc(S), as_csc(B)
    if Sc.shape != Bc.shape or Sc.shape[0] != Sc.shape[1]:
        raise EigSolveError(f"pencil shapes disagree: {Sc.shape} vs {Bc.shape}")
    return Sc, Bc


def count_below(S: MatrixLike, B: MatrixLike, lam: float, opts: Optional[EigSolveOptions] = None) -> int:
    """Number of eigenvalues of ``(S, B)`` strictly below ``lam``."""
    opts = opts or EigSolveOptions()
    Sc, Bc = _pencil(S, B)
    return ShiftedFactorization(Sc, Bc, lam, opts).negatives


def _factor_near(Sc, Bc, sigma, width, opts, lo=None, hi=None):
    """Factor at ``sigma``, nudging the shift if it hits an eigenvalue."""
    last = None
    for k in range(8):
        s = sigma + (0.0 if k == 0 else ((-1) ** k) * width * 1e-7 * 3**k)
        if lo is not None and not lo < s < hi:
            continue
        try:
            return ShiftedFactorization(Sc, Bc, s, opts)
        except SingularShiftError as exc:
            last = exc
    raise last if last else SingularShiftError(sigma)


def _residuals(Sc, Bc, lam, V, s_norm, b_norm):
    R = Sc @ V - (Bc @ V) * lam[None, :]
    denom = (s_norm + np.abs(lam) * b_norm) * np.linalg.norm(V, axis=0)
    return np.linalg.norm(R, axis=0) / np.where(denom > 0, denom, 1.0)


def _norm1(A) -> float:
    return float(abs(A).sum(axis=0).max())


def _b_orthonormalize(V: np.ndarray, Bc) -> np.ndarray:
    G = V.T @ (Bc @ V)
    G = 0.5 * (G + G.T)
    C = la.cholesky(G, lower=False)
    return la.solve_triangular(C, V.T, trans="T", lower=False).T


def _solve_slice(Sc, Bc, a, b, count, fact, opts, rng_vec, attempts=5):
    """All ``count`` eigenpairs inside ``[a, b]`` using the factorization at its centre."""
    n = Sc.shape[0]
    center = fact.sigma
    radius = max(center - a, b - center)
    # the slice is (nearly) symmetric about its shift, so its own eigenvalues are
    # the ``count`` largest in shift-invert; padding only helps after a miss and
    # can stall Lanczos on a tight cluster just outside the slice
    k = count
    found = 0
    for attempt in range(attempts):
        if k >= n - 1:
            lam, V = la.eigh(Sc.toarray(), Bc.toarray())
        else:
            try:
                lam, V = sla.eigsh(
                    Sc,
                    k=k,
                    M=Bc,
                    sigma=center,
                    which="LM",
                    OPinv=fact.operator(),
                    v0=rng_vec,
                    tol=0.0,
                    maxiter=opts.max_iter,
                    ncv=min(n, max(2 * k + 1, 24)),
                )
            except sla.ArpackNoConvergence as exc:
                if attempt == attempts - 1:
                    raise ConvergenceError(f"Lanczos did not converge around sigma={center!r}") from exc
                k = min(n - 1, 2 * k)
                continue
        inside = (lam >= a) & (lam <= b)
        found = int(inside.sum())
        if found == count:
            return lam[inside], V[:, inside]
        if k >= n - 1:
            break
        k = min(n - 1, max(2 * k, k + opts.pad))
    raise CertificationError(
        f"slice [{a!r}, {b!r}] should hold {count} eigenvalues, Lanczos found {found}"
    )


def eigs_in_interval(
    S: MatrixLike,
    B: MatrixLike,
    lo: float,
    hi: float,
    opts: Optional[EigSolveOptions] = None,
    vectors: bool = False,
) -> Spectrum:
    """Every eigenvalue of ``(S, B)`` in ``[lo, hi]``, certified by inertia counts."""
    opts = opts or EigSolveOptions()
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    Sc, Bc = _pencil(S, B)
    n = Sc.shape[0]
    f_lo = ShiftedFactorization(Sc, Bc, lo, opts)
    f_hi = ShiftedFactorization(Sc, Bc, hi, opts)
    lo_count, hi_count = f_lo.negatives, f_hi.negatives
    expected = hi_count - lo_count
    if expected == 0:
        sp_ = Spectrum.empty(0)
        if vectors:
            sp_.vectors = np.zeros((n, 0))
        return sp_
    v0 = np.random.default_rng(opts.seed).uniform(0.5, 1.5, n)

    del f_lo, f_hi
    # depth-first, left to right; each slice is solved as soon as it is small
    # enough so only one factorization is alive at a time
    lams, vecs = [], []
    n_slices = 0
    stack = [(lo, lo_count, hi, hi_count)]
    while stack:
        a, ca, b, cb = stack.pop()
        cnt = cb - ca
        if cnt == 0:
            continue
        f_mid = _factor_near(Sc, Bc, 0.5 * (a + b), b - a, opts, a, b)
        tiny = b - a <= 1e-12 * max(1.0, abs(a), abs(b))
        if cnt <= opts.block_size or tiny:
            # a tight cluster far from the shift can hide copies from Lanczos;
            # bisecting brings a shift closer to it
            try:
                lam, V = _solve_slice(Sc, Bc, a, b, cnt, f_mid, opts, v0, attempts=5 if tiny else 2)
            except (CertificationError, ConvergenceError):
                if tiny:
                    raise
                log.debug("slice [%g, %g] unresolved at its centre; splitting", a, b)
            else:
                lams.append(lam)
                vecs.append(V)
                n_slices += 1
                continue
        m, cm = f_mid.sigma, f_mid.negatives
        del f_mid
        stack.append((m, cm, b, cb))
        stack.append((a, ca, m, cm))
    lam = np.concatenate(lams)
    V = np.concatenate(vecs, axis=1)
    order = np.argsort(lam, kind="stable")
    lam, V = lam[order], V[:, order]
    if len(lam) != expected:
        raise CertificationError(f"inertia count {expected} but {len(lam)} eigenvalues returned on [{lo}, {hi}]")

    groups = merge_groups(lam, opts.merge_rtol)
    for g in groups:
        V[:, g] = _b_orthonormalize(V[:, g], Bc)
    res = _residuals(Sc, Bc, lam, V, _norm1(Sc), _norm1(Bc))
    if np.any(res > opts.tol):
        worst = int(np.argmax(res))
        raise ConvergenceError(f"residual {res[worst]:.3e} above tolerance {opts.tol:g} at lambda={lam[worst]!r}")
    spec = Spectrum.from_values(lam, opts.merge_rtol, residuals=res, vectors=V if vectors else None)
    spec.certified_count = expected
    log.debug("interval [%g, %g]: %d eigenvalues in %d slices", lo, hi, expected, n_slices)
    return spec


def _bracket_lower(Sc, Bc, opts) -> ShiftedFactorization:
    t = 1e-8
    for _ in range(200):
        try:
            f = ShiftedFactorization(Sc, Bc, -t, opts)
        except SingularShiftError:
            t *= 1.5
            continue
        if f.negatives == 0:
            return f
        t *= 4.0
    raise EigSolveError("could not find a shift below the spectrum")


def eigs_smallest(
    S: MatrixLike,
    B: MatrixLike,
    k: int,
    opts: Optional[EigSolveOptions] = None,
    vectors: bool = True,
) -> Spectrum:
    """The ``k`` smallest eigenvalues (with multiplicity) and B-orthonormal vectors."""
    opts = opts or EigSolveOptions()
    if k < 1:
        raise ValueError("k must be >= 1")
    Sc, Bc = _pencil(S, B)
    n = Sc.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds dimension {n}")
    if k >= n - 1:
        lam, V = la.eigh(Sc.toarray(), Bc.toarray())
        res = _residuals(Sc, Bc, lam, V, _norm1(Sc), _norm1(Bc))
        spec = Spectrum.from_values(lam, opts.merge_rtol, residuals=res, vectors=V if vectors else None)
        return truncate_count(spec, k)
    f_lo = _bracket_lower(Sc, Bc, opts)
    lo = f_lo.sigma
    # march the upper shift until it bounds k eigenvalues, then pull it back
    width = 1.0
    below, below_count = lo, 0
    hi = lo + width
    while True:
        try:
            f_hi = ShiftedFactorization(Sc, Bc, hi, opts)
        except SingularShiftError:
            hi += 1e-6 * width
            continue
        if f_hi.negatives >= k:
            break
        below, below_count = hi, f_hi.negatives
        width *= 2.0
        hi = lo + width
        if width > 1e300:
            raise EigSolveError("eigenvalue bracket diverged")
    for _ in range(60):
        if f_hi.negatives <= k + opts.block_size:
            break
        mid = 0.5 * (below + f_hi.sigma)
        try:
            f_mid = ShiftedFactorization(Sc, Bc, mid, opts)
        except SingularShiftError:
            continue
        if f_mid.negatives >= k:
            f_hi = f_mid
        else:
            below, below_count = mid, f_mid.negatives
    spec = eigs_in_interval(Sc, Bc, lo, f_hi.sigma, opts, vectors=vectors)
    return truncate_count(spec, k)


def truncate_count(spec: Spectrum, k: int) -> Spectrum:
    """Keep the first ``k`` eigenvalues counted with multiplicity."""
    vals, mult, tags, res = [], [], [], []
    left = k
    for v, m, t, r in zip(spec.values, spec.multiplicities, spec.tags, spec.residuals):
        if left <= 0:
            break
        take = min(int(m), left)
        vals.append(v)
        mult.append(take)
        tags.append(t)
        res.append(r)
        left -= take
    vec = spec.vectors[:, :k] if spec.vectors is not None else None
    return Spectrum(np.array(vals), np.array(mult, dtype=np.int64), tuple(tags), np.array(res), vec, spec.certified_count)


def dense_eig_oracle(S: MatrixLike, B: MatrixLike, merge_rtol: float = 1e-8) -> Spectrum:
    """Full spectrum by dense reduction (LAPACK ``sygvd``); test oracle only."""
    Sd = S.toarray() if hasattr(S, "toarray") else np.asarray(S, dtype=float)
    Bd = B.toarray() if hasattr(B, "toarray") else np.asarray(B, dtype=float)
    n = Sd.shape[0]
    if n > DENSE_ORACLE_LIMIT:
        raise EigSolveError(f"dense oracle limited to {DENSE_ORACLE_LIMIT} unknowns, got {n}")
    lam, V = la.eigh(Sd, Bd)
    res = _residuals(Sd, Bd, lam, V, np.abs(Sd).sum(axis=0).max(), np.abs(Bd).sum(axis=0).max())
    return Spectrum.from_values(lam, merge_rtol, residuals=res, vectors=V, certified_count=n)
