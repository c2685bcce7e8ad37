"""Room-and-passage perturbed domains built from axis-aligned rectangles.

The base domain is the rectangle ``(0, W) x (-H, 0)`` whose top side ``y = 0``
is the corrugated part Gamma.  To every admissible anchor ``(eps * i, 0)`` a thin
passage ``T_i`` of width ``d * w_D`` and length ``h`` is attached, topped by a
room ``B_i`` of size ``(b * w_B) x (b * h_B)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

SQRT2_HALF = math.sqrt(2.0) / 2.0

# relative slack used when comparing floating point geometry
_GEOM_RTOL = 1e-12


class GeometryError(ValueError):
    """Raised when a perturbed domain cannot be constructed."""


@dataclass(frozen=True)
class BaseDomain:
    """The unperturbed rectangle ``(0, W) x (-H, 0)``; Gamma is its top side."""

    W: float = 1.0
    H: float = 1.0

    def __post_init__(self):
        if not (self.W > 0 and self.H > 0):
            raise GeometryError(f"base domain needs W > 0 and H > 0, got W={self.W}, H={self.H}")

    @property
    def gamma_length(self) -> float:
        return self.W

    @property
    def area(self) -> float:
        return self.W * self.H


@dataclass(frozen=True)
class ShapeSpec:
    """Reference room ``B`` and passage cross-section ``D``.

    ``B = (-w_B/2, w_B/2) x (0, h_B)`` and ``D = (-w_D/2, w_D/2)``.  ``R`` is the
    radius of the bottom disc of ``B`` on which passages may be glued.
    Values are not validated here; see :func:`validate_assumptions`.
    """

    room_width: float = 0.5
    room_height: float = 0.5
    passage_width: float = 0.4
    gluing_radius: float = 0.25

    @property
    def area_B(self) -> float:
        return self.room_width * self.room_height

    @property
    def area_D(self) -> float:
        return self.passage_width


@dataclass(frozen=True)
class PerturbationParams:
    """Sizes of the eps-family: period ``eps``, room scale ``b``, passage
    width scale ``d``, passage length ``h`` and room density ``rho``."""

    eps: float
    b: float
    d: float
    h: float
    rho: float


@dataclass(frozen=True)
class ScalingNumbers:
    q_eps: float
    r_eps: float
    D_eps: float
    N_eps: int
    total_room_mass: float


@dataclass(frozen=True)
class RegimeClass:
    """Limit classes of ``q`` and ``r``.

    ``q_kind`` is ``"zero"``, ``"finite"`` or ``"infinite"``; ``r_kind`` is
    ``"zero"`` or ``"positive"``.  Values are only meaningful for the finite
    positive kinds (0.0 for zero kinds, ``inf`` for an infinite ``q``).
    """

    q_kind: str
    q_value: float
    r_kind: str
    r_value: float

    def __post_init__(self):
        if self.q_kind not in ("zero", "finite", "infinite"):
            raise ValueError(f"bad q kind {self.q_kind!r}")
        if self.r_kind not in ("zero", "positive"):
            raise ValueError(f"bad r kind {self.r_kind!r}")

    @property
    def q_finite(self) -> bool:
        return self.q_kind != "infinite"

    @property
    def limit_operator(self) -> str:
        """Name of the limit operator selected by the (q, r) case table."""
        if self.q_finite:
            return "A_qr" if self.r_kind == "positive" else "A_q"
        return "A_r" if self.r_kind == "positive" else "A"

    def to_dict(self) -> dict:
        return {
            "q_kind": self.q_kind,
            "q_value": self.q_value if math.isfinite(self.q_value) else "inf",
            "r_kind": self.r_kind,
            "r_value": self.r_value,
            "limit_operator": self.limit_operator,
        }


Rect = Tuple[float, float, float, float]  # xmin, xmax, ymin, ymax


@dataclass(frozen=True)
class PerturbedDomain:
    base: BaseDomain
    params: PerturbationParams
    shape: ShapeSpec
    index_set: Tuple[int, ...]
    rooms: Tuple[Rect, ...] = field(repr=False)
    passages: Tuple[Rect, ...] = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.index_set)

    @property
    def omega_rect(self) -> Rect:
        return (0.0, self.base.W, -self.base.H, 0.0)

    def rectangles(self) -> List[Tuple[str, int, Rect]]:
        """All rectangles as ``(tag, index, rect)``; the base carries index -1."""
        out = [("omega", -1, self.omega_rect)]
        for i, t in zip(self.index_set, self.passages):
            out.append(("passage", i, t))
        for i, r in zip(self.index_set, self.rooms):
            out.append(("room", i, r))
        return out

    def area(self) -> float:
        return sum((r[1] - r[0]) * (r[3] - r[2]) for _, _, r in self.rectangles())

    def to_json(self) -> str:
        doc = {
            "base": {"W": self.base.W, "H": self.base.H},
            "params": {
                "eps": self.params.eps,
                "b": self.params.b,
                "d": self.params.d,
                "h": self.params.h,
                "rho": self.params.rho,
            },
            "shape": {
                "room_width": self.shape.room_width,
                "room_height": self.shape.room_height,
                "passage_width": self.shape.passage_width,
                "gluing_radius": self.shape.gluing_radius,
            },
            "rectangles": [
                {"tag": tag, "index": i, "rect": list(rect)} for tag, i, rect in self.rectangles()
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PerturbedDomain":
        doc = json.loads(text)
        base = BaseDomain(**doc["base"])
        params = PerturbationParams(**doc["params"])
        shape = ShapeSpec(**doc["shape"])
        rooms, passages, index = [], [], []
        for item in doc["rectangles"]:
            if item["tag"] == "room":
                rooms.append(tuple(item["rect"]))
                index.append(item["index"])
            elif item["tag"] == "passage":
                passages.append(tuple(item["rect"]))
        return cls(base, params, shape, tuple(index), tuple(rooms), tuple(passages))


def exponents_to_params(eps: float, alpha: float, beta: float) -> PerturbationParams:
    """Power-law family ``d = eps**alpha``, ``b = h = eps``, ``rho = eps**beta``."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if alpha < 1.0:
        raise ValueError(f"alpha must be >= 1 (d <= b), got {alpha}")
    if beta < -1.0:
        raise ValueError(f"beta must be >= -1, got {beta}")
    return PerturbationParams(eps=eps, b=eps, d=eps**alpha, h=eps, rho=eps**beta)


def anchor_indices(base: BaseDomain, eps: float) -> Tuple[int, ...]:
    """Indices ``i`` whose anchor ``(eps*i, 0)`` is an interior point of Gamma
    at distance at least ``eps*sqrt(2)/2`` from the rest of the boundary."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    need = eps * SQRT2_HALF * (1.0 - _GEOM_RTOL)
    out = []
    for i in range(1, int(math.floor(base.W / eps)) + 1):
        x = eps * i
        if not 0.0 < x < base.W:
            continue
        if min(x, base.W - x, base.H) >= need:
            out.append(i)
    return tuple(out)


def compute_scaling(params: PerturbationParams, shape: ShapeSpec, base: BaseDomain) -> ScalingNumbers:
    room_mass = params.rho * params.b**2 * shape.area_B
    q_eps = params.d * shape.area_D / (params.h * room_mass)
    r_eps = room_mass / params.eps
    N = len(anchor_indices(base, params.eps))
    return ScalingNumbers(
        q_eps=q_eps,
        r_eps=r_eps,
        D_eps=abs(math.log(params.d)),
        N_eps=N,
        total_room_mass=room_mass * N,
    )


def classify_regime(alpha: float, beta: float, shape: ShapeSpec, base: Optional[BaseDomain] = None) -> RegimeClass:
    """Limit classes of ``q`` and ``r`` for the power-law family.

    Along ``d = eps**alpha, b = h = eps, rho = eps**beta`` one has
    ``q_eps = |D|/|B| * eps**(alpha - beta - 3)`` and ``r_eps = |B| * eps**(beta + 1)``.
    """
    if alpha < 1.0 or beta < -1.0:
        raise ValueError(f"need alpha >= 1 and beta >= -1, got ({alpha}, {beta})")
    tol = 1e-12
    if abs(beta + 1.0) <= tol:
        r_kind, r_value = "positive", shape.area_B
    else:
        r_kind, r_value = "zero", 0.0
    gap = alpha - (beta + 3.0)
    if abs(gap) <= tol:
        q_kind, q_value = "finite", shape.area_D / shape.area_B
    elif gap > 0:
        q_kind, q_value = "zero", 0.0
    else:
        q_kind, q_value = "infinite", math.inf
    return RegimeClass(q_kind, q_value, r_kind, r_value)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    margin: float
    detail: str
    hard: bool = True


@dataclass(frozen=True)
class ValidationReport:
    checks: Tuple[AssumptionCheck, ...]

    @property
    def ok(self) -> bool:
        """True when every hard constraint passes (smallness warnings ignored)."""
        return all(c.passed for c in self.checks if c.hard)

    @property
    def warnings(self) -> List[AssumptionCheck]:
        return [c for c in self.checks if not c.hard and not c.passed]

    def failures(self) -> List[AssumptionCheck]:
        return [c for c in self.checks if c.hard and not c.passed]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_assumptions(
    params: PerturbationParams, shape: ShapeSpec, smallness_threshold: float = 1.0
) -> ValidationReport:
    """Check the geometric and size assumptions; margins are positive when satisfied.

    The ``ass2`` entry reports ``eps * |ln d|`` and is only a warning.
    """
    w_B, h_B, w_D, R = shape.room_width, shape.room_height, shape.passage_width, shape.gluing_radius
    checks = []

    m11 = min(1.0 - w_B, w_B, h_B)
    checks.append(AssumptionCheck("ass11", m11 > 0, m11, f"B inside (-1/2,1/2) x (0,inf): w_B={w_B}, h_B={h_B}"))

    m12 = min(R, 0.5 - R, w_B - 2.0 * R)
    checks.append(AssumptionCheck("ass12", m12 >= 0 and 0 < R < 0.5, m12, f"disc |x'|<R={R} on bottom of B (2R <= w_B={w_B})"))

    m13 = min(w_D, 2.0 * R - w_D)
    checks.append(AssumptionCheck("ass13", m13 > 0, m13, f"0 in D, D inside |x'|<R: w_D={w_D}, 2R={2 * R}"))

    m14 = min(params.b - params.d, params.eps - params.b, params.d)
    checks.append(AssumptionCheck("ass14", m14 >= 0 and params.d > 0, m14, f"d={params.d} <= b={params.b} <= eps={params.eps}"))

    checks.append(AssumptionCheck("ass15", params.h > 0, params.h, f"passage length h={params.h} > 0"))

    checks.append(AssumptionCheck("density", params.rho > 0, params.rho, f"room density rho={params.rho} > 0"))

    if params.d > 0:
        small = params.eps * abs(math.log(params.d))
        checks.append(
            AssumptionCheck(
                "ass2",
                small <= smallness_threshold,
                smallness_threshold - small,
                f"eps*|ln d| = {small:.6g} (threshold {smallness_threshold})",
                hard=False,
            )
        )
    return ValidationReport(tuple(checks))


def build_perturbed_domain(base: BaseDomain, params: PerturbationParams, shape: ShapeSpec) -> PerturbedDomain:
    report = validate_assumptions(params, shape)
    if not report.ok:
        names = ", ".join(f"{c.name} ({c.detail})" for c in report.failures())
        raise GeometryError(f"assumptions violated: {names}")
    index = anchor_indices(base, params.eps)
    if not index:
        raise GeometryError(f"empty index set: eps={params.eps} too large for W={base.W}")
    eps, b, d, h = params.eps, params.b, params.d, params.h
    half_t = 0.5 * d * shape.passage_width
    half_b = 0.5 * b * shape.room_width
    passages = tuple((eps * i - half_t, eps * i + half_t, 0.0, h) for i in index)
    rooms = tuple((eps * i - half_b, eps * i + half_b, h, h + b * shape.room_height) for i in index)
    return PerturbedDomain(base, params, shape, index, rooms, passages)


def rectangles_overlap(a: Rect, b: Rect) -> bool:
    """True when the open rectangles intersect."""
    return min(a[1], b[1]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[2], b[2])


def expected_area(domain: PerturbedDomain) -> float:
    p, s = domain.params, domain.shape
    return domain.base.area + domain.N * (p.d * s.passage_width * p.h) + domain.N * (p.b**2 * s.area_B)


__all__ = [
    "BaseDomain",
    "ShapeSpec",
    "PerturbationParams",
    "ScalingNumbers",
    "RegimeClass",
    "PerturbedDomain",
    "GeometryError",
    "AssumptionCheck",
    "ValidationReport",
    "exponents_to_params",
    "anchor_indices",
    "compute_scaling",
    "classify_regime",
    "validate_assumptions",
    "build_perturbed_domain",
    "rectangles_overlap",
    "expected_area",
]
