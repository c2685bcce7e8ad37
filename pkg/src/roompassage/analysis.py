"""Spectral comparison: truncated Hausdorff distance, the low-frequency
threshold bound, convergence verdicts and report serialization."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .eigensolve import Spectrum
from .geometry import PerturbationParams, ScalingNumbers

CSV_HEADER = ["eps", "k", "lambda", "multiplicity", "tag", "residual"]
SLACK_AT_REFERENCE = 0.05
REFERENCE_H = 1.0 / 64.0


class EmptyTruncationError(ValueError):
    """One of the compared sets has no point inside the interval."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")

    def clip(self, values) -> np.ndarray:
        v = np.sort(np.asarray(values, dtype=float))
        return v[(v >= self.lo) & (v <= self.hi)]


PointSet = Union[Spectrum, Sequence[float], np.ndarray]


def _points(X: PointSet) -> np.ndarray:
    return X.values if isinstance(X, Spectrum) else np.asarray(X, dtype=float)


def _directed(xs: np.ndarray, ys: np.ndarray) -> float:
    """``max_x min_y |x - y|`` for sorted arrays, by a single forward sweep."""
    j, worst = 0, 0.0
    for x in xs:
        while j + 1 < len(ys) and ys[j + 1] <= x:
            j += 1
        d = abs(x - ys[j])
        if j + 1 < len(ys):
            d = min(d, abs(ys[j + 1] - x))
        worst = max(worst, d)
    return worst


def hausdorff_distance(X: PointSet, Y: PointSet, l: Interval) -> float:
    """Hausdorff distance between ``X`` and ``Y`` truncated to ``l``.

    Multiplicities are irrelevant; only the point sets matter.
    """
    xs, ys = l.clip(_points(X)), l.clip(_points(Y))
    if len(xs) == 0 or len(ys) == 0:
        side = "first" if len(xs) == 0 else "second"
        raise EmptyTruncationError(f"{side} set has no point in [{l.lo}, {l.hi}]")
    return float(max(_directed(xs, ys), _directed(ys, xs)))


def threshold_bound(scaling: ScalingNumbers, params: PerturbationParams) -> float:
    """Rayleigh quotient ``q / (1 + q h^2 / 3)`` of the room-localized test functions."""
    q = scaling.q_eps
    return q / (1.0 + q * params.h**2 / 3.0)


def fem_slack(mesh_h: float) -> float:
    """Allowance for Galerkin over-estimation: 0.05 at h = 1/64, halved per refinement."""
    return SLACK_AT_REFERENCE * mesh_h / REFERENCE_H


@dataclass
class ThresholdCheck:
    bound: float
    slack: float
    values: np.ndarray
    margins: np.ndarray
    passed: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(self.passed.all())

    @property
    def pass_count(self) -> int:
        return int(self.passed.sum())

    @property
    def failed_indices(self) -> List[int]:
        return [int(k) + 1 for k in np.flatnonzero(~self.passed)]


def check_threshold(spec_eps: PointSet, bound: float, N_eps: int, slack: float = SLACK_AT_REFERENCE) -> ThresholdCheck:
    """Check ``lambda_k <= bound (1 + slack)`` for ``k = 1..N_eps`` (with multiplicity).

    Margins are ``bound (1 + slack) - lambda_k``; negative margins are failures.
    """
    vals = spec_eps.expanded() if isinstance(spec_eps, Spectrum) else np.sort(np.asarray(spec_eps, dtype=float))
    if len(vals) < N_eps:
        raise ValueError(f"need at least {N_eps} eigenvalues, got {len(vals)}")
    vals = vals[:N_eps]
    margins = bound * (1.0 + slack) - vals
    return ThresholdCheck(bound, slack, vals, margins, margins >= 0)


@dataclass(frozen=True)
class TrendVerdict:
    passed: bool
    ratio: float
    worst_increase: float
    reason: str

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_table(rows: Sequence[Tuple[float, float]], jitter: float = 0.10, target_ratio: float = 0.5) -> TrendVerdict:
    """Trend verdict for ``(eps, dist)`` rows ordered by decreasing ``eps``.

    Passes when the last distance is at most ``target_ratio`` times the first and
    no step grows by more than ``jitter`` (relative).
    """
    if len(rows) < 3:
        raise ValueError("need at least three eps values")
    eps = [r[0] for r in rows]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps values must be strictly decreasing")
    d = [float(r[1]) for r in rows]
    ratio = d[-1] / d[0] if d[0] > 0 else (0.0 if d[-1] == 0 else math.inf)
    growth = [(b - a) / a if a > 0 else (math.inf if b > 0 else 0.0) for a, b in zip(d, d[1:])]
    worst = max(growth)
    reasons = []
    if not ratio <= target_ratio:
        reasons.append(f"final/initial distance ratio {ratio:.4g} exceeds {target_ratio}")
    if worst > jitter:
        reasons.append(f"distance grows by {worst:.4g} (relative) between consecutive eps, above {jitter}")
    return TrendVerdict(not reasons, ratio, worst, "; ".join(reasons) or "ok")


def place_lambda(sigma0: PointSet, Lambda: float, spread: float = 0.1) -> float:
    """Truncation point in ``[(1-spread)Lambda, (1+spread)Lambda]`` farthest from ``sigma0``.

    Candidates are the window ends and midpoints between consecutive values of
    ``sigma0``; ``sigma0`` must be known up to ``(1+spread)Lambda``.
    """
    lo, hi = (1 - spread) * Lambda, (1 + spread) * Lambda
    vals = np.sort(_points(sigma0))
    inside = vals[(vals >= lo) & (vals <= hi)]
    if len(inside) == 0:
        return float(Lambda)
    below = vals[vals < lo]
    above = vals[vals > hi]
    knots = np.concatenate([below[-1:], inside, above[:1]])
    cands = [lo, hi] + [0.5 * (a + b) for a, b in zip(knots, knots[1:])]
    cands = [c for c in cands if lo <= c <= hi]

    def gap(c):
        return float(np.min(np.abs(vals - c)))

    # ties resolved toward the requested Lambda for reproducibility
    return float(max(cands, key=lambda c: (gap(c), -abs(c - Lambda))))


# ------------------------------------------------------------ serialization


def _fmt(x: float) -> str:
    return repr(float(x))


def spectrum_rows(spec: Spectrum, eps: Optional[float]) -> List[List[str]]:
    rows = []
    k = 1
    for v, m, t, res in zip(spec.values, spec.multiplicities, spec.tags, spec.residuals):
        rows.append(["" if eps is None else _fmt(eps), str(k), _fmt(v), str(int(m)), ";".join(t), _fmt(res)])
        k += int(m)
    return rows


def spectrum_to_csv(spec: Spectrum, eps: Optional[float] = None) -> str:
    """CSV with header ``eps,k,lambda,multiplicity,tag,residual``; ``k`` is the
    1-based index of the first copy of each value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(spectrum_rows(spec, eps))
    return buf.getvalue()


def spectrum_from_csv(text: str) -> Spectrum:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected spectrum header {header}")
    vals, mult, tags, res = [], [], [], []
    for row in reader:
        vals.append(float(row[2]))
        mult.append(int(row[3]))
        tags.append(tuple(t for t in row[4].split(";") if t))
        res.append(float(row[5]))
    return Spectrum(np.array(vals), np.array(mult, dtype=np.int64), tuple(tags), np.array(res))


@dataclass
class ConvergenceRow:
    eps: float
    mesh_h: float
    dof: int
    N_eps: int
    q_eps: float
    r_eps: float
    spectrum_file: str
    certified_count: int
    dist_H: float
    threshold_checked: int = 0
    threshold_passed: int = 0
    threshold_bound: Optional[float] = None
    lambda_2: Optional[float] = None


@dataclass
class ConvergenceReport:
    preset: Optional[str]
    regime: dict
    limit_operator: str
    Lambda_requested: float
    Lambda: float
    interval: Tuple[float, float]
    sigma0_file: str
    sigma0_mesh_h: float
    sigma0_refinements: int
    sigma0_converged: bool
    rows: List[ConvergenceRow]
    verdict: TrendVerdict
    threshold_ok: Optional[bool] = None
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        eps = [r.eps for r in self.rows]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("report rows must be ordered by decreasing eps")

    @property
    def passed(self) -> bool:
        return self.verdict.passed and self.threshold_ok is not False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interval"] = list(self.interval)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def plot_data(self) -> str:
        """Whitespace-separated ``eps dist_H`` lines."""
        lines = ["# eps dist_H"]
        lines += [f"{_fmt(r.eps)} {_fmt(r.dist_H)}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def referenced_files(self) -> List[str]:
        return [self.sigma0_file] + [r.spectrum_file for r in self.rows]


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    return obj


def window_mask(values: Iterable[float], q: float, window: float) -> np.ndarray:
    """True where a value lies outside ``q (1 +- window)``."""
    v = np.asarray(list(values), dtype=float)
    return ~((v >= q * (1 - window)) & (v <= q * (1 + window)))
