"""Convergence study: perturbed spectra per eps against the limit spectrum."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analysis as an
from .assembly import DensityField, assemble_mass, assemble_stiffness
from .config import StudyConfig
from .eigensolve import Spectrum, eigs_in_interval, eigs_smallest
from .geometry import build_perturbed_domain, compute_scaling
from .limit import CLUSTER, BaseOperators, LimitProblem, sigma0_for_regime
from .mesh import mesh_perturbed_domain, mesh_rectangle, refine_uniform, write_mesh

log = logging.getLogger(__name__)

ZERO_MARGIN = 1e-8
TREND_NOTE = "trend rule (final distance at most half the first, 10% jitter) is an engineering proxy; no rate is claimed"
WINDOW_NOTE = "sigma0 contains q as a point; values near q are tagged as the discrete cluster and kept in the metric"


class StudyError(RuntimeError):
    """A pipeline stage failed; ``stage`` and ``eps`` locate it."""

    def __init__(self, stage: str, eps: Optional[float], cause: BaseException):
        where = f"stage '{stage}'" + ("" if eps is None else f" at eps={eps!r}")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.stage, self.eps, self.cause = stage, eps, cause


@dataclass
class EpsResult:
    index: int
    row: an.ConvergenceRow
    spectrum: Spectrum
    mesh_text: Optional[str]
    lambda_small: Optional[np.ndarray] = None


@dataclass
class StudyOutcome:
    report: an.ConvergenceReport
    spectra: List[Spectrum]
    sigma0: Spectrum
    meshes: List[Optional[str]]
    log_lines: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class StudyArtifacts:
    directory: Path
    report: Path
    sigma0: Path
    spectra: List[Path]
    plot: Path
    meshes: List[Path]
    log: Path
    passed: bool

    def all_paths(self) -> List[Path]:
        return [self.report, self.sigma0, self.plot, self.log, *self.spectra, *self.meshes]


def spectrum_file(i: int) -> str:
    return f"spectrum_eps{i}.csv"


def mesh_file(i: int) -> str:
    return f"mesh_eps{i}.txt"


def _values_outside_cluster(spec: Spectrum) -> np.ndarray:
    return spec.values[~spec.tagged(CLUSTER)]


def compute_sigma0(config: StudyConfig, upper: float):
    """Limit spectrum on ``[0, upper]``, refining the base mesh until index-matched
    values change by less than ``sigma0_rtol`` or the refinement cap is hit."""
    regime = config.regime()
    mesh = mesh_rectangle(config.base, config.sigma0_mesh_h)
    h = config.sigma0_mesh_h
    prev = sigma0_for_regime(regime, BaseOperators(mesh), upper, config.eig, config.window)
    refinements, converged = 0, False
    while refinements < config.sigma0_max_refinements:
        mesh = refine_uniform(mesh)
        h *= 0.5
        refinements += 1
        cur = sigma0_for_regime(regime, BaseOperators(mesh), upper, config.eig, config.window)
        a, b = _values_outside_cluster(prev), _values_outside_cluster(cur)
        prev = cur
        if len(a) == len(b):
            change = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if len(a) else 0.0
            log.info("sigma0 at h=%.6g: max relative change %.3e", h, change)
            if change < config.sigma0_rtol:
                converged = True
                break
        else:
            log.info("sigma0 at h=%.6g: value count changed %d -> %d", h, len(a), len(b))
    return prev, h, refinements, converged


def solve_eps(config: StudyConfig, i: int, Lambda: float) -> EpsResult:
    """Full pipeline for one eps: domain, mesh, operators, certified spectrum."""
    eps = config.eps[i]
    stage = "geometry"
    try:
        params = config.params_for(i)
        domain = build_perturbed_domain(config.base, params, config.shape)
        scaling = compute_scaling(params, config.shape, config.base)
        stage = "mesh"
        h = config.mesh_h_for(i)
        mesh = mesh_perturbed_domain(domain, h, aspect_limit=config.aspect_limit)
        stage = "assembly"
        K = assemble_stiffness(mesh)
        M = assemble_mass(mesh, DensityField(room=params.rho))
        stage = "eigensolve"
        spec = eigs_in_interval(K, M, -ZERO_MARGIN, Lambda, config.eig)
        row = an.ConvergenceRow(
            eps=eps,
            mesh_h=h,
            dof=mesh.n_vertices,
            N_eps=scaling.N_eps,
            q_eps=scaling.q_eps,
            r_eps=scaling.r_eps,
            spectrum_file=spectrum_file(i),
            certified_count=int(spec.certified_count),
            dist_H=math.nan,
        )
        small = eigs_smallest(K, M, max(2, scaling.N_eps), config.eig, vectors=False).expanded()
        row.lambda_2 = float(small[1])
        if math.isfinite(scaling.q_eps):
            stage = "threshold"
            bound = an.threshold_bound(scaling, params)
            chk = an.check_threshold(small, bound, scaling.N_eps, an.fem_slack(h))
            row.threshold_bound = bound
            row.threshold_checked = scaling.N_eps
            row.threshold_passed = chk.pass_count
        return EpsResult(i, row, spec, write_mesh(mesh) if config.save_meshes else None, small)
    except Exception as exc:
        raise StudyError(stage, eps, exc) from exc


def _solve_eps_star(args):
    return solve_eps(*args)


def run_study(config: StudyConfig) -> StudyOutcome:
    """Compute every spectrum, distance and check; nothing is written."""
    lines: List[str] = []

    def note(msg):
        log.info(msg)
        lines.append(msg)

    regime = config.regime()
    problem = LimitProblem.for_regime(regime)
    note(f"regime q={regime.q_kind}({regime.q_value}) r={regime.r_kind}({regime.r_value}) -> {problem.variant}")
    try:
        sigma0, h0, nref, converged = compute_sigma0(config, 1.1 * config.Lambda)
    except Exception as exc:
        raise StudyError("sigma0", None, exc) from exc
    note(f"sigma0: {sigma0.total_count} values on [0, {1.1 * config.Lambda!r}] at mesh h={h0!r} after {nref} refinements")
    if not converged:
        note(f"sigma0: relative change target {config.sigma0_rtol} not reached within {config.sigma0_max_refinements} refinements")
    Lambda = an.place_lambda(sigma0, config.Lambda)
    note(f"Lambda placed at {Lambda!r} (requested {config.Lambda!r})")
    interval = an.Interval(-ZERO_MARGIN, Lambda)
    sigma0_l = sigma0.restrict(interval.lo, interval.hi)

    jobs = [(config, i, Lambda) for i in range(len(config.eps))]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(jobs))) as pool:
            results = list(pool.map(_solve_eps_star, jobs))
    else:
        results = [_solve_eps_star(j) for j in jobs]

    rows = []
    for res in sorted(results, key=lambda r: r.index):
        try:
            res.row.dist_H = an.hausdorff_distance(res.spectrum, sigma0_l, interval)
        except an.EmptyTruncationError as exc:
            raise StudyError("distance", res.row.eps, exc) from exc
        r = res.row
        note(
            f"eps={r.eps!r}: dof={r.dof} N={r.N_eps} count={r.certified_count} dist_H={r.dist_H!r}"
            + (f" threshold {r.threshold_passed}/{r.threshold_checked}" if r.threshold_checked else "")
        )
        rows.append(r)

    verdict = an.convergence_table([(r.eps, r.dist_H) for r in rows])
    threshold_ok = None
    if math.isfinite(regime.q_value):
        threshold_ok = all(r.threshold_passed == r.threshold_checked for r in rows)
    note(f"verdict: {'pass' if verdict.passed else 'fail'} ({verdict.reason})")
    notes = [TREND_NOTE]
    if problem.variant == "A_qr":
        notes.append(WINDOW_NOTE)
    if not converged:
        notes.append(f"sigma0 refinement stopped at the cap of {config.sigma0_max_refinements} before the {config.sigma0_rtol} change target")
    report = an.ConvergenceReport(
        preset=config.preset,
        regime=regime.to_dict(),
        limit_operator=problem.variant,
        Lambda_requested=config.Lambda,
        Lambda=Lambda,
        interval=(interval.lo, interval.hi),
        sigma0_file="sigma0.csv",
        sigma0_mesh_h=h0,
        sigma0_refinements=nref,
        sigma0_converged=converged,
        rows=rows,
        verdict=verdict,
        threshold_ok=threshold_ok,
        notes=notes,
    )
    ordered = sorted(results, key=lambda r: r.index)
    return StudyOutcome(report, [r.spectrum for r in ordered], sigma0_l, [r.mesh_text for r in ordered], lines)


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(outcome: StudyOutcome, directory: Path) -> StudyArtifacts:
    """Write the report JSON, spectrum CSVs, plot data, meshes and log.

    Output is byte-identical for identical inputs.
    """
    report = outcome.report
    if not report.rows:
        raise ValueError("report has no eps rows; nothing written")
    if len(outcome.spectra) != len(report.rows):
        raise ValueError("one spectrum per report row is required")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {directory}: {exc}") from exc
    spectra = [
        _write(directory / row.spectrum_file, an.spectrum_to_csv(spec, row.eps))
        for row, spec in zip(report.rows, outcome.spectra)
    ]
    meshes = [
        _write(directory / mesh_file(i), text)
        for i, text in enumerate(outcome.meshes)
        if text is not None
    ]
    sigma0 = _write(directory / report.sigma0_file, an.spectrum_to_csv(outcome.sigma0))
    plot = _write(directory / "dist_H.dat", report.plot_data())
    rep = _write(directory / "report.json", report.to_json())
    logp = _write(directory / "study.log", "".join(line + "\n" for line in outcome.log_lines))
    return StudyArtifacts(directory, rep, sigma0, spectra, plot, meshes, logp, report.passed)
