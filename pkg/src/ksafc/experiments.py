"""Experiment drivers: single runs, the blow-up positivity demo and convergence studies."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Operators
from .config import KRule, RunConfig, steps_for
from .mesh import Mesh, MeshError, build_uniform_unit_square
from .output import ConvergenceRow, observed_orders, write_convergence_csv, write_fields_csv, write_vtk
from .problems import initial_state
from .stepper import RunResult, Scheme, State, run

log = logging.getLogger(__name__)

ALL_SCHEMES = (Scheme.STANDARD, Scheme.LOW, Scheme.AFC)
# time-step rules of the two convergence tables
NORM_K_RULES = {"L2": KRule("h2", 2.0), "H1": KRule("h", 20.0)}


@dataclass
class RunStats:
    """Fixed-point and conservation summary of one run."""

    n_steps: int
    max_iterations: int
    max_increment_ratio: float
    mass_drift: float
    min_alpha: float

    @classmethod
    def from_result(cls, result: RunResult) -> "RunStats":
        ratios = [
            b / a
            for rep in result.reports
            for a, b in zip(rep.increments, rep.increments[1:])
            if a > 0
        ]
        iters = result.iterations
        return cls(
            n_steps=len(result.reports),
            max_iterations=int(iters.max()) if iters.size else 0,
            max_increment_ratio=float(max(ratios)) if ratios else 0.0,
            mass_drift=result.mass_drift,
            min_alpha=float(result.min_alpha.min()),
        )


def prolongate(coarse_mesh: Mesh, values, fine_mesh: Mesh) -> np.ndarray:
    """Evaluate a coarse P1 function at the nodes of a nested uniform refinement.

    Exact: each fine node lies in one coarse triangle where the function is affine.
    """
    Mc, Mf = coarse_mesh.resolution, fine_mesh.resolution
    if Mc is None or Mf is None:
        raise MeshError("prolongation needs uniform unit-square meshes")
    if Mf % Mc != 0:
        raise MeshError(f"fine resolution {Mf} is not a multiple of coarse resolution {Mc}")
    values = np.asarray(values, dtype=float)
    if values.shape != (coarse_mesh.n_nodes,):
        raise ValueError(f"coarse vector has shape {values.shape}, expected ({coarse_mesh.n_nodes},)")
    r = Mf // Mc
    I, J = np.meshgrid(np.arange(Mf + 1), np.arange(Mf + 1))
    I, J = I.ravel(), J.ravel()
    i = np.minimum(I // r, Mc - 1)
    j = np.minimum(J // r, Mc - 1)
    s = (I - i * r) / r
    t = (J - j * r) / r
    ll = j * (Mc + 1) + i
    u_ll, u_lr = values[ll], values[ll + 1]
    u_ul, u_ur = values[ll + Mc + 1], values[ll + Mc + 2]
    lower = u_ll + (u_lr - u_ll) * s + (u_ur - u_lr) * t
    upper = u_ll + (u_ur - u_ul) * s + (u_ul - u_ll) * t
    return np.where(I - i * r >= J - j * r, lower, upper)


def error_norms(fine_mesh: Mesh, fine_ref: State, coarse_mesh: Mesh, coarse_sol: State,
                fine_ops: Operators | None = None, which: str = "alpha") -> tuple[float, float]:
    """L2 and H1 norms of (prolongated coarse - fine reference) with fine consistent operators."""
    ops = fine_ops if fine_ops is not None else Operators.build(fine_mesh)
    e = prolongate(coarse_mesh, getattr(coarse_sol, which), fine_mesh) - getattr(fine_ref, which)
    Me = ops.M @ e
    l2 = float(np.dot(e, Me))
    h1 = l2 + float(np.dot(e, ops.S @ e))
    return float(np.sqrt(max(l2, 0.0))), float(np.sqrt(max(h1, 0.0)))


def simulate(config: RunConfig, scheme: Scheme | None = None, M: int | None = None,
             callback=None) -> tuple[Mesh, Operators, RunResult]:
    M, k, n = config.resolve(M)
    mesh = build_uniform_unit_square(M)
    ops = Operators.build(mesh)
    params = config.step_params(k, scheme)
    log.info("run %s M=%d k=%.6g steps=%d", params.scheme.value, M, k, n)
    result = run(initial_state(mesh, config.ic), params, ops, n, callback=callback)
    return mesh, ops, result


# ---------------------------------------------------------------- blow-up


@dataclass
class PositivityReport:
    scheme: Scheme
    M: int
    k: float
    n_steps: int
    u0_max: float
    min_alpha: np.ndarray  # per step, entry 0 is the initial state
    final_min_alpha: float
    final_min_beta: float
    line_min_alpha: float  # minimum along y = 0.5
    negative_nodes: np.ndarray  # (count, 3): x, y, u of negative final values
    mass_drift: float
    stats: RunStats
    final: State = field(repr=False)

    @property
    def positive(self) -> bool:
        """min u >= -1e-12 ||u0||_inf at every step."""
        return bool(np.all(self.min_alpha >= -1e-12 * self.u0_max))


def _positivity(scheme, mesh, k, result: RunResult, u0_max) -> PositivityReport:
    a = result.final.alpha
    neg = np.flatnonzero(a < 0.0)
    on_line = np.isclose(mesh.nodes[:, 1], 0.5, rtol=0.0, atol=1e-12)
    line_min = float(a[on_line].min()) if on_line.any() else float("nan")
    return PositivityReport(
        scheme=scheme, M=mesh.resolution, k=k, n_steps=len(result.reports), u0_max=u0_max,
        min_alpha=result.min_alpha, final_min_alpha=float(a.min()),
        final_min_beta=float(result.final.beta.min()), line_min_alpha=line_min,
        negative_nodes=np.column_stack([mesh.nodes[neg], a[neg]]),
        mass_drift=result.mass_drift, stats=RunStats.from_result(result), final=result.final,
    )


def run_blowup(config: RunConfig, schemes=ALL_SCHEMES) -> dict:
    """All requested schemes on the blow-up data; returns scheme -> PositivityReport.

    Step failures propagate. With ``config.out`` set, writes per-scheme field
    CSVs (and VTK when asked) plus ``positivity.csv``.
    """
    if config.ic != "blowup":
        raise ValueError(f"blow-up experiment needs ic=blowup, got {config.ic!r}")
    if config.T is None and config.steps is None:
        config = config.with_(steps=63)
    M, k, n = config.resolve()
    mesh = build_uniform_unit_square(M)
    ops = Operators.build(mesh)
    init = initial_state(mesh, config.ic)
    u0_max = float(np.abs(init.alpha).max())
    reports = {}
    for scheme in schemes:
        scheme = Scheme(scheme)
        log.info("blow-up %s M=%d k=%.6g steps=%d", scheme.value, M, k, n)
        result = run(init, config.step_params(k, scheme), ops, n)
        reports[scheme] = _positivity(scheme, mesh, k, result, u0_max)
    if config.out is not None:
        write_blowup_outputs(config.out, mesh, reports, vtk=config.vtk)
    return reports


def write_blowup_outputs(out, mesh: Mesh, reports: dict, vtk: bool = False) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["scheme,M,k,steps,min_u_final,min_u_all_steps,min_u_line_y05,min_c_final,"
             "negative_nodes,mass_drift,positive"]
    for scheme, rep in reports.items():
        write_fields_csv(out / f"blowup_{scheme.value}.csv", mesh, rep.final)
        if vtk:
            write_vtk(out / f"blowup_{scheme.value}.vtk", mesh, rep.final, f"blowup {scheme.value}")
        if len(rep.negative_nodes):
            np.savetxt(out / f"blowup_{scheme.value}_negative.csv", rep.negative_nodes,
                       fmt="%.17g", delimiter=",", header="x,y,u", comments="")
        lines.append(",".join([
            scheme.value, str(rep.M), "%.17g" % rep.k, str(rep.n_steps),
            "%.17g" % rep.final_min_alpha, "%.17g" % rep.min_alpha.min(),
            "%.17g" % rep.line_min_alpha, "%.17g" % rep.final_min_beta,
            str(len(rep.negative_nodes)), "%.17g" % rep.mass_drift, str(rep.positive).lower(),
        ]))
    path = out / "positivity.csv"
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write positivity report {path}: {exc}") from exc


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceStudy:
    resolutions: tuple
    reference_M: int
    reference_k: float
    T: float
    schemes: tuple
    tables: dict  # norm -> list of ConvergenceRow
    stats: dict  # (scheme, label) -> RunStats, label "ref" or "<norm>:M"

    def orders(self, norm: str, scheme) -> list:
        s = Scheme(scheme).value
        return [row.orders[s][norm] for row in self.tables[norm][1:]]


def _scheme_study(config: RunConfig, scheme: Scheme, resolutions, ref_M, ref_k, T, norms):
    fine = build_uniform_unit_square(ref_M)
    fine_ops = Operators.build(fine)
    n_ref, k_ref = steps_for(T, ref_k)
    params = config.step_params(k_ref, scheme)
    log.info("reference %s M=%d k=%.6g steps=%d", scheme.value, ref_M, k_ref, n_ref)
    ref = run(initial_state(fine, config.ic), params, fine_ops, n_ref)
    stats = {(scheme.value, "ref"): RunStats.from_result(ref)}
    errors = {}
    for norm in norms:
        rule = NORM_K_RULES[norm]
        for M in resolutions:
            n, k = steps_for(T, rule.k(M))
            mesh = build_uniform_unit_square(M)
            ops = Operators.build(mesh)
            res = run(initial_state(mesh, config.ic), config.step_params(k, scheme), ops, n)
            stats[(scheme.value, f"{norm}:{M}")] = RunStats.from_result(res)
            l2, h1 = error_norms(fine, ref.final, mesh, res.final, fine_ops)
            errors[(norm, M)] = (k, {"L2": l2, "H1": h1})
            log.info("%s %s M=%d k=%.6g L2=%.6e H1=%.6e", scheme.value, norm, M, k, l2, h1)
    return scheme, errors, stats


def run_convergence(config: RunConfig, resolutions=None, reference_M: int | None = None,
                    reference_k: float | None = None, schemes=ALL_SCHEMES, norms=("L2", "H1"),
                    T: float | None = None, workers: int = 1) -> ConvergenceStudy:
    """Per-scheme reference on the fine mesh, then one coarse run per (norm, M).

    The L2 table uses k = h0^2/2 and the H1 table k = h0/20. Independent
    schemes run in separate processes when ``workers > 1``.
    """
    resolutions = tuple(int(M) for M in (resolutions or config.resolutions))
    ref_M = int(reference_M or config.ref_M)
    ref_k = float(reference_k or config.ref_k)
    T = float(T if T is not None else (config.T if config.T is not None else 0.01))
    schemes = tuple(Scheme(s) for s in schemes)
    for norm in norms:
        if norm not in NORM_K_RULES:
            raise ValueError(f"unknown norm {norm!r}")
    bad = [M for M in resolutions if ref_M % M]
    if bad:
        raise MeshError(f"reference M={ref_M} is not a multiple of resolutions {bad}")

    jobs = [(config, s, resolutions, ref_M, ref_k, T, norms) for s in schemes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scheme_study, *zip(*jobs)))
    else:
        results = [_scheme_study(*job) for job in jobs]

    tables, stats = {}, {}
    for norm in norms:
        rows = []
        for M in resolutions:
            k = results[0][1][(norm, M)][0]
            rows.append(ConvergenceRow(M, 1.0 / M, k, {s.value: errs[(norm, M)][1] for s, errs, _ in results}))
        observed_orders(rows)
        tables[norm] = rows
    for _, _, st in results:
        stats.update(st)
    study = ConvergenceStudy(resolutions, ref_M, ref_k, T, tuple(s.value for s in schemes), tables, stats)
    if config.out is not None:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        for norm, rows in tables.items():
            write_convergence_csv(out / f"convergence_{config.ic}_{norm}.csv", rows, norm, study.schemes)
    return study
