"""Backward Euler for the Keller-Segel system with a fixed-point loop per step.

Schemes: ``standard`` (consistent mass, no stabilization), ``low``
(lumped mass plus artificial diffusion) and ``afc`` (low plus limited
antidiffusion).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import sparsela
from .assembly import Operators
from .limiter import QStrategy, antidiffusive_fluxes, compute_q, correction_factors, limited_antidiffusion

log = logging.getLogger(__name__)

FLOOR = 1e-300


class Scheme(str, Enum):
    STANDARD = "standard"
    LOW = "low"
    AFC = "afc"


class StepFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class State:
    alpha: np.ndarray
    beta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError(f"alpha {a.shape} and beta {b.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class StepParams:
    k: float
    lam: float = 1.0
    scheme: Scheme = Scheme.AFC
    q_strategy: QStrategy = field(default_factory=QStrategy.mass_over_k)
    fp_tol: float = 1e-8
    fp_max_iters: int = 100
    solver_tol: float = 1e-10
    solver: str = "auto"
    # "iterate": c-equation sees the current u iterate; "previous": u from t^{n-1}
    coupling: str = "iterate"
    force_factors: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.k > 0:
            raise ValueError("time step k must be positive")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be at least 1")
        if self.coupling not in ("iterate", "previous"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.solver not in ("direct", "iterative", "auto"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class StepReport:
    iterations: int
    increments: list
    min_alpha: float
    min_beta: float
    mass_before: float
    mass_after: float
    solver_residual: float = 0.0


def mass(state: State, lumped) -> float:
    """(U, 1)_h = sum_i m_i alpha_i."""
    return float(np.dot(lumped, state.alpha))


def min_nodal(state: State) -> tuple[float, float, int, int]:
    ia = int(np.argmin(state.alpha))
    ib = int(np.argmin(state.beta))
    return float(state.alpha[ia]), float(state.beta[ib]), ia, ib


def _rel_increment(new, old) -> float:
    return float(np.abs(new - old).max() / max(np.abs(new).max(), FLOOR))


def _lumped_on_pattern(ops: Operators) -> np.ndarray:
    g = ops.mesh.graph
    data = np.zeros(g.nnz)
    data[g.diagonal] = ops.lumped
    return data


def step(prev: State, params: StepParams, ops: Operators) -> tuple[State, StepReport]:
    """Advance one backward Euler step by fixed-point iteration from (alpha^{n-1}, beta^{n-1})."""
    if prev.alpha.shape != (ops.n,):
        raise ValueError(f"state has {prev.alpha.shape[0]} nodes, operators have {ops.n}")
    k = params.k
    scheme = params.scheme
    consistent = scheme is Scheme.STANDARD
    g = ops.mesh.graph
    shape = (ops.n, ops.n)

    if consistent:
        b1 = ops.M @ prev.alpha
        mass_op = ops.M
    else:
        b1 = ops.lumped * prev.alpha
        mass_op = None
        lumped_data = _lumped_on_pattern(ops)
    gamma = ops.gamma if (scheme is Scheme.AFC and params.q_strategy.kind != "m-over-k") else None
    A2 = ops.chemical_factor(k, consistent)

    def mass_apply(x):
        return mass_op @ x if consistent else ops.lumped * x

    b2_base = mass_apply(prev.beta)
    v, w = prev.alpha, prev.beta
    increments = []
    worst_res = 0.0
    for it in range(1, params.fp_max_iters + 1):
        T = ops.convection(w, params.lam)
        if consistent:
            A1 = sp.csr_matrix((ops.M.data + k * (ops.S.data - T.data), g.indices, g.indptr), shape=shape)
            rhs1 = b1
        else:
            D = ops.diffusion(T)
            A1 = sp.csr_matrix(
                (lumped_data + k * (ops.S.data - T.data - D.data), g.indices, g.indptr), shape=shape
            )
            if scheme is Scheme.AFC:
                fl = antidiffusive_fluxes(D, v, transpose=g.transpose)
                q = compute_q(ops.mesh, D, ops.lumped, params.q_strategy, k=k, gamma=gamma)
                work = correction_factors(fl, v, q, force=params.force_factors)
                fbar = limited_antidiffusion(work.a, fl)
            else:
                fbar = np.zeros(ops.n)
            rhs1 = b1 + k * fbar

        v_new, rep1 = sparsela.solve(A1, rhs1, params.solver_tol, params.solver)
        if not rep1.success:
            raise StepFailure(
                f"u-system solve failed at t={prev.time + k:.6g}, iteration {it} "
                f"(residual {rep1.residual:.3e})", rep1)
        coupling = v if params.coupling == "iterate" else prev.alpha
        w_new, rep2 = A2.solve(b2_base + k * mass_apply(coupling), params.solver_tol)
        if not rep2.success:
            raise StepFailure(
                f"c-system solve failed at t={prev.time + k:.6g}, iteration {it} "
                f"(residual {rep2.residual:.3e})", rep2)
        worst_res = max(worst_res, rep1.residual, rep2.residual)

        inc = max(_rel_increment(v_new, v), _rel_increment(w_new, w))
        increments.append(inc)
        v, w = v_new, w_new
        if inc < params.fp_tol:
            break
    else:
        report = StepReport(params.fp_max_iters, increments, float(v.min()), float(w.min()),
                            float(np.dot(ops.lumped, prev.alpha)), float(np.dot(ops.lumped, v)), worst_res)
        raise StepFailure(
            f"fixed point did not reach tol {params.fp_tol:g} in {params.fp_max_iters} iterations "
            f"at t={prev.time + k:.6g} (last increment {increments[-1]:.3e})", report)

    new = State(v, w, prev.time + k)
    report = StepReport(
        iterations=len(increments),
        increments=increments,
        min_alpha=float(v.min()),
        min_beta=float(w.min()),
        mass_before=mass(prev, ops.lumped),
        mass_after=mass(new, ops.lumped),
        solver_residual=worst_res,
    )
    return new, report


@dataclass
class RunResult:
    final: State
    reports: list
    masses: np.ndarray
    min_alpha: np.ndarray
    min_beta: np.ndarray

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.reports], dtype=int)

    @property
    def mass_drift(self) -> float:
        """max_n |(U^n,1)_h - (U^0,1)_h| / |(U^0,1)_h|."""
        m0 = self.masses[0]
        return float(np.abs(self.masses - m0).max() / max(abs(m0), FLOOR))


def run(initial: State, params: StepParams, ops: Operators, n_steps: int, callback=None) -> RunResult:
    """Take ``n_steps`` steps; entry 0 of the monitor arrays is the initial state."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    state = initial
    masses = [mass(initial, ops.lumped)]
    mins_a = [float(initial.alpha.min())]
    mins_b = [float(initial.beta.min())]
    reports = []
    for n in range(1, n_steps + 1):
        state, rep = step(state, params, ops)
        reports.append(rep)
        masses.append(rep.mass_after)
        mins_a.append(rep.min_alpha)
        mins_b.append(rep.min_beta)
        log.debug("step %d t=%.6g iters=%d min u=%.3e mass=%.15g",
                  n, state.time, rep.iterations, rep.min_alpha, rep.mass_after)
        if callback is not None:
            callback(n, state, rep)
    return RunResult(state, reports, np.array(masses), np.array(mins_a), np.array(mins_b))
