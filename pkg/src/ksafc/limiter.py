"""Antidiffusive fluxes and symmetric LED correction factors.

Fluxes and factors live on the slots of the CSR pattern of ``D``: slot
``s`` is the directed edge ``(rows[s], indices[s])`` and ``transpose[s]``
is its reverse. Diagonal slots carry zero flux.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sparsela
from .assembly import assemble_artificial_diffusion, assemble_convection, lumped_masses
from .mesh import Mesh, gamma_i

# |P| below this counts as zero, so Q/P cannot overflow
TINY = 1e-300


@dataclass(frozen=True)
class QStrategy:
    """How the limiter bounds scale with the local range.

    ``gamma-sum-d``: q_i = gamma_i sum_{j!=i} d_ij;
    ``gamma-m-nu``:  q_i = gamma_i m_i / nu, 0 < nu < 1;
    ``m-over-k``:    q_i = m_i / k, k the time step (taken from the run when
    ``param`` is None).
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("gamma-sum-d", "gamma-m-nu", "m-over-k"):
            raise ValueError(f"unknown q strategy {self.kind!r}")
        if self.kind == "gamma-m-nu" and not (self.param is not None and 0.0 < self.param < 1.0):
            raise ValueError("gamma-m-nu needs 0 < nu < 1")
        if self.kind == "m-over-k" and self.param is not None and self.param <= 0.0:
            raise ValueError("m-over-k needs k > 0")

    @classmethod
    def gamma_sum_d(cls):
        return cls("gamma-sum-d")

    @classmethod
    def gamma_mass_over_nu(cls, nu: float):
        return cls("gamma-m-nu", float(nu))

    @classmethod
    def mass_over_k(cls, k: float | None = None):
        return cls("m-over-k", None if k is None else float(k))

    @classmethod
    def parse(cls, text: str) -> "QStrategy":
        """CLI form: ``gamma-sum-d``, ``gamma-m-nu:<nu>``, ``m-over-k`` or ``m-over-k:<k>``."""
        kind, _, value = text.partition(":")
        return cls(kind, float(value) if value else None)

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}:{self.param!r}"


@dataclass
class FluxTable:
    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray
    transpose: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def offdiag(self) -> np.ndarray:
        return self.rows != self.indices


@dataclass
class LimiterWork:
    fluxes: FluxTable
    P_plus: np.ndarray
    P_minus: np.ndarray
    Q_plus: np.ndarray
    Q_minus: np.ndarray
    R_plus: np.ndarray
    R_minus: np.ndarray
    abar: np.ndarray
    a: np.ndarray


def antidiffusive_fluxes(D, alpha, transpose=None) -> FluxTable:
    """f_ij = d_ij (alpha_i - alpha_j) on the pattern of D."""
    D = sparsela.as_csr(D)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (D.shape[0],):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({D.shape[0]},)")
    rows = np.repeat(np.arange(D.shape[0]), np.diff(D.indptr))
    if transpose is None:
        transpose = sparsela.transpose_slots(D.indptr, D.indices)
    f = D.data * (alpha[rows] - alpha[D.indices])
    return FluxTable(D.indptr, D.indices, rows, transpose, f)


def compute_q(mesh: Mesh, D, lumped, strategy: QStrategy, k: float | None = None,
              gamma=None) -> np.ndarray:
    """Per-node limiter weights q_i.

    Zeros can only come out of ``gamma-sum-d`` at nodes where D has an empty
    row; such nodes carry no flux, and :func:`correction_factors` then sets
    their R to 1.
    """
    lumped = np.asarray(lumped, dtype=float)
    if strategy.kind == "m-over-k":
        step = strategy.param if strategy.param is not None else k
        if step is None or step <= 0:
            raise ValueError("m-over-k needs a positive time step")
        return lumped / step
    if gamma is None:
        gamma = np.array([gamma_i(mesh, i) for i in range(mesh.n_nodes)])
    if strategy.kind == "gamma-m-nu":
        return gamma * lumped / strategy.param
    D = sparsela.as_csr(D)
    return gamma * (D.diagonal() * -1.0)


def correction_factors(fluxes: FluxTable, alpha, q, force=None) -> LimiterWork:
    """Zalesak-type factors with bounds Q_i = q_i (alpha_i^max/min - alpha_i).

    Local extrema run over the node and its neighbors. ``force`` replaces
    the final factors by a constant (diagnostics only).
    """
    alpha = np.asarray(alpha, dtype=float)
    q = np.asarray(q, dtype=float)
    n = fluxes.n
    if alpha.shape != (n,) or q.shape != (n,):
        raise ValueError("alpha and q must have one entry per node")
    f = fluxes.values
    rows = fluxes.rows
    P_plus = np.bincount(rows, weights=np.maximum(f, 0.0), minlength=n)
    P_minus = np.bincount(rows, weights=np.minimum(f, 0.0), minlength=n)

    patch = alpha[fluxes.indices]
    starts = fluxes.indptr[:-1]
    a_max = np.maximum(np.maximum.reduceat(patch, starts), alpha)
    a_min = np.minimum(np.minimum.reduceat(patch, starts), alpha)
    Q_plus = q * (a_max - alpha)
    Q_minus = q * (a_min - alpha)

    with np.errstate(divide="ignore", invalid="ignore"):
        R_plus = np.where(P_plus > TINY, np.minimum(1.0, Q_plus / P_plus), 1.0)
        R_minus = np.where(P_minus < -TINY, np.minimum(1.0, Q_minus / P_minus), 1.0)

    abar = np.where(f > 0.0, R_plus[rows], np.where(f < 0.0, R_minus[rows], 1.0))
    a = np.minimum(abar, abar[fluxes.transpose])
    if force is not None:
        a = np.full_like(a, float(force))
    return LimiterWork(fluxes, P_plus, P_minus, Q_plus, Q_minus, R_plus, R_minus, abar, a)


def limited_antidiffusion(a, fluxes: FluxTable) -> np.ndarray:
    """fbar_i = sum_{j!=i} a_ij f_ij."""
    a = np.asarray(a, dtype=float)
    if a.shape != fluxes.values.shape:
        raise ValueError("factor and flux tables differ in size")
    return np.bincount(fluxes.rows, weights=a * fluxes.values, minlength=fluxes.n)


def led_check(a, fluxes: FluxTable, Q_plus, Q_minus, rtol: float = 1e-12) -> bool:
    """Q_i^- <= sum_j a_ij f_ij <= Q_i^+ at every node, up to rtol * flux scale."""
    fbar = limited_antidiffusion(a, fluxes)
    scale = np.bincount(fluxes.rows, weights=np.abs(fluxes.values), minlength=fluxes.n)
    slack = rtol * np.maximum(scale, np.maximum(np.abs(Q_plus), np.abs(Q_minus)))
    return bool(np.all(fbar <= Q_plus + slack) and np.all(fbar >= Q_minus - slack))


def affine_interpolant(mesh: Mesh, a0: float, ax: float, ay: float) -> np.ndarray:
    return a0 + ax * mesh.nodes[:, 0] + ay * mesh.nodes[:, 1]


def linearity_preservation_check(mesh: Mesh, w, strategy: QStrategy, v=None, lam: float = 1.0,
                                 rng=None, rtol: float = 1e-12) -> bool:
    """All abar_ij leaving interior nodes equal 1 for an affine ``v``, D = D(w).

    ``v`` defaults to the interpolant of a random affine function. Boundary
    rows are excluded: an affine field attains its patch extremum at some
    boundary nodes, where any LED bound is zero.
    """
    if strategy.kind == "m-over-k":
        raise ValueError("linearity preservation is only claimed for gamma-based q")
    if v is None:
        rng = np.random.default_rng(rng)
        v = affine_interpolant(mesh, *rng.normal(size=3))
    T = assemble_convection(mesh, w, lam)
    D = assemble_artificial_diffusion(T)
    fl = antidiffusive_fluxes(D, v)
    q = compute_q(mesh, D, lumped_masses(mesh), strategy)
    work = correction_factors(fl, v, q)
    interior = ~mesh.boundary[fl.rows]
    return bool(np.all(work.abar[interior] >= 1.0 - rtol))


def write_limiter_csv(work: LimiterWork, node_path, edge_path) -> None:
    """Forensics dump: per-node P/Q/R and per directed edge f, abar, a."""
    fl = work.fluxes
    try:
        with open(Path(node_path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["node", "P_plus", "P_minus", "Q_plus", "Q_minus", "R_plus", "R_minus"])
            for i in range(fl.n):
                out.writerow([i] + [repr(float(x[i])) for x in (
                    work.P_plus, work.P_minus, work.Q_plus, work.Q_minus, work.R_plus, work.R_minus)])
        with open(Path(edge_path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["i", "j", "f_ij", "abar_ij", "a_ij"])
            for s in np.flatnonzero(fl.offdiag):
                out.writerow([int(fl.rows[s]), int(fl.indices[s]), repr(float(fl.values[s])),
                              repr(float(work.abar[s])), repr(float(work.a[s]))])
    except OSError as exc:
        raise OSError(f"cannot write limiter dump to {node_path} / {edge_path}: {exc}") from exc
