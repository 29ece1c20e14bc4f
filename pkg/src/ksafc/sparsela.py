"""Sparse storage, arithmetic and direct solves for the per-step systems.

Matrices are ``scipy.sparse.csr_matrix`` with sorted column indices.
Explicit zeros are kept so that operators built on one node graph keep a
common pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, splu


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    method: str
    iterations: int | None
    residual: float
    success: bool


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    if not A.has_sorted_indices:
        A.sort_indices()
    return A


def transpose_slots(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """For each slot (i, j) of a structurally symmetric CSR pattern, the slot of (j, i)."""
    n = len(indptr) - 1
    nnz = len(indices)
    P = sp.csr_matrix((np.arange(1, nnz + 1, dtype=np.int64), indices, indptr), shape=(n, n))
    PT = P.T.tocsr()
    PT.sort_indices()
    if not (np.array_equal(PT.indptr, indptr) and np.array_equal(PT.indices, indices)):
        raise ValueError("pattern is not structurally symmetric")
    return PT.data - 1


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"cannot multiply {A.shape} matrix with vector of length {x.shape}")
    return A @ x


def same_pattern(A, B) -> bool:
    return (
        A.shape == B.shape
        and np.array_equal(A.indptr, B.indptr)
        and np.array_equal(A.indices, B.indices)
    )


def add_scaled(A, B, s: float) -> sp.csr_matrix:
    """A + s*B on the union pattern."""
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    A = as_csr(A)
    B = as_csr(B)
    if same_pattern(A, B):
        return sp.csr_matrix((A.data + s * B.data, A.indices.copy(), A.indptr.copy()), shape=A.shape)
    a, b = A.tocoo(), B.tocoo()
    C = sp.coo_matrix(
        (np.concatenate([a.data, s * b.data]),
         (np.concatenate([a.row, b.row]), np.concatenate([a.col, b.col]))),
        shape=A.shape,
    ).tocsr()
    C.sum_duplicates()
    return C


def column_diagonal_dominance(A) -> tuple[bool, float]:
    """Strict column diagonal dominance and the smallest gap |a_jj| - sum_{i!=j} |a_ij|."""
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    C = abs(sp.csc_matrix(A))
    diag = C.diagonal()
    off = np.asarray(C.sum(axis=0)).ravel() - diag
    margin = diag - off
    worst = float(margin.min()) if margin.size else np.inf
    return bool(worst > 0.0), worst


def _residual(A, x, b) -> float:
    bnorm = np.abs(b).max() if b.size else 0.0
    r = np.abs(A @ x - b).max() if b.size else 0.0
    return float(r / bnorm) if bnorm > 0 else float(r)


class Factorization:
    """Sparse LU of a square matrix, reusable across right-hand sides."""

    def __init__(self, A):
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = as_csr(A)
        try:
            self._lu = splu(sp.csc_matrix(self.A))
        except RuntimeError as exc:  # exactly singular
            self._lu = None
            self._error = str(exc)

    def solve(self, b, tol: float = 1e-10) -> tuple[np.ndarray, SolveReport]:
        if tol <= 0:
            raise ValueError("tol must be positive")
        b = np.asarray(b, dtype=float)
        if b.shape != (self.A.shape[0],):
            raise ValueError(f"right-hand side has shape {b.shape}, expected ({self.A.shape[0]},)")
        if not np.any(b):
            return np.zeros_like(b), SolveReport("direct", None, 0.0, self._lu is not None)
        if self._lu is None:
            return np.full_like(b, np.nan), SolveReport("direct", None, np.inf, False)
        x = self._lu.solve(b)
        res = _residual(self.A, x, b)
        ok = bool(np.all(np.isfinite(x)) and res <= tol)
        return x, SolveReport("direct", None, res, ok)


def _iterative(A, b, tol):
    d = A.diagonal()
    if np.any(d == 0.0):
        return None, SolveReport("bicgstab", 0, np.inf, False)
    count = 0

    def tick(_):
        nonlocal count
        count += 1

    P = LinearOperator(A.shape, matvec=lambda r: r / d, dtype=float)
    x, info = bicgstab(A, b, rtol=min(tol, 1e-12) * 1e-2, atol=0.0, M=P, maxiter=1000, callback=tick)
    res = _residual(A, x, b)
    ok = bool(info == 0 and np.all(np.isfinite(x)) and res <= tol)
    return x, SolveReport("bicgstab", count, res, ok)


def solve(A, b, tol: float = 1e-10, method: str = "direct") -> tuple[np.ndarray, SolveReport]:
    """Solve Ax = b; the report flags failure when ||Ax-b||_inf > tol ||b||_inf.

    ``method``: ``direct`` (sparse LU), ``iterative`` (Jacobi-preconditioned
    BiCGSTAB) or ``auto`` (iterative, falling back to LU when the residual
    contract is not met).
    """
    if method not in ("direct", "iterative", "auto"):
        raise ValueError(f"unknown solve method {method!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({A.shape[0]},)")
    if method != "direct" and np.any(b):
        x, report = _iterative(A, b, tol)
        if report.success or method == "iterative":
            return x, report
    return Factorization(A).solve(b, tol)


def write_coordinate(A, path) -> None:
    """``row col value`` per line, 0-based, 17 significant digits."""
    coo = sp.coo_matrix(A)
    table = np.column_stack([coo.row, coo.col, coo.data])
    try:
        np.savetxt(Path(path), table, fmt=["%d", "%d", "%.17g"])
    except OSError as exc:
        raise OSError(f"cannot write matrix dump to {path}: {exc}") from exc
