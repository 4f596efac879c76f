"""Linear solvers used inside the penalty iterations.

* tridiagonal direct solve for the 1D theta/DIRK systems,
* ILU(0)-preconditioned BiCGSTAB for 2D systems and the coupled Lobatto blocks.

Sparse matrices are ``scipy.sparse.csr_matrix`` with sorted indices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _kernels

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-15


class SingularMatrixError(ArithmeticError):
    """A zero pivot was met during elimination or factorization."""


class BreakdownError(ArithmeticError):
    """BiCGSTAB broke down twice (once after a restart)."""


@dataclass
class TridiagonalMatrix:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.ascontiguousarray(self.lower, dtype=float)
        self.diag = np.ascontiguousarray(self.diag, dtype=float)
        self.upper = np.ascontiguousarray(self.upper, dtype=float)
        n = len(self.diag)
        if len(self.lower) != n - 1 or len(self.upper) != n - 1:
            raise ValueError("off-diagonals must have length len(diag) - 1")

    @classmethod
    def from_sparse(cls, a) -> "TridiagonalMatrix":
        a = sp.csr_matrix(a)
        return cls(a.diagonal(-1), a.diagonal(0), a.diagonal(1))

    def to_sparse(self) -> sp.csr_matrix:
        return sp.diags([self.lower, self.diag, self.upper], [-1, 0, 1], format="csr")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y

    def norm_inf(self) -> float:
        row = np.abs(self.diag)
        row[1:] += np.abs(self.lower)
        row[:-1] += np.abs(self.upper)
        return float(row.max())


def solve_tridiagonal(mat: TridiagonalMatrix, rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm without pivoting."""
    rhs = np.ascontiguousarray(rhs, dtype=float)
    out = np.empty_like(rhs)
    if _kernels.thomas(mat.lower, mat.diag, mat.upper, rhs, out) != _kernels.OK:
        raise SingularMatrixError("zero pivot in tridiagonal elimination")
    return out


def _csr(a) -> sp.csr_matrix:
    a = sp.csr_matrix(a, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    a.sum_duplicates()
    a.sort_indices()
    return a


def _diag_positions(a: sp.csr_matrix) -> np.ndarray:
    n = a.shape[0]
    rows = np.repeat(np.arange(n), np.diff(a.indptr))
    hit = np.nonzero(a.indices == rows)[0]
    if len(hit) != n:
        raise SingularMatrixError("diagonal entry missing from sparsity pattern")
    return hit.astype(np.int64)


@dataclass
class ILU0:
    """Zero fill-in incomplete LU factors stored on the pattern of the input matrix."""

    indptr: np.ndarray
    indices: np.ndarray
    lu: np.ndarray
    diag_ptr: np.ndarray
    shift: float = 0.0

    @property
    def shape(self):
        n = len(self.indptr) - 1
        return (n, n)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = np.empty(len(rhs))
        _kernels.lu_solve(self.indptr, self.indices, self.lu, self.diag_ptr, rhs, out)
        return out

    def factors(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """(L, U) as sparse matrices, L with unit diagonal."""
        full = sp.csr_matrix((self.lu, self.indices, self.indptr), shape=self.shape)
        lower = sp.tril(full, k=-1, format="csr") + sp.identity(self.shape[0], format="csr")
        upper = sp.triu(full, format="csr")
        return lower, upper


def ilu0_factor(a, retry_shift: bool = True) -> ILU0:
    """ILU(0) in natural ordering.

    On a zero pivot the factorization is retried once with the diagonal shifted
    by ``1e-12 * max|diag|``; a second failure raises ``SingularMatrixError``.
    """
    a = _csr(a)
    diag_ptr = _diag_positions(a)
    indptr = a.indptr.astype(np.int64)
    indices = a.indices.astype(np.int64)
    lu = np.empty_like(a.data)
    if _kernels.ilu0(indptr, indices, a.data, diag_ptr, lu) == _kernels.OK:
        return ILU0(indptr, indices, lu, diag_ptr)
    if not retry_shift:
        raise SingularMatrixError("zero pivot in ILU(0)")
    shift = 1e-12 * float(np.max(np.abs(a.data[diag_ptr])))
    data = a.data.copy()
    data[diag_ptr] += shift
    log.warning("ILU(0) zero pivot; retrying with diagonal shift %.3e", shift)
    if _kernels.ilu0(indptr, indices, data, diag_ptr, lu) != _kernels.OK:
        raise SingularMatrixError("zero pivot in ILU(0) after diagonal shift")
    return ILU0(indptr, indices, lu, diag_ptr, shift=shift)


@dataclass
class IterativeSolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    restarts: int = 0
    stagnated: bool = False
    # ||r||_inf / (||A||_inf ||x||_inf + ||b||_inf)
    backward_error: float = 0.0

    def __post_init__(self):
        self.relative_residual = float(self.relative_residual)


@dataclass
class _Operator:
    a: sp.csr_matrix
    indptr: np.ndarray = field(init=False)
    indices: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indptr = self.a.indptr.astype(np.int64)
        self.indices = self.a.indices.astype(np.int64)

    def __call__(self, x):
        out = np.empty(len(x))
        _kernels.csr_matvec(self.indptr, self.indices, self.a.data, x, out)
        return out


def bicgstab(
    a,
    b: np.ndarray,
    precond: Optional[ILU0] = None,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
    stall_iters: int = 20,
) -> tuple[np.ndarray, IterativeSolveReport]:
    """Right-preconditioned BiCGSTAB.

    Convergence is judged on the true residual ``||b - A x||_2 / ||b||_2 < tol``.
    The returned iterate is the best one seen; when the true residual stops
    improving for ``stall_iters`` iterations the solve ends with
    ``converged=False``. A breakdown triggers one restart from the current
    iterate with the shadow residual reset to the current residual.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = _csr(a)
    n = a.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    b = np.ascontiguousarray(b, dtype=float)
    matvec = _Operator(a)
    apply_m = precond.solve if precond is not None else (lambda v: v.copy())

    a_norm = float(np.max(np.abs(a).sum(axis=1))) if a.nnz else 0.0

    def report(x_, iters, converged, stagnated=False):
        r_ = b - matvec(x_)
        eta = np.max(np.abs(r_)) / (a_norm * np.max(np.abs(x_)) + np.max(np.abs(b)))
        return IterativeSolveReport(
            iters, np.linalg.norm(r_) / bnorm, converged, restarts, stagnated, float(eta)
        )

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), IterativeSolveReport(0, 0.0, True)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x)
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm
    restarts = 0
    if best_res < tol:
        return best_x, report(best_x, 0, True)

    it = 0
    since_best = 0
    while it < max_iter:
        r_hat = r.copy()
        rho_old = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        broke = False
        while it < max_iter:
            it += 1
            rho = r_hat @ r
            if rho == 0.0 or omega == 0.0:
                broke = True
                break
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
            p_hat = apply_m(p)
            v = matvec(p_hat)
            denom = r_hat @ v
            if denom == 0.0:
                broke = True
                break
            alpha = rho / denom
            s = r - alpha * v
            x = x + alpha * p_hat
            if np.linalg.norm(s) / bnorm < tol:
                r = b - matvec(x)
            else:
                s_hat = apply_m(s)
                t = matvec(s_hat)
                tt = t @ t
                omega = (t @ s) / tt if tt > 0 else 0.0
                x = x + omega * s_hat
                r = s - omega * t
            rho_old = rho

            rec = np.linalg.norm(r) / bnorm
            if rec < tol:
                # recursive residual claims convergence: confirm on the true residual
                r = b - matvec(x)
                rec = np.linalg.norm(r) / bnorm
            if rec < best_res:
                best_x, best_res = x.copy(), rec
                since_best = 0
            else:
                since_best += 1
            if best_res < tol:
                true_res = np.linalg.norm(b - matvec(best_x)) / bnorm
                if true_res < tol:
                    return best_x, report(best_x, it, True)
                best_res = true_res
                r = b - matvec(x)
                break  # restart the Krylov recurrence from the true residual
            if since_best >= stall_iters:
                return best_x, report(best_x, it, False, stagnated=True)
        if broke:
            if restarts >= 1:
                raise BreakdownError(f"BiCGSTAB breakdown after restart (iteration {it})")
            restarts += 1
            r = b - matvec(x)
    rep = report(best_x, it, False)
    rep.converged = rep.relative_residual < tol
    return best_x, rep


def assemble_lobatto_block(a, dt: float, p_diag: np.ndarray, q_diag: np.ndarray) -> sp.csr_matrix:
    """Coupled 2M system of the penalized two-stage Lobatto IIIC step, unknowns (Y, Z).

    [[I - dt/2 A + P,      dt/2 A - Q    ],
     [-(dt/2 A - P),       I - dt/2 A + Q]]
    """
    a = sp.csr_matrix(a)
    n = a.shape[0]
    if len(p_diag) != n or len(q_diag) != n:
        raise ValueError("penalty diagonals must match the matrix size")
    half = 0.5 * dt * a
    eye = sp.identity(n, format="csr")
    P = sp.diags(np.asarray(p_diag, dtype=float))
    Q = sp.diags(np.asarray(q_diag, dtype=float))
    block = sp.bmat([[eye - half + P, half - Q], [-(half - P), eye - half + Q]], format="csr")
    block.sort_indices()
    return block
