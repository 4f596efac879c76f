"""Brennan-Schwartz direct solver for tridiagonal LCPs with a low-index contact set.

Solves  x >= g,  M x - b >= 0,  (x - g)^T (M x - b) = 0  exactly when the
contact set {x = g} is a single block touching index 0, which is the structure
of an American put on an ascending price grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .linalg import SingularMatrixError, TridiagonalMatrix


@dataclass
class TridiagonalLcp:
    matrix: TridiagonalMatrix
    rhs: np.ndarray
    obstacle: np.ndarray

    def __post_init__(self):
        n = len(self.matrix.diag)
        self.rhs = np.ascontiguousarray(self.rhs, dtype=float)
        self.obstacle = np.ascontiguousarray(self.obstacle, dtype=float)
        if len(self.rhs) != n or len(self.obstacle) != n:
            raise ValueError("rhs and obstacle must match the matrix size")


def brennan_schwartz_solve(lcp: TridiagonalLcp) -> np.ndarray:
    m = lcp.matrix
    out = np.empty(len(m.diag))
    status = _kernels.brennan_schwartz(m.lower, m.diag, m.upper, lcp.rhs, lcp.obstacle, out)
    if status != _kernels.OK:
        raise SingularMatrixError("zero pivot in Brennan-Schwartz elimination")
    return out


def complementarity_residual(lcp: TridiagonalLcp, x: np.ndarray) -> np.ndarray:
    """Componentwise min(x - g, M x - b); identically zero at an exact solution."""
    return np.minimum(x - lcp.obstacle, lcp.matrix.matvec(x) - lcp.rhs)


def contact_set_is_low_block(x, obstacle, atol: float, ignore=None) -> bool:
    """True when {x == g} (within atol) is empty or one block starting at index 0.

    ``ignore`` masks nodes (e.g. pinned far-field nodes) left out of the check.
    """
    hit = np.abs(x - obstacle) <= atol
    if ignore is not None:
        hit = hit & ~np.asarray(ignore, dtype=bool)
    if not hit.any():
        return True
    last = int(np.nonzero(hit)[0].max())
    return bool(hit[: last + 1].all())


def march_brennan_schwartz(problem, spec, T=None):
    """Theta or DIRK time marching with every implicit stage solved as an exact LCP.

    Only for 1D put-type problems. The first ``spec.damping_steps`` steps are
    backward Euler. Returns (U_N, per-stage max |complementarity residual|).
    """
    from .stepping import DIRK, THETA, make_temporal_grid

    if problem.dims != 1:
        raise ValueError("Brennan-Schwartz marching is only defined for 1D problems")
    if spec.method not in (THETA, DIRK):
        raise ValueError(f"no Brennan-Schwartz variant of the {spec.method} method")
    T = problem.T if T is None else T
    a = problem.a_matrix
    tri = TridiagonalMatrix.from_sparse(a)
    g = problem.u0

    def stage(c, rhs):
        mat = TridiagonalMatrix(-c * tri.lower, 1.0 - c * tri.diag, -c * tri.upper)
        lcp = TridiagonalLcp(mat, rhs, g)
        x = brennan_schwartz_solve(lcp)
        residuals.append(float(np.max(np.abs(complementarity_residual(lcp, x)))))
        return x

    residuals: list[float] = []
    u = g.copy()
    grid = make_temporal_grid(spec.N, T, spec.grid_kind)
    for n, dt in enumerate(grid.steps, start=1):
        if n <= spec.damping_steps:
            u = stage(dt, u)
        elif spec.method == THETA:
            th = spec.theta
            u = stage(th * dt, u + (1.0 - th) * dt * (a @ u))
        else:
            th = spec.theta
            au = dt * (a @ u)
            y = stage(th * dt, u + (1.0 - th) * au)
            u = stage(th * dt, u + 0.5 * au + (0.5 - th) * dt * (a @ y))
    return u, np.array(residuals)
