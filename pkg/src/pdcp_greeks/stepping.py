"""Penalty time stepping for the semidiscrete complementarity problem.

    U >= U0,   U' >= A U,   (U - U0)^T (U' - A U) = 0.

Three one-step methods are adapted by the penalty approach: the theta-method,
the two-parameter-free second-order DIRK method with tableau

    0 | 0
    1 | 1-θ     θ
    1 | 1/2   1/2-θ   θ

and two-stage Lobatto IIIC. Each implicit stage is an active-set iteration on
the diagonal penalty matrix P (entry ``large`` where the iterate falls below
the payoff).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .linalg import (
    DEFAULT_TOL,
    IterativeSolveReport,
    TridiagonalMatrix,
    assemble_lobatto_block,
    bicgstab,
    ilu0_factor,
    solve_tridiagonal,
)
from .operator import DiscreteProblem

THETA = "theta"
DIRK = "dirk"
LOBATTO = "lobatto"
METHOD_KINDS = (THETA, DIRK, LOBATTO)

UNIFORM = "uniform"
QUADRATIC = "quadratic"
GRID_KINDS = (UNIFORM, QUADRATIC)

DIRKA_THETA = 1.0 - 0.5 * math.sqrt(2.0)
DIRKB_THETA = 1.0 / 3.0


class PenaltyNonConvergence(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class LinearSolveError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StepError(RuntimeError):
    """A time step failed; ``step`` is the 1-based step index."""

    def __init__(self, step, cause):
        super().__init__(f"time step {step} failed: {cause}")
        self.step = step
        self.cause = cause


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True, eq=False)
class TemporalGrid:
    times: np.ndarray
    kind: str

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)


def make_temporal_grid(N: int, T: float, kind: str = QUADRATIC) -> TemporalGrid:
    """t_n = nT/N (uniform) or t_n = (n/N)^2 T (quadratic)."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    n = np.arange(N + 1, dtype=float)
    if kind == UNIFORM:
        times = n * T / N
    elif kind == QUADRATIC:
        times = (n / N) ** 2 * T
    else:
        raise ValueError(f"unknown temporal grid kind {kind!r}")
    times[-1] = T
    return TemporalGrid(times=times, kind=kind)


# --------------------------------------------------------------------------- specs


@dataclass(frozen=True)
class PenaltyConfig:
    large: float = 1e7
    tol: float = 1e-7
    max_penalty_iters: int = 100

    def __post_init__(self):
        if not self.large > 0 or not self.tol > 0 or self.max_penalty_iters < 1:
            raise ValueError(f"invalid penalty configuration {self}")


@dataclass(frozen=True)
class StepperSpec:
    method: str
    theta: Optional[float] = None
    damping_steps: int = 2
    grid_kind: str = QUADRATIC
    N: int = 100
    name: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in (THETA, DIRK) and not (self.theta is not None and self.theta > 0):
            raise ValueError(f"{self.method} method needs theta > 0, got {self.theta}")
        if self.damping_steps < 0:
            raise ValueError("damping_steps must be nonnegative")
        if self.grid_kind not in GRID_KINDS:
            raise ValueError(f"unknown temporal grid kind {self.grid_kind!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.method == LOBATTO:
            return "Lobatto-P"
        return f"{self.method}({self.theta:.6g})-P"


_PRESETS = {
    "be": ("BE-P", THETA, 1.0),
    "cn": ("CN-P", THETA, 0.5),
    "dirka": ("DIRKa-P", DIRK, DIRKA_THETA),
    "dirkb": ("DIRKb-P", DIRK, DIRKB_THETA),
    "lobatto": ("Lobatto-P", LOBATTO, None),
}
PRESET_NAMES = tuple(_PRESETS)


def preset(key: str, **overrides) -> StepperSpec:
    """Named method: be, cn, dirka, dirkb or lobatto."""
    try:
        name, method, theta = _PRESETS[key.lower()]
    except KeyError:
        raise ValueError(f"unknown method preset {key!r}; choose from {PRESET_NAMES}") from None
    return StepperSpec(method=method, theta=theta, name=name, **overrides)


def preset_key(spec: StepperSpec) -> str:
    for key, (name, method, theta) in _PRESETS.items():
        if spec.method == method and spec.theta == theta:
            return key
    return spec.label


# --------------------------------------------------------------------------- stability


def stability_function(method: str, theta, z):
    """Closed-form amplification factor R(z) of the unconstrained one-step map."""
    if method == LOBATTO:
        den = 1.0 - z + 0.5 * z * z
        if den == 0:
            raise ZeroDivisionError(f"pole of the Lobatto IIIC stability function at z={z}")
        return 1.0 / den
    den = 1.0 - theta * z
    if den == 0:
        raise ZeroDivisionError(f"pole of the stability function at z={z}")
    if method == THETA:
        return (1.0 + (1.0 - theta) * z) / den
    if method == DIRK:
        return (1.0 + (1.0 - 2 * theta) * z + (0.5 - 2 * theta + theta * theta) * z * z) / den**2
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------- traces


@dataclass
class StepTrace:
    step: int
    method: str
    kappas: tuple = ()
    linear_iterations: tuple = ()
    max_relative_residual: float = 0.0


def penalty_diag(y: np.ndarray, u0: np.ndarray, large: float) -> np.ndarray:
    """``large`` where y < u0 (strictly), zero elsewhere."""
    y = np.asarray(y)
    u0 = np.asarray(u0)
    if y.shape != u0.shape:
        raise ValueError("y and u0 must have the same shape")
    return np.where(y < u0, float(large), 0.0)


def write_traces_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "method", "kappas", "linear_iterations", "max_relative_residual"])
        for tr in traces:
            w.writerow(
                [
                    tr.step,
                    tr.method,
                    ";".join(str(k) for k in tr.kappas),
                    ";".join(str(k) for k in tr.linear_iterations),
                    f"{tr.max_relative_residual:.3e}",
                ]
            )


# --------------------------------------------------------------------------- linear systems


class _ShiftedSystems:
    """Solves (I - c A + diag(p)) y = rhs for a fixed problem and varying c, p."""

    def __init__(self, problem: DiscreteProblem, direct: bool, linear_tol: float = DEFAULT_TOL):
        self.problem = problem
        self.direct = direct
        self.linear_tol = linear_tol
        a = problem.a_matrix
        n = a.shape[0]
        if direct:
            self.tri = TridiagonalMatrix.from_sparse(a)
        else:
            # pattern of A + I, so the diagonal is always stored
            base = (a + sp.identity(n, format="csr")).tocsr()
            base.sort_indices()
            rows = np.repeat(np.arange(n), np.diff(base.indptr))
            self.diag_pos = np.nonzero(base.indices == rows)[0]
            self.a_data = base.data.copy()
            self.a_data[self.diag_pos] -= 1.0
            self.pattern = base

    def solve(self, c: float, p: np.ndarray, rhs: np.ndarray, x0: np.ndarray):
        if self.direct:
            t = self.tri
            mat = TridiagonalMatrix(-c * t.lower, 1.0 - c * t.diag + p, -c * t.upper)
            return solve_tridiagonal(mat, rhs), None
        data = -c * self.a_data
        data[self.diag_pos] += 1.0 + p
        mat = sp.csr_matrix((data, self.pattern.indices, self.pattern.indptr), shape=self.pattern.shape)
        return _iterative_solve(mat, rhs, x0, self.linear_tol)


# A stagnated BiCGSTAB solve is accepted when its normwise backward error is at
# the level of double-precision rounding; tol=1e-15 can sit below that floor.
ROUNDING_FLOOR = 64 * np.finfo(float).eps


def _equilibrate(mat: sp.csr_matrix, rhs: np.ndarray):
    """Scale every row by its max-abs entry.

    Penalized rows carry ``large`` ~ 1e7 on the diagonal and ``large * u0`` in
    the right-hand side; unscaled, they dominate ||b|| and a relative residual
    of 1e-15 would still allow absolute errors ~1e-6 on the free rows.
    """
    scale = 1.0 / abs(mat).max(axis=1).toarray().ravel()
    return (sp.diags(scale) @ mat).tocsr(), scale * rhs


def _iterative_solve(mat, rhs, x0, tol):
    mat, rhs = _equilibrate(mat, rhs)
    ilu = ilu0_factor(mat)
    x, rep = bicgstab(mat, rhs, ilu, tol=tol, x0=x0)
    if not rep.converged and not (rep.stagnated and rep.backward_error <= ROUNDING_FLOOR):
        raise LinearSolveError(
            f"BiCGSTAB did not reach relative residual {tol:.1e} "
            f"(got {rep.relative_residual:.2e} after {rep.iterations} iterations)",
            rep,
        )
    return x, rep


def _converged(y_new, y_old, p_new, p_old, tol) -> bool:
    change = np.max(np.abs(y_new - y_old) / np.maximum(1.0, np.abs(y_new)))
    return change < tol or np.array_equal(p_new, p_old)


def _penalty_stage(systems: _ShiftedSystems, c, rhs_base, u0, y0, cfg: PenaltyConfig, reports):
    y = y0
    p = penalty_diag(y, u0, cfg.large)
    for k in range(1, cfg.max_penalty_iters + 1):
        y_new, rep = systems.solve(c, p, rhs_base + p * u0, y)
        if rep is not None:
            reports.append(rep)
        p_new = penalty_diag(y_new, u0, cfg.large)
        done = _converged(y_new, y, p_new, p, cfg.tol)
        y, p = y_new, p_new
        if done:
            return y, k
    raise PenaltyNonConvergence(f"penalty iteration exceeded {cfg.max_penalty_iters} passes")


def _trace(step, method, kappas, reports):
    return StepTrace(
        step=step,
        method=method,
        kappas=tuple(kappas),
        linear_iterations=tuple(r.iterations for r in reports),
        max_relative_residual=max((r.relative_residual for r in reports), default=0.0),
    )


# --------------------------------------------------------------------------- steps


def _systems_for(problem, method, linear_tol=DEFAULT_TOL):
    return _ShiftedSystems(problem, direct=(problem.dims == 1 and method != LOBATTO), linear_tol=linear_tol)


def step_theta_p(problem, u_prev, dt, theta, penalty=PenaltyConfig(), systems=None, step=0):
    """One theta-P step: returns (U_n, StepTrace)."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    systems = systems or _systems_for(problem, THETA)
    a = problem.a_matrix
    rhs = u_prev + (1.0 - theta) * dt * (a @ u_prev)
    reports: list[IterativeSolveReport] = []
    y, kappa = _penalty_stage(systems, theta * dt, rhs, problem.u0, u_prev, penalty, reports)
    return y, _trace(step, THETA, [kappa], reports)


def step_dirk_p(problem, u_prev, dt, theta, penalty=PenaltyConfig(), systems=None, step=0):
    """One DIRK-P step (two penalized implicit stages)."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    systems = systems or _systems_for(problem, DIRK)
    a = problem.a_matrix
    au = dt * (a @ u_prev)
    reports: list[IterativeSolveReport] = []
    y, k1 = _penalty_stage(
        systems, theta * dt, u_prev + (1.0 - theta) * au, problem.u0, u_prev, penalty, reports
    )
    rhs2 = u_prev + 0.5 * au + (0.5 - theta) * dt * (a @ y)
    z, k2 = _penalty_stage(systems, theta * dt, rhs2, problem.u0, u_prev, penalty, reports)
    return z, _trace(step, DIRK, [k1, k2], reports)


def step_lobatto_p(problem, u_prev, dt, penalty=PenaltyConfig(), step=0, linear_tol=DEFAULT_TOL):
    """One Lobatto-P step: the coupled (Y, Z) system is iterated on both penalty diagonals."""
    a = problem.a_matrix
    u0 = problem.u0
    n = len(u0)
    y = z = u_prev
    p = penalty_diag(y, u0, penalty.large)
    q = penalty_diag(z, u0, penalty.large)
    reports: list[IterativeSolveReport] = []
    for k in range(1, penalty.max_penalty_iters + 1):
        block = assemble_lobatto_block(a, dt, p, q)
        rhs = np.concatenate([u_prev + (p - q) * u0, u_prev + (p + q) * u0])
        yz, rep = _iterative_solve(block, rhs, np.concatenate([y, z]), linear_tol)
        reports.append(rep)
        y_new, z_new = yz[:n], yz[n:]
        p_new = penalty_diag(y_new, u0, penalty.large)
        q_new = penalty_diag(z_new, u0, penalty.large)
        change = np.max(np.abs(z_new - z) / np.maximum(1.0, np.abs(z_new)))
        done = change < penalty.tol or (np.array_equal(p_new, p) and np.array_equal(q_new, q))
        y, z, p, q = y_new, z_new, p_new, q_new
        if done:
            return z, _trace(step, LOBATTO, [k], reports)
    raise PenaltyNonConvergence(f"Lobatto-P penalty iteration exceeded {penalty.max_penalty_iters} passes")


# --------------------------------------------------------------------------- driver


def solve_pdcp(problem: DiscreteProblem, spec: StepperSpec, penalty: PenaltyConfig = PenaltyConfig(),
               T: Optional[float] = None, linear_tol: float = DEFAULT_TOL):
    """March from U0 at t=0 to t=T; the first ``damping_steps`` steps use BE-P.

    ``T`` defaults to the maturity stored on the problem's market parameters.
    Returns (U_N, traces).
    """
    if T is None:
        T = problem.T
    if T is None:
        raise ValueError("maturity T is neither given nor stored on the problem")
    grid = make_temporal_grid(spec.N, T, spec.grid_kind)
    damp_systems = _systems_for(problem, THETA, linear_tol)
    main_systems = damp_systems if spec.method != LOBATTO else None
    u = problem.u0.copy()
    traces = []
    for n, dt in enumerate(grid.steps, start=1):
        try:
            if n <= spec.damping_steps:
                u, tr = step_theta_p(problem, u, dt, 1.0, penalty, damp_systems, n)
            elif spec.method == THETA:
                u, tr = step_theta_p(problem, u, dt, spec.theta, penalty, main_systems, n)
            elif spec.method == DIRK:
                u, tr = step_dirk_p(problem, u, dt, spec.theta, penalty, main_systems, n)
            else:
                u, tr = step_lobatto_p(problem, u, dt, penalty, n, linear_tol)
        except (PenaltyNonConvergence, LinearSolveError, ArithmeticError) as exc:
            raise StepError(n, exc) from exc
        traces.append(tr)
    return u, traces
