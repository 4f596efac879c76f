"""Delta and Gamma from a solution vector, by the finite differences used in the operator."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import SpatialGrid
from .operator import derivative_matrices


def _one_sided_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    # weights w with sum_k w_k f(nodes_k) exact for quadratics at x0
    d = nodes - x0
    vander = np.vstack([np.ones(3), d, d**2])
    moments = np.zeros(3)
    moments[order] = 1.0 if order == 1 else 2.0
    return np.linalg.solve(vander, moments)


def greek_matrices(points: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """First/second derivative matrices with one-sided 3-point rows at both ends."""
    d1, d2 = derivative_matrices(points)
    d1, d2 = d1.tolil(), d2.tolil()
    m = len(points)
    for row, idx in ((0, [0, 1, 2]), (m - 1, [m - 3, m - 2, m - 1])):
        for mat, order in ((d1, 1), (d2, 2)):
            w = _one_sided_weights(points[row], points[idx], order)
            for k, c in zip(idx, w):
                mat[row, k] = c
    return d1.tocsr(), d2.tocsr()


def _extrapolated_mask(m: int) -> np.ndarray:
    mask = np.zeros(m, dtype=bool)
    mask[[0, -1]] = True
    return mask


@dataclass(frozen=True, eq=False)
class GreekSurfaces1D:
    delta: np.ndarray
    gamma: np.ndarray
    extrapolated: np.ndarray

    def as_dict(self) -> dict:
        return {"delta": self.delta, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class GreekSurfaces2D:
    delta1: np.ndarray
    delta2: np.ndarray
    gamma11: np.ndarray
    gamma12: np.ndarray
    gamma22: np.ndarray
    extrapolated: np.ndarray

    def as_dict(self) -> dict:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "gamma11": self.gamma11,
            "gamma12": self.gamma12,
            "gamma22": self.gamma22,
        }


def greeks_1d(grid: SpatialGrid, u: np.ndarray) -> GreekSurfaces1D:
    u = np.asarray(u, dtype=float)
    if len(u) != grid.m:
        raise ValueError(f"u has length {len(u)}, grid has {grid.m} nodes")
    d1, d2 = greek_matrices(grid.points)
    return GreekSurfaces1D(delta=d1 @ u, gamma=d2 @ u, extrapolated=_extrapolated_mask(grid.m))


def greeks_2d(grid1: SpatialGrid, grid2: SpatialGrid, u: np.ndarray) -> GreekSurfaces2D:
    """Surfaces in the operator's row-major layout (index i*m2 + j)."""
    m1, m2 = grid1.m, grid2.m
    u = np.asarray(u, dtype=float)
    if u.size != m1 * m2:
        raise ValueError(f"u has {u.size} entries, expected {m1 * m2}")
    U = u.reshape(m1, m2)
    dx, dxx = greek_matrices(grid1.points)
    dy, dyy = greek_matrices(grid2.points)
    ux = dx @ U
    ext = _extrapolated_mask(m1)[:, None] | _extrapolated_mask(m2)[None, :]
    return GreekSurfaces2D(
        delta1=ux.ravel(),
        delta2=(dy @ U.T).T.ravel(),
        gamma11=(dxx @ U).ravel(),
        gamma12=(dy @ ux.T).T.ravel(),
        gamma22=(dyy @ U.T).T.ravel(),
        extrapolated=ext.ravel(),
    )


def greeks_for(problem, u):
    """Dispatch on problem dimension; returns a dict name -> surface including 'value'."""
    if problem.dims == 1:
        g = greeks_1d(problem.grids[0], u)
    else:
        g = greeks_2d(problem.grids[0], problem.grids[1], u)
    return {"value": np.asarray(u, dtype=float), **g.as_dict()}


def write_surfaces_csv(problem, u, path) -> None:
    """Node coordinates followed by value and every Greek, one node per row."""
    surfaces = greeks_for(problem, u)
    names = list(surfaces)
    if problem.dims == 1:
        coords = [problem.grids[0].points]
        header = ["s"]
    else:
        s1, s2 = np.meshgrid(problem.grids[0].points, problem.grids[1].points, indexing="ij")
        coords = [s1.ravel(), s2.ravel()]
        header = ["s1", "s2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + names)
        for l in range(len(u)):
            w.writerow([repr(float(c[l])) for c in coords] + [repr(float(surfaces[n][l])) for n in names])
