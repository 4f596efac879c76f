"""Central finite-difference discretization of the Black-Scholes operator.

Node ordering in 2D is row-major with the s1 index outermost: l = i*m + j.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import SpatialGrid, build_grid, cell_average_payoff_1d, cell_average_payoff_2d
from .market import MarketParams1D, MarketParams2D


@dataclass(frozen=True)
class StencilWeights:
    first: tuple[float, float, float]
    second: tuple[float, float, float]
    h_left: float
    h_right: float


def fd_weights(h_left: float, h_right: float) -> StencilWeights:
    """Three-point central weights on a nonuniform stencil (left, center, right)."""
    if not (h_left > 0 and h_right > 0):
        raise ValueError(f"spacings must be positive, got ({h_left}, {h_right})")
    hl, hr = float(h_left), float(h_right)
    first = (
        -hr / (hl * (hl + hr)),
        (hr - hl) / (hl * hr),
        hl / (hr * (hl + hr)),
    )
    second = (
        2.0 / (hl * (hl + hr)),
        -2.0 / (hl * hr),
        2.0 / (hr * (hl + hr)),
    )
    return StencilWeights(first=first, second=second, h_left=hl, h_right=hr)


def _stencil_arrays(points: np.ndarray):
    """Vectorized fd_weights for every interior node; returns (first, second) of shape (m-2, 3)."""
    h = np.diff(points)
    hl, hr = h[:-1], h[1:]
    first = np.column_stack([-hr / (hl * (hl + hr)), (hr - hl) / (hl * hr), hl / (hr * (hl + hr))])
    second = np.column_stack([2.0 / (hl * (hl + hr)), -2.0 / (hl * hr), 2.0 / (hr * (hl + hr))])
    return first, second


def derivative_matrices(points: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """First- and second-derivative matrices; the two boundary rows are left empty."""
    m = len(points)
    first, second = _stencil_arrays(points)
    rows = np.repeat(np.arange(1, m - 1), 3)
    cols = (np.arange(1, m - 1)[:, None] + np.array([-1, 0, 1])[None, :]).ravel()
    d1 = sp.csr_matrix((first.ravel(), (rows, cols)), shape=(m, m))
    d2 = sp.csr_matrix((second.ravel(), (rows, cols)), shape=(m, m))
    return d1, d2


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    a_matrix: sp.csr_matrix
    u0: np.ndarray
    dims: int
    m: int
    grids: tuple[SpatialGrid, ...]
    dirichlet_mask: np.ndarray
    r: float
    T: Optional[float] = None
    K: Optional[float] = None

    @property
    def size(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def grid(self) -> SpatialGrid:
        return self.grids[0]


def _pin_rows(a: sp.csr_matrix, mask: np.ndarray) -> sp.csr_matrix:
    keep = sp.diags((~mask).astype(float))
    a = (keep @ a).tocsr()
    a.eliminate_zeros()
    a.sort_indices()
    return a


def _convection_diffusion_1d(points, sigma, r):
    d1, d2 = derivative_matrices(points)
    return (sp.diags(0.5 * sigma**2 * points**2) @ d2 + sp.diags(r * points) @ d1).tocsr(), d1


def assemble_1d(params: MarketParams1D, grid: Optional[SpatialGrid] = None, m: int = 200) -> DiscreteProblem:
    """A and cell-averaged payoff for the American put; far field pinned to zero."""
    if grid is None:
        grid = build_grid(m, params.K, params.s_max)
    s = grid.points
    n = len(s)
    cd, _ = _convection_diffusion_1d(s, params.sigma, params.r)
    a = (cd - params.r * sp.identity(n, format="csr")).tocsr()
    mask = np.zeros(n, dtype=bool)
    mask[-1] = True
    a = _pin_rows(a, mask)
    u0 = cell_average_payoff_1d(grid, params.K)
    u0[mask] = 0.0
    return DiscreteProblem(a_matrix=a, u0=u0, dims=1, m=n, grids=(grid,), dirichlet_mask=mask, r=params.r,
                           T=params.T, K=params.K)


def assemble_2d(
    params: MarketParams2D,
    grid1: Optional[SpatialGrid] = None,
    grid2: Optional[SpatialGrid] = None,
    m: int = 100,
) -> DiscreteProblem:
    """A and cell-averaged payoff for the put-on-the-average; far-field edges pinned to zero."""
    if grid1 is None:
        grid1 = build_grid(m, params.K, params.s_max)
    if grid2 is None:
        grid2 = grid1
    s1, s2 = grid1.points, grid2.points
    m1, m2 = len(s1), len(s2)
    cd1, d1x = _convection_diffusion_1d(s1, params.sigma1, params.r)
    cd2, d1y = _convection_diffusion_1d(s2, params.sigma2, params.r)
    i1 = sp.identity(m1, format="csr")
    i2 = sp.identity(m2, format="csr")
    cross = params.rho * params.sigma1 * params.sigma2 * sp.kron(
        sp.diags(s1) @ d1x, sp.diags(s2) @ d1y
    )
    a = sp.kron(cd1, i2) + sp.kron(i1, cd2) + cross - params.r * sp.identity(m1 * m2)
    a = a.tocsr()

    mask = np.zeros((m1, m2), dtype=bool)
    mask[-1, :] = True
    mask[:, -1] = True
    mask = mask.ravel()
    a = _pin_rows(a, mask)
    u0 = cell_average_payoff_2d(grid1, grid2, params.K)
    u0[mask] = 0.0
    return DiscreteProblem(
        a_matrix=a, u0=u0, dims=2, m=m1, grids=(grid1, grid2), dirichlet_mask=mask, r=params.r,
        T=params.T, K=params.K,
    )


def dump_coo(a: sp.spmatrix, path) -> None:
    """Write ``row col value`` lines for debugging."""
    coo = sp.coo_matrix(a)
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
