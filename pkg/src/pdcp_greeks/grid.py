"""Smooth nonuniform spatial mesh and cell-averaged payoff vectors.

The mesh is uniform (and fine) on [0, 2K] and is continued up to s_max by an
exponential stretching that matches the uniform spacing at s = 2K, so the grid
map is C^1 in the node index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .market import InvalidParameterError, payoff_put_1d, payoff_put_on_average

UNIFORM_FRACTION = 0.8


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    points: np.ndarray
    cell_edges: np.ndarray
    n_uniform: int
    stretch: float

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def s_max(self) -> float:
        return float(self.points[-1])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.points)


def _stretched_tail(n_tail: int, h: float, start: float, s_max: float) -> tuple[np.ndarray, float]:
    length = s_max - start
    if h * n_tail >= length:
        raise InvalidParameterError(
            "uniform spacing continued past 2K already reaches s_max; "
            "no positive stretching parameter exists"
        )

    def excess(gamma):
        return h * math.expm1(gamma * n_tail) / gamma - length

    hi = 1.0 / n_tail
    while excess(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise InvalidParameterError("stretching-parameter root solve failed")
    try:
        gamma = brentq(excess, 1e-14, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise InvalidParameterError("stretching-parameter root solve failed") from exc
    k = np.arange(1, n_tail + 1, dtype=float)
    tail = start + h * np.expm1(gamma * k) / gamma
    tail[-1] = s_max
    return tail, gamma


def build_grid(m: int, K: float, s_max: float) -> SpatialGrid:
    """Mesh of ``m`` nodes on [0, s_max] with a uniform block on [0, 2K].

    The uniform block holds ``ceil(0.8 m)`` nodes (capped at ``m - 1`` so at
    least one stretched node reaches ``s_max``).
    """
    if m < 3:
        raise InvalidParameterError(f"m must be at least 3, got {m}")
    if not K > 0:
        raise InvalidParameterError(f"K must be positive, got {K}")
    if not s_max > 2 * K:
        raise InvalidParameterError(f"s_max must exceed 2K (s_max={s_max}, K={K})")

    n_uniform = min(math.ceil(UNIFORM_FRACTION * m), m - 1)
    h = 2.0 * K / (n_uniform - 1)
    uniform = h * np.arange(n_uniform, dtype=float)
    uniform[-1] = 2.0 * K
    tail, gamma = _stretched_tail(m - n_uniform, h, 2.0 * K, s_max)
    points = np.concatenate([uniform, tail])

    edges = np.empty(m + 1)
    edges[0] = 0.0
    edges[1:-1] = 0.5 * (points[:-1] + points[1:])
    edges[-1] = s_max
    return SpatialGrid(points=points, cell_edges=edges, n_uniform=n_uniform, stretch=gamma)


def cell_average_payoff_1d(grid: SpatialGrid, K: float) -> np.ndarray:
    """Nodal put payoff, replaced by the exact cell mean where the kink is inside a cell."""
    u0 = payoff_put_1d(grid.points, K)
    left, right = grid.cell_edges[:-1], grid.cell_edges[1:]
    (kink,) = np.nonzero((left < K) & (K < right))
    for i in kink:
        u0[i] = (K - left[i]) ** 2 / (2.0 * (right[i] - left[i]))
    return u0


def _clip_below_line(rect: list[tuple[float, float]], c: float) -> list[tuple[float, float]]:
    # Sutherland-Hodgman against the half-plane x + y <= c.
    out = []
    n = len(rect)
    for k in range(n):
        p, q = rect[k], rect[(k + 1) % n]
        fp, fq = p[0] + p[1] - c, q[0] + q[1] - c
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _polygon_area_centroid(poly):
    a = cx = cy = 0.0
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        cross = x0 * y1 - x1 * y0
        a += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    a *= 0.5
    if a == 0.0:
        return 0.0, 0.0, 0.0
    return a, cx / (6.0 * a), cy / (6.0 * a)


def cell_average_rectangle(a1, b1, a2, b2, K) -> float:
    """Exact mean of max(0, K - (s1+s2)/2) over the rectangle [a1,b1] x [a2,b2]."""
    # the payoff is symmetric in (s1, s2): a canonical argument order makes the
    # result bitwise invariant under swapping the axes
    if (a2, b2) < (a1, b1):
        a1, b1, a2, b2 = a2, b2, a1, b1
    rect = [(a1, a2), (b1, a2), (b1, b2), (a1, b2)]
    poly = _clip_below_line(rect, 2.0 * K)
    if len(poly) < 3:
        return 0.0
    area, cx, cy = _polygon_area_centroid(poly)
    # integral of a linear function = area * value at centroid
    return area * (K - 0.5 * (cx + cy)) / ((b1 - a1) * (b2 - a2))


def cell_average_payoff_2d(grid1: SpatialGrid, grid2: SpatialGrid, K: float) -> np.ndarray:
    """Row-major (index i*m2 + j) put-on-the-average payoff with kink-cell averaging."""
    s1, s2 = np.meshgrid(grid1.points, grid2.points, indexing="ij")
    u0 = payoff_put_on_average(s1, s2, K)
    e1, e2 = grid1.cell_edges, grid2.cell_edges
    lo = e1[:-1, None] + e2[None, :-1]
    hi = e1[1:, None] + e2[None, 1:]
    for i, j in zip(*np.nonzero((lo < 2 * K) & (2 * K < hi))):
        u0[i, j] = cell_average_rectangle(e1[i], e1[i + 1], e2[j], e2[j + 1], K)
    return u0.ravel()
