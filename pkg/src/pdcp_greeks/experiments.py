"""Temporal-convergence experiments: reference solutions, ROI errors, order fits."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from . import grid as grid_module
from .greeks import greeks_for
from .lcp import march_brennan_schwartz
from .market import MarketParams1D, MarketParams2D
from .operator import DiscreteProblem, assemble_1d, assemble_2d
from .stepping import (
    QUADRATIC,
    PenaltyConfig,
    StepperSpec,
    preset,
    preset_key,
    solve_pdcp,
)

log = logging.getLogger(__name__)

QUANTITIES_1D = ("value", "delta", "gamma")
QUANTITIES_2D = ("value", "delta1", "delta2", "gamma11", "gamma12", "gamma22")

REFERENCE_N_1D = 2000
REFERENCE_N_2D = 500
DEFAULT_N_VALUES = (10, 20, 40, 80)
FULL_N_VALUES = tuple(range(10, 101))

# bump when the grid, operator or reference protocol changes
PROTOCOL_VERSION = 1


class EmptyRegionError(ValueError):
    pass


# --------------------------------------------------------------------------- problems


def assemble(params, m: int) -> DiscreteProblem:
    if isinstance(params, MarketParams1D):
        return assemble_1d(params, m=m)
    if isinstance(params, MarketParams2D):
        return assemble_2d(params, m=m)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def default_damping(dims: int, key: str) -> int:
    """Two BE-P steps everywhere except DIRK-P in 2D, which runs undamped."""
    if dims == 2 and key in ("dirka", "dirkb"):
        return 0
    return 2


def method_spec(key: str, dims: int, N: int, grid_kind: str = QUADRATIC, damping_steps=None) -> StepperSpec:
    if damping_steps is None:
        damping_steps = default_damping(dims, key)
    return preset(key, N=N, grid_kind=grid_kind, damping_steps=damping_steps)


# --------------------------------------------------------------------------- ROI


@dataclass(frozen=True)
class RegionOfInterest:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo < self.hi):
            raise ValueError(f"invalid region of interest ({self.lo}, {self.hi})")

    @classmethod
    def default(cls, dims: int, K: float) -> "RegionOfInterest":
        return cls(0.8 * K, 1.2 * K) if dims == 1 else cls(0.9 * K, 1.1 * K)

    def mask(self, grids) -> np.ndarray:
        """Nodes strictly inside the interval (1D) or the open square (2D)."""
        inside = [(g.points > self.lo) & (g.points < self.hi) for g in grids]
        if any(g.s_max <= self.hi for g in grids):
            raise ValueError("region of interest must lie strictly inside (0, s_max)")
        if len(inside) == 1:
            out = inside[0]
        else:
            out = (inside[0][:, None] & inside[1][None, :]).ravel()
        if not out.any():
            raise EmptyRegionError(f"no grid node inside the region ({self.lo}, {self.hi})")
        return out


def roi_max_error(u_ref, u_hat, grids, roi: RegionOfInterest) -> float:
    mask = roi.mask(grids)
    u_ref, u_hat = np.asarray(u_ref), np.asarray(u_hat)
    if u_ref.shape != u_hat.shape or u_ref.size != mask.size:
        raise ValueError("solution vectors do not match the grid layout")
    return float(np.max(np.abs(u_ref[mask] - u_hat[mask])))


# --------------------------------------------------------------------------- references


@dataclass(eq=False)
class ReferenceSolution:
    u_ref: np.ndarray
    greeks: dict
    method: str
    N_ref: int
    key: str
    meta: dict = field(default_factory=dict)


def _protocol(params, m: int, N_ref: Optional[int] = None) -> dict:
    if isinstance(params, MarketParams1D):
        proto = {"method": "dirka+brennan-schwartz", "N": N_ref or REFERENCE_N_1D, "damping_steps": 2}
    else:
        proto = {"method": "dirka-p", "N": N_ref or REFERENCE_N_2D, "damping_steps": 0,
                 "penalty": dataclasses.asdict(PenaltyConfig())}
    return {
        "params": {"type": type(params).__name__, **dataclasses.asdict(params)},
        "m": m,
        "grid": {"uniform_fraction": grid_module.UNIFORM_FRACTION},
        "grid_kind": QUADRATIC,
        "protocol": proto,
        "version": PROTOCOL_VERSION,
    }


def reference_key(params, m: int, N_ref: Optional[int] = None) -> str:
    blob = json.dumps(_protocol(params, m, N_ref), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


class ReferenceCache:
    """Flat float64 vector files ``<key>.bin`` with a JSON sidecar ``<key>.txt``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def _paths(self, key):
        return self.directory / f"{key}.bin", self.directory / f"{key}.txt"

    def load(self, key) -> Optional[tuple[np.ndarray, dict]]:
        data_path, meta_path = self._paths(key)
        if not (data_path.exists() and meta_path.exists()):
            return None
        meta = json.loads(meta_path.read_text())
        raw = data_path.read_bytes()
        if hashlib.sha256(raw).hexdigest() != meta.get("sha256"):
            log.warning("reference cache entry %s failed its integrity check; rebuilding", key)
            return None
        return np.frombuffer(raw, dtype="<f8").copy(), meta

    def store(self, key, u: np.ndarray, meta: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        data_path, meta_path = self._paths(key)
        raw = np.ascontiguousarray(u, dtype="<f8").tobytes()
        data_path.write_bytes(raw)
        meta = {**meta, "sha256": hashlib.sha256(raw).hexdigest(), "length": len(u)}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _build_reference(params, m, problem, cache, N_ref=None):
    key = reference_key(params, m, N_ref)
    meta = _protocol(params, m, N_ref)
    N_ref = meta["protocol"]["N"]
    hit = cache.load(key) if cache is not None else None
    if hit is not None and len(hit[0]) == problem.size:
        u_ref = hit[0]
    else:
        if problem.dims == 1:
            spec = preset("dirka", N=N_ref, damping_steps=2)
            u_ref, _ = march_brennan_schwartz(problem, spec)
        else:
            spec = preset("dirka", N=N_ref, damping_steps=0)
            u_ref, _ = solve_pdcp(problem, spec, PenaltyConfig())
        if cache is not None:
            cache.store(key, u_ref, meta)
    return ReferenceSolution(
        u_ref=u_ref,
        greeks=greeks_for(problem, u_ref),
        method=meta["protocol"]["method"],
        N_ref=meta["protocol"]["N"],
        key=key,
        meta=meta,
    )


def build_reference_1d(params: MarketParams1D, m: int, cache: Optional[ReferenceCache] = None,
                       problem: Optional[DiscreteProblem] = None, N_ref: Optional[int] = None,
                       ) -> ReferenceSolution:
    """DIRKa with exact Brennan-Schwartz LCP solves, quadratic grid, N=2000, 2 BE steps."""
    problem = problem or assemble_1d(params, m=m)
    return _build_reference(params, m, problem, cache, N_ref)


def build_reference_2d(params: MarketParams2D, m: int, cache: Optional[ReferenceCache] = None,
                       problem: Optional[DiscreteProblem] = None, N_ref: Optional[int] = None,
                       ) -> ReferenceSolution:
    """DIRKa-P, quadratic grid, N=500, no damping."""
    problem = problem or assemble_2d(params, m=m)
    return _build_reference(params, m, problem, cache, N_ref)


def build_reference(params, m, cache=None, problem=None, N_ref=None) -> ReferenceSolution:
    if isinstance(params, MarketParams1D):
        return build_reference_1d(params, m, cache, problem, N_ref)
    return build_reference_2d(params, m, cache, problem, N_ref)


# --------------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class ErrorRow:
    method: str
    m: int
    N: int
    grid_kind: str
    quantity: str
    error: float
    status: str = "ok"


@dataclass(frozen=True)
class OrderFit:
    method: str
    m: int
    grid_kind: str
    quantity: str
    n_min: int
    n_max: int
    order: float


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)

    def errors(self, method, quantity, grid_kind=None, m=None):
        """[(N, error)] in sweep order for successful rows."""
        return [
            (r.N, r.error)
            for r in self.rows
            if r.method == method and r.quantity == quantity and r.status == "ok"
            and (grid_kind is None or r.grid_kind == grid_kind)
            and (m is None or r.m == m)
        ]

    def fit(self, method, quantity, n_range=None, grid_kind=None, m=None) -> float:
        pairs = self.errors(method, quantity, grid_kind, m)
        if n_range is not None:
            lo, hi = n_range
            pairs = [(n, e) for n, e in pairs if lo <= n <= hi]
        return estimate_order(pairs)

    def order_fits(self) -> list:
        fits = []
        keys = sorted({(r.method, r.m, r.grid_kind, r.quantity) for r in self.rows},
                      key=lambda k: (k[0], k[1], k[2], _quantity_rank(k[3])))
        for method, m, kind, quantity in keys:
            pairs = self.errors(method, quantity, kind, m)
            try:
                order = estimate_order(pairs)
            except ValueError:
                order = float("nan")
            ns = [n for n, _ in pairs] or [0]
            fits.append(OrderFit(method, m, kind, quantity, min(ns), max(ns), order))
        return fits

    def failed(self) -> list:
        return [r for r in self.rows if r.status != "ok"]


def _quantity_rank(q):
    order = QUANTITIES_2D + QUANTITIES_1D
    return order.index(q) if q in order else len(order)


def estimate_order(pairs) -> float:
    """Negative least-squares slope of log(error) against log(N)."""
    pairs = list(pairs)
    good = [(n, e) for n, e in pairs if e > 0 and math.isfinite(e)]
    if len(good) < len(pairs):
        log.warning("excluded %d nonpositive or non-finite errors from the order fit", len(pairs) - len(good))
    if len(good) < 3:
        raise ValueError(f"need at least 3 positive errors to fit an order, got {len(good)}")
    n = np.log([p[0] for p in good])
    e = np.log([p[1] for p in good])
    slope = np.polyfit(n, e, 1)[0]
    return float(-slope)


def _run_one(problem, spec, penalty, ref_greeks, mask):
    try:
        u, _ = solve_pdcp(problem, spec, penalty)
    except Exception as exc:  # recorded, the sweep continues
        return None, f"failed: {type(exc).__name__}: {exc}"
    g = greeks_for(problem, u)
    return {q: float(np.max(np.abs(g[q][mask] - ref_greeks[q][mask]))) for q in g}, "ok"


def convergence_sweep(
    params,
    m: int,
    methods: Sequence[Union[str, StepperSpec]],
    N_values: Sequence[int] = DEFAULT_N_VALUES,
    grid_kind: str = QUADRATIC,
    roi: Optional[RegionOfInterest] = None,
    penalty: PenaltyConfig = PenaltyConfig(),
    reference: Optional[ReferenceSolution] = None,
    cache: Optional[ReferenceCache] = None,
    damping_steps: Optional[int] = None,
    jobs: int = 1,
    problem: Optional[DiscreteProblem] = None,
) -> ErrorReport:
    """ROI errors of value and Greeks against the reference for every (method, N).

    ``methods`` holds preset keys (be, cn, dirka, dirkb, lobatto) or explicit
    ``StepperSpec`` objects whose N and grid kind are overridden per run.
    """
    problem = problem or assemble(params, m)
    reference = reference or build_reference(params, m, cache, problem)
    roi = roi or RegionOfInterest.default(problem.dims, params.K)
    mask = roi.mask(problem.grids)
    quantities = QUANTITIES_1D if problem.dims == 1 else QUANTITIES_2D

    tasks = []
    for method in methods:
        for N in N_values:
            if isinstance(method, StepperSpec):
                spec = dataclasses.replace(method, N=N, grid_kind=grid_kind)
                if damping_steps is not None:
                    spec = dataclasses.replace(spec, damping_steps=damping_steps)
            else:
                spec = method_spec(method, problem.dims, N, grid_kind, damping_steps)
            tasks.append(spec)

    args = [(problem, spec, penalty, reference.greeks, mask) for spec in tasks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*args)))
    else:
        results = [_run_one(*a) for a in args]

    report = ErrorReport()
    for spec, (errs, status) in zip(tasks, results):
        name = preset_key(spec)
        for q in quantities:
            err = errs[q] if errs is not None else float("nan")
            report.rows.append(ErrorRow(name, m, spec.N, spec.grid_kind, q, err, status))
    return report


# --------------------------------------------------------------------------- output


def write_errors_csv(report: ErrorReport, path) -> None:
    """Columns: method,m,N,grid_kind,quantity,error (error is ``nan`` for failed runs)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "m", "N", "grid_kind", "quantity", "error"])
        for r in report.rows:
            w.writerow([r.method, r.m, r.N, r.grid_kind, r.quantity, f"{r.error:.12e}"])


def write_orders_csv(report: ErrorReport, path) -> None:
    """Columns: method,m,grid_kind,quantity,n_min,n_max,order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "m", "grid_kind", "quantity", "n_min", "n_max", "order"])
        for f in report.order_fits():
            w.writerow([f.method, f.m, f.grid_kind, f.quantity, f.n_min, f.n_max, f"{f.order:.6f}"])


# --------------------------------------------------------------------------- evaluation


def value_at(problem: DiscreteProblem, u: np.ndarray, point) -> float:
    """Cubic-spline interpolation of the nodal solution at an off-grid point."""
    if problem.dims == 1:
        return float(CubicSpline(problem.grids[0].points, u)(float(np.atleast_1d(point)[0])))
    s1, s2 = (float(x) for x in point)
    g1, g2 = problem.grids
    spline = RectBivariateSpline(g1.points, g2.points, np.asarray(u).reshape(g1.m, g2.m), kx=3, ky=3)
    return float(spline(s1, s2)[0, 0])


def early_exercise_point(problem: DiscreteProblem, u: np.ndarray, atol: float) -> float:
    """Largest node below the strike where the solution equals the payoff within atol."""
    s = problem.grids[0].points
    hit = (np.abs(u - problem.u0) <= atol) & (s < problem.K)
    if not hit.any():
        raise ValueError("no early exercise node found")
    return float(s[hit].max())


def default_jobs() -> int:
    return os.cpu_count() or 1
