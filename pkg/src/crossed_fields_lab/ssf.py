"""Spectral shift function by spectral difference and by the dV/dx trace formula.

The smoothed derivative xi'_sigma(lambda) = tr(g(H) - g(H0)) with a Gaussian
window g of width sigma centered at lambda is computed two ways:

* difference route: sum over eigenvalues of H minus sum over eigenvalues of H0;
* formula route: -(1/eps) tr((dV/dx) g(H)), which only needs H.

Both routes share cached spectra per (grid, params, potential).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .funcalc import (
    Eigensystem,
    SmoothingFunction,
    eigendecompose,
    gaussian_window,
    trace_diff,
    weighted_trace,
)
from .lattice import (
    DiscreteOperator,
    Grid2D,
    GridError,
    OperatorParams,
    build_h,
    build_h0,
    build_multiplication,
    build_shift,
)
from .potentials import PotentialSpec, eval_dx_potential, eval_potential

WINDOW_SIGMAS = 12.0
GUARD_SIGMAS = 3.0
BOUNDARY_CELLS = 3
BOUNDARY_LOCALIZED = 0.5
BOUNDARY_WEIGHT_MAX = 0.01

METHODS = ("difference", "formula", "both")


class GuardError(ValueError):
    """The energy grid reaches into the range polluted by boundary states."""


@dataclass(frozen=True)
class SSFQuery:
    energies: tuple[float, ...]
    sigma: float
    grid: Grid2D
    params: OperatorParams
    potential: PotentialSpec
    method: str = "both"
    solver: str = "auto"
    guard: bool = True

    def __post_init__(self):
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if len(self.energies) == 0:
            raise ValueError("empty energy grid")
        if np.any(np.diff(self.energies) <= 0):
            raise ValueError("energy grid must be strictly ascending")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")

    @property
    def upper(self) -> float:
        """Highest eigenvalue needed so that every window is negligible beyond it."""
        return self.energies[-1] + WINDOW_SIGMAS * self.sigma


@dataclass
class SSFResult:
    energies: np.ndarray
    values: dict[str, np.ndarray]
    residual: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def relative_residual(self) -> float:
        """sup |difference - formula| / (sup |difference| + 1e-8 * dimension)."""
        if self.residual is None:
            raise ValueError("result does not carry both methods")
        floor = 1e-8 * self.metadata.get("dimension", 1)
        return float(np.max(self.residual) / (np.max(np.abs(self.values["difference"])) + floor))


# -- cached spectra ------------------------------------------------------------


_SPECTRA: dict = {}
_SPECTRA_MAX = 12


def _spectrum(grid: Grid2D, params: OperatorParams, potential: PotentialSpec | None, upper: float, solver: str):
    """Cached eigensystem; a cached solve with a higher cut is truncated instead of recomputed."""
    if potential is not None and potential.kind == "zero":
        potential = None  # share the H0 solve so V = 0 differences vanish exactly
    key = (grid, params, potential, solver)
    es = _SPECTRA.get(key)
    if es is None or es.upper < upper:
        op = build_h0(grid, params) if potential is None else build_h(grid, params, potential)
        es = eigendecompose(op, upper=upper, solver=solver)
        _SPECTRA.pop(key, None)
        if len(_SPECTRA) >= _SPECTRA_MAX:
            _SPECTRA.pop(next(iter(_SPECTRA)))
        _SPECTRA[key] = es
    return es.restrict(upper)


@lru_cache(maxsize=16)
def _expectations(grid, params, potential, upper, solver, which: str) -> np.ndarray:
    es = _spectrum(grid, params, potential, upper, solver)
    if which == "dxv":
        return es.expectation(_dxv_nodes(grid, potential))
    if which == "boundary":
        return es.expectation(boundary_projector(grid))
    raise ValueError(which)


def clear_cache():
    _SPECTRA.clear()
    _expectations.cache_clear()


def spectra(q: SSFQuery) -> tuple[Eigensystem, Eigensystem]:
    """(H0, H) eigensystems for the query context, up to the query's energy cut."""
    up = _round_upper(q.upper)
    return (
        _spectrum(q.grid, q.params, None, up, q.solver),
        _spectrum(q.grid, q.params, q.potential, up, q.solver),
    )


def _round_upper(u: float) -> float:
    # Coarse rounding lets queries with nearby windows share one spectrum.
    return float(math.ceil(u))


# -- boundary-pollution guard ------------------------------------------------


def boundary_projector(grid: Grid2D, cells: int = BOUNDARY_CELLS) -> np.ndarray:
    """Diagonal indicator of nodes within `cells` grid cells of a wall."""
    return (grid.boundary_distance() < cells).astype(float)


def boundary_masses(grid, params, potential, upper, solver="auto") -> np.ndarray:
    return _expectations(grid, params, potential, _round_upper(upper), solver, "boundary")


def resolved_window(
    es: Eigensystem,
    masses: np.ndarray,
    sigma: float,
    *,
    localized: float = BOUNDARY_LOCALIZED,
    max_weight: float = BOUNDARY_WEIGHT_MAX,
) -> tuple[float, float]:
    """Largest energy interval whose Gaussian-window weight on boundary-localized states is < max_weight.

    A state is boundary-localized if more than `localized` of its weight sits
    within three cells of a wall. Energies within 6 sigma of the computed
    spectral cut are never counted as resolved.
    """
    lam = es.values
    if lam.size == 0:
        return (math.nan, math.nan)
    top = min(lam[-1], es.upper - 6 * sigma) if math.isfinite(es.upper) else lam[-1]
    grid = np.arange(lam[0], top + 0.25 * sigma, 0.25 * sigma)
    bad = (masses > localized).astype(float)
    w = np.exp(-0.5 * ((grid[:, None] - lam[None, :]) / sigma) ** 2)
    total = w.sum(axis=1)
    frac = np.divide(w @ bad, total, out=np.ones_like(total), where=total > 1e-300)
    ok = frac < max_weight
    best, cur = None, None
    for i, good in enumerate(ok):
        if good:
            cur = (cur[0], i) if cur else (i, i)
            if best is None or cur[1] - cur[0] > best[1] - best[0]:
                best = cur
        else:
            cur = None
    if best is None:
        return (math.nan, math.nan)
    return (float(grid[best[0]]), float(grid[best[1]]))


def check_guard(q: SSFQuery) -> tuple[float, float]:
    es_h0, es_h = spectra(q)
    lo, hi = math.inf, -math.inf
    for pot, es in ((None, es_h0), (q.potential, es_h)):
        m = boundary_masses(q.grid, q.params, pot, q.upper, q.solver)
        a, b = resolved_window(es, m, q.sigma)
        lo, hi = (a, b) if lo == math.inf else (max(lo, a), min(hi, b))
    if not (q.energies[0] >= lo + GUARD_SIGMAS * q.sigma and q.energies[-1] <= hi - GUARD_SIGMAS * q.sigma):
        raise GuardError(
            f"energies [{q.energies[0]}, {q.energies[-1]}] not inside the resolved window "
            f"[{lo:.3f}, {hi:.3f}] shrunk by {GUARD_SIGMAS} sigma"
        )
    return lo, hi


# -- the two routes ------------------------------------------------------------


def _metadata(q: SSFQuery, es_h0, es_h) -> dict:
    spec_min = min(es_h0.values[:1].tolist() + es_h.values[:1].tolist() or [math.nan])
    return {
        "grid": q.grid,
        "params": q.params,
        "sigma": q.sigma,
        "dimension": q.grid.dimension,
        "spectrum_min": spec_min,
    }


def difference_values(energies, sigma: float, es_h: Eigensystem, es_h0: Eigensystem) -> np.ndarray:
    return np.array([trace_diff(gaussian_window(e, sigma), es_h, es_h0) for e in energies])


def formula_values(energies, sigma: float, es_h: Eigensystem, dxv: np.ndarray, eps: float) -> np.ndarray:
    """-(1/eps) tr((dV/dx) g(H)) per window center; `dxv` holds dV/dx on the nodes."""
    if eps == 0:
        raise ZeroDivisionError("the trace formula needs a nonzero electric field")
    ex = es_h.expectation(dxv) if es_h.vectors is not None else None
    return np.array([-weighted_trace(dxv, gaussian_window(e, sigma), es_h, expectations=ex) / eps for e in energies])


def _dxv_nodes(grid: Grid2D, potential: PotentialSpec) -> np.ndarray:
    X, Y = grid.mesh()
    return np.asarray(eval_dx_potential(potential, X, Y), dtype=float)


def ssf_via_difference(q: SSFQuery) -> SSFResult:
    """xi'_sigma(lambda) = tr(g(H) - g(H0)) on the query's energy grid."""
    if q.guard:
        check_guard(q)
    es_h0, es_h = spectra(q)
    vals = difference_values(q.energies, q.sigma, es_h, es_h0)
    return SSFResult(np.array(q.energies), {"difference": vals}, None, _metadata(q, es_h0, es_h))


def ssf_via_formula(q: SSFQuery) -> SSFResult:
    """xi'_sigma(lambda) = -(1/eps) tr((dV/dx) g(H)); H0 is never diagonalized."""
    if q.guard:
        check_guard(q)
    es_h = _spectrum(q.grid, q.params, q.potential, _round_upper(q.upper), q.solver)
    vals = formula_values(q.energies, q.sigma, es_h, _dxv_nodes(q.grid, q.potential), q.params.eps)
    meta = {"grid": q.grid, "params": q.params, "sigma": q.sigma, "dimension": q.grid.dimension}
    return SSFResult(np.array(q.energies), {"formula": vals}, None, meta)


def compute_ssf(q: SSFQuery) -> SSFResult:
    """Run the methods requested by the query; with ``both`` the residual series is filled in."""
    if q.method == "difference":
        return ssf_via_difference(q)
    if q.method == "formula":
        return ssf_via_formula(q)
    d = ssf_via_difference(q)
    f = ssf_via_formula(q)
    d.values.update(f.values)
    d.residual = np.abs(d.values["difference"] - d.values["formula"])
    return d


def ssf_increment(
    lam1: float, lam2: float, sigma: float, grid: Grid2D, params: OperatorParams, potential: PotentialSpec,
    solver: str = "auto",
) -> float:
    """xi_sigma(lam2) - xi_sigma(lam1): the exact integral of xi'_sigma over [lam1, lam2].

    Uses primitive-of-Gaussian windows, i.e. smoothed eigenvalue counts of H
    minus those of H0 below each endpoint.
    """
    up = _round_upper(max(lam1, lam2) + WINDOW_SIGMAS * sigma)
    es_h0 = _spectrum(grid, params, None, up, solver)
    es_h = _spectrum(grid, params, potential, up, solver)
    c2 = trace_diff(SmoothingFunction("primitive-of-gaussian", lam2, sigma), es_h, es_h0)
    c1 = trace_diff(SmoothingFunction("primitive-of-gaussian", lam1, sigma), es_h, es_h0)
    return c2 - c1


def normalize_ssf(result: SSFResult) -> SSFResult:
    """Integrate xi'_sigma from the left end of the grid (trapezoid rule), pinned to 0 there.

    The left end must lie at least 3 sigma below the lowest eigenvalue of H and
    H0 so that xi vanishes there.
    """
    sigma = result.metadata.get("sigma")
    smin = result.metadata.get("spectrum_min")
    if sigma is None or smin is None:
        raise ValueError("result lacks sigma/spectrum_min metadata")
    if result.energies[0] > smin - GUARD_SIGMAS * sigma:
        raise ValueError(
            f"grid starts at {result.energies[0]}, above spectrum minimum {smin:.3f} - 3 sigma; "
            "extend it to the left"
        )
    vals = {k: cumulative_trapezoid(v, result.energies, initial=0.0) for k, v in result.values.items()}
    res = None
    if "difference" in vals and "formula" in vals:
        res = np.abs(vals["difference"] - vals["formula"])
    meta = dict(result.metadata, normalized=True)
    return SSFResult(result.energies.copy(), vals, res, meta)


# -- shift-operator identity ---------------------------------------------------


class ShiftReport(NamedTuple):
    lhs: complex
    rhs: complex
    residual: float


def shift_identity_check(
    grid: Grid2D,
    params: OperatorParams,
    spec: PotentialSpec,
    steps: int,
    f: SmoothingFunction,
    solver: str = "auto",
) -> ShiftReport:
    """Compare tr(U (f(H) - f(H0))) with -(1/eps) tr(((V(x+tau) - V(x))/tau) U f(H)).

    U shifts by ``steps`` cells (tau = steps * dx); both traces are restricted
    to rows at more than |steps| cells from the x-walls.
    """
    if steps == 0:
        raise ValueError("steps must be nonzero")
    if abs(steps) >= grid.Nx:
        raise GridError(f"|steps|={abs(steps)} must be < Nx={grid.Nx}")
    if params.eps == 0:
        raise ZeroDivisionError("the identity needs a nonzero electric field")
    tau = steps * grid.dx
    upper = _round_upper(f.center + WINDOW_SIGMAS * f.sigma)
    es_h0 = _spectrum(grid, params, None, upper, solver)
    es_h = _spectrum(grid, params, spec, upper, solver)
    u = build_shift(grid, steps).matrix
    interior = build_multiplication(grid, (grid.x_boundary_distance() > abs(steps)).astype(float)).matrix
    pu = interior @ u
    X, Y = grid.mesh()
    q = (np.asarray(eval_potential(spec, X + tau, Y)) - np.asarray(eval_potential(spec, X, Y))) / tau
    qu = interior @ build_multiplication(grid, q).matrix @ u
    lhs = weighted_trace(pu, f, es_h) - weighted_trace(pu, f, es_h0)
    rhs = -weighted_trace(qu, f, es_h) / params.eps
    return ShiftReport(_simplify(lhs), _simplify(rhs), float(abs(lhs - rhs)))


def _simplify(z):
    z = complex(z)
    return z.real if z.imag == 0 else z


def formula_trace(grid: Grid2D, params: OperatorParams, spec: PotentialSpec, f: SmoothingFunction, solver="auto"):
    """-(1/eps) tr((dV/dx) f(H)) for a single window."""
    upper = _round_upper(f.center + WINDOW_SIGMAS * f.sigma)
    es_h = _spectrum(grid, params, spec, upper, solver)
    return -weighted_trace(_dxv_nodes(grid, spec), f, es_h) / params.eps


def operator_spectra(h0: DiscreteOperator, h: DiscreteOperator, upper: float, solver="auto"):
    """Eigensystems for arbitrary (uncached) operator pairs, e.g. rank-one perturbations."""
    return eigendecompose(h0, upper=upper, solver=solver), eigendecompose(h, upper=upper, solver=solver)


def spectrum_pair(grid: Grid2D, params: OperatorParams, potential: PotentialSpec, upper: float, solver: str = "auto"):
    """Cached (H0, H) eigensystems up to `upper`; later queries with lower cuts reuse them."""
    up = _round_upper(upper)
    return _spectrum(grid, params, None, up, solver), _spectrum(grid, params, potential, up, solver)
