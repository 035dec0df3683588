"""Embedded-eigenvalue candidates of the truncated H and the virial exclusion test.

For an eigenfunction phi of H = H0 + V, the expectation of [d/dx, H] vanishes,
which forces v = eps + <phi, (dV/dx) phi> = 0. A state with |v| clearly away
from zero cannot approximate an eigenfunction. When sup |dV/dx| < eps this
holds for every normalized state.

Box eigenvectors whose weight sits near the walls are truncation artifacts;
they are flagged by their boundary mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .funcalc import Eigensystem, eigendecompose
from .lattice import Grid2D, OperatorParams, build_h
from .potentials import PotentialSpec, dx_sup_norm, eval_dx_potential
from .ssf import BOUNDARY_CELLS, boundary_projector

LOC_THRESHOLD = 0.05
VIRIAL_MARGIN = 0.1  # in units of eps
NORM_TOL = 1e-10
VERDICTS = ("bulk-candidate", "boundary-artifact", "excluded-by-virial")


@dataclass(frozen=True)
class EigenCandidate:
    eigenvalue: float
    boundary_mass: float
    virial: float = math.nan
    verdict: str = "bulk-candidate"

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if not -1e-9 <= self.boundary_mass <= 1 + 1e-9:
            raise ValueError(f"boundary mass {self.boundary_mass} outside [0, 1]")

    def as_dict(self) -> dict:
        return {
            "eigenvalue": self.eigenvalue,
            "boundary_mass": self.boundary_mass,
            "virial": None if math.isnan(self.virial) else self.virial,
            "verdict": self.verdict,
        }


def _window_slice(es: Eigensystem, window) -> np.ndarray:
    lo, hi = window
    if hi < lo:
        raise ValueError("window must satisfy lo <= hi")
    if hi > es.upper:
        raise ValueError(f"window top {hi} exceeds the computed spectrum (upper={es.upper})")
    return np.flatnonzero((es.values >= lo) & (es.values <= hi))


def scan(es: Eigensystem, window, loc_threshold: float = LOC_THRESHOLD, cells: int = BOUNDARY_CELLS) -> list[EigenCandidate]:
    """Every eigenvalue of H in `window`, annotated with its boundary mass.

    A pair is a bulk candidate iff less than `loc_threshold` of its weight lies
    within `cells` grid cells of a wall.
    """
    if es.operator is None:
        raise ValueError("scan needs an eigensystem that remembers its operator")
    idx = _window_slice(es, window)
    if idx.size == 0:
        return []
    masses = np.clip(es.expectation(boundary_projector(es.operator.grid, cells)), 0.0, 1.0)
    return [
        EigenCandidate(
            float(es.values[i]),
            float(masses[i]),
            verdict="bulk-candidate" if masses[i] < loc_threshold else "boundary-artifact",
        )
        for i in idx
    ]


def virial_test(phi, params: OperatorParams, spec: PotentialSpec, grid: Grid2D) -> float:
    """v = eps + <phi, (dV/dx) phi> for a unit vector of node values."""
    phi = np.asarray(phi).ravel()
    if phi.size != grid.dimension:
        raise ValueError("vector size does not match the grid")
    nrm = float(np.linalg.norm(phi))
    if abs(nrm - 1.0) > NORM_TOL:
        raise ValueError(f"virial_test needs a normalized vector (norm {nrm!r})")
    X, Y = grid.mesh()
    return float(params.eps + np.sum(np.abs(phi) ** 2 * np.asarray(eval_dx_potential(spec, X, Y))))


@dataclass
class ExclusionReport:
    candidates: list[EigenCandidate]
    excluded_count: int
    surviving: list[EigenCandidate]
    dxv_sup: float
    eps: float
    inconclusive: bool
    notes: list[str] = field(default_factory=list)

    @property
    def bound_applies(self) -> bool:
        return self.dxv_sup < self.eps

    @property
    def consistent(self) -> bool:
        """False only if the sup-norm bound applies and yet candidates survive."""
        return not (self.bound_applies and self.surviving)

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "dxv_sup": self.dxv_sup,
            "inconclusive": self.inconclusive,
            "consistent": self.consistent,
            "excluded_count": self.excluded_count,
            "candidates": [c.as_dict() for c in self.candidates],
            "surviving": [c.as_dict() for c in self.surviving],
            "notes": list(self.notes),
        }


def exclusion_report(
    grid: Grid2D,
    params: OperatorParams,
    spec: PotentialSpec,
    window=(-3.0, 3.0),
    *,
    loc_threshold: float = LOC_THRESHOLD,
    margin: float | None = None,
    solver: str = "auto",
    es: Eigensystem | None = None,
) -> ExclusionReport:
    """scan followed by the virial test on each bulk candidate.

    Survivors are bulk candidates with |v| < margin (default 0.1 eps). When
    sup |dV/dx| >= eps the sup-norm exclusion is inapplicable and the report is
    flagged inconclusive.
    """
    margin = VIRIAL_MARGIN * params.eps if margin is None else margin
    if es is None:
        es = eigendecompose(build_h(grid, params, spec), upper=float(window[1]), solver=solver)
    cands = scan(es, window, loc_threshold)
    if cands:
        X, Y = grid.mesh()
        dxv = np.asarray(eval_dx_potential(spec, X, Y), dtype=float)
        idx = _window_slice(es, window)
        v = params.eps + es.expectation(dxv)[idx]
        out = []
        for c, vi in zip(cands, v):
            verdict = c.verdict
            if verdict == "bulk-candidate" and abs(vi) >= margin:
                verdict = "excluded-by-virial"
            out.append(EigenCandidate(c.eigenvalue, c.boundary_mass, float(vi), verdict))
        cands = out
    surviving = [c for c in cands if c.verdict == "bulk-candidate"]
    excluded = sum(c.verdict == "excluded-by-virial" for c in cands)
    sup = dx_sup_norm(spec)
    inconclusive = sup >= params.eps
    notes = []
    if inconclusive:
        notes.append("inconclusive: virial bound inapplicable (sup |dV/dx| >= eps)")
    rep = ExclusionReport(cands, excluded, surviving, sup, params.eps, inconclusive, notes)
    if not rep.consistent:
        rep.notes.append("surviving candidates despite sup |dV/dx| < eps; margin exceeds eps - sup |dV/dx|")
    return rep
