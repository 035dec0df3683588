"""Functional calculus and traces of discretized Hermitian operators.

Two exact (direct, non-iterative) eigensolvers are available:

``dense``
    Full LAPACK eigendecomposition with eigenvectors. Memory is O(n^2), so it
    is capped by ``dense_limit``.
``banded``
    Eigenvalues only, from the banded form of the sparse matrix (bandwidth Ny).
    Diagonal expectation values <v_i|W|v_i> are recovered from eigenvalue
    sensitivities, d lambda_i / ds of H + sW at s = 0 (Hellmann-Feynman), by a
    one-sided difference with a tiny step. Traces use the smoother identity
    tr(W f(H)) = d/ds sum_i F(lambda_i(H + sW)) with F' = f, F(+inf) = 0,
    differenced centrally; it is insensitive to eigenvalue ordering. Operators invariant under complex
    conjugation combined with the reflection y -> -y are first brought to an
    equivalent real symmetric band matrix, which is about five times faster.

Traces tr(W f(H)) are never formed by materializing f(H).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import ndtr

from .lattice import HERMITIAN_TAGS, DiscreteOperator, Grid2D

DENSE_LIMIT = 20_000
AUTO_DENSE_MAX = 1600
SENSITIVITY_STEP = 1e-6
TRACE_STEP = 1e-4


class DenseLimitError(RuntimeError):
    """Raised instead of silently switching methods when a dense solve is too large."""


class NotHermitianError(ValueError):
    pass


# -- smoothing functions -----------------------------------------------------

WINDOW_KINDS = ("gaussian-window", "bump-window", "primitive-of-gaussian", "identity")


@dataclass(frozen=True)
class SmoothingFunction:
    """Energy window f(s).

    ``gaussian-window``
        (2 pi sigma^2)^(-1/2) exp(-(s - center)^2 / (2 sigma^2)).
    ``bump-window``
        C-infinity bump exp(-1/(1 - u^2)), u = (s - center)/sigma, normalized
        to unit integral; vanishes exactly outside [center - sigma, center + sigma].
    ``primitive-of-gaussian``
        Phi((center - s)/sigma): a smoothed indicator of s < center, so that
        sum_i f(lambda_i) is a smoothed eigenvalue count below `center`.
    ``identity``
        f(s) = s (for sanity checks of the calculus).
    """

    kind: str = "gaussian-window"
    center: float = 0.0
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def support(self) -> tuple[float, float] | None:
        if self.kind == "bump-window":
            return (self.center - self.sigma, self.center + self.sigma)
        return None

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        u = (s - self.center) / self.sigma
        if self.kind == "gaussian-window":
            out = np.exp(-0.5 * u * u) / (math.sqrt(2 * math.pi) * self.sigma)
        elif self.kind == "primitive-of-gaussian":
            out = ndtr(-u)
        elif self.kind == "bump-window":
            inside = np.abs(u) < 1
            uu = np.where(inside, u, 0.0)
            out = np.where(inside, np.exp(-1.0 / (1.0 - uu * uu)), 0.0) / (_BUMP_MASS * self.sigma)
        else:
            out = s.copy()
        return float(out) if out.ndim == 0 else out

    def upper_tail(self, s):
        """T(s) = int_s^infinity f(t) dt, so that -T is the antiderivative vanishing at +infinity."""
        s = np.asarray(s, dtype=float)
        if self.kind == "gaussian-window":
            out = ndtr((self.center - s) / self.sigma)
        elif self.kind == "primitive-of-gaussian":
            z = (self.center - s) / self.sigma
            out = self.sigma * (z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi))
        elif self.kind == "bump-window":
            u = (s - self.center) / self.sigma
            inner = _bump_tail()(np.clip(u, -1.0, 1.0))
            out = np.where(u <= -1, 1.0, np.where(u >= 1, 0.0, inner))
        else:
            raise ValueError("the identity window has no upper tail")
        return float(out) if out.ndim == 0 else out

    def negligible_above(self, e: float, tol: float = 1e-15) -> bool:
        """True if f(s) <= tol * max f for every s >= e (f vanishes at +infinity)."""
        if self.kind == "identity":
            return False
        if self.kind == "bump-window":
            return e >= self.center + self.sigma
        if e <= self.center:
            return False
        peak = 1.0 if self.kind == "primitive-of-gaussian" else 1.0 / (math.sqrt(2 * math.pi) * self.sigma)
        return self(e) <= tol * peak


def gaussian_window(center: float, sigma: float) -> SmoothingFunction:
    return SmoothingFunction("gaussian-window", center, sigma)


def _bump_mass() -> float:
    from scipy.integrate import quad

    return quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1, 1, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


_BUMP_MASS = _bump_mass()


@lru_cache(maxsize=1)
def _bump_tail():
    """Spline of the normalized bump's upper tail on [-1, 1] (unit sigma)."""
    from scipy.integrate import quad
    from scipy.interpolate import CubicHermiteSpline

    u = np.linspace(-1.0, 1.0, 2001)
    dens = np.exp(-1.0 / np.maximum(1.0 - u * u, 1e-300)) / _BUMP_MASS
    pieces = [
        quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), a, b, epsabs=1e-16, epsrel=1e-13)[0]
        for a, b in zip(u[:-1], u[1:])
    ]
    tail = 1.0 - np.concatenate([[0.0], np.cumsum(pieces)]) / _BUMP_MASS
    tail[-1] = 0.0
    return CubicHermiteSpline(u, tail, -dens)


# -- eigensolvers ------------------------------------------------------------


def _as_sparse(w, n: int) -> sp.csr_matrix:
    if isinstance(w, DiscreteOperator):
        w = w.matrix
    if sp.issparse(w):
        return sp.csr_matrix(w)
    w = np.asarray(w)
    if w.ndim == 1:
        if w.size != n:
            raise ValueError("weight size does not match the operator dimension")
        return sp.diags(w.astype(complex), format="csr")
    return sp.csr_matrix(w)


def _check_hermitian(m: sp.spmatrix, tol: float = 1e-13):
    d = m - m.conj().T
    scale = max(1.0, abs(m).max()) if m.nnz else 1.0
    if d.nnz and abs(d).max() > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian (defect {abs(d).max():.3e})")


def _reflection_perm(grid: Grid2D) -> np.ndarray:
    j, k = np.divmod(np.arange(grid.dimension), grid.Ny)
    return j * grid.Ny + (grid.Ny - 1 - k)


def reflection_parity(m: sp.spmatrix, grid: Grid2D, tol: float = 1e-12) -> int:
    """+1 if conj(R m R) = m, -1 if conj(R m R) = -m, 0 otherwise (R: y -> -y)."""
    p = _reflection_perm(grid)
    m = sp.csr_matrix(m)
    t = m[p][:, p].conj()
    scale = max(1.0, abs(m).max()) if m.nnz else 1.0
    for sign in (1, -1):
        d = t - sign * m
        if d.nnz == 0 or abs(d).max() <= tol * scale:
            return sign
    return 0


def _real_basis(grid: Grid2D) -> sp.csr_matrix:
    """Unitary Q whose rows are reflection-conjugation invariant basis vectors.

    Within each x-column the basis is ordered (center), (1, +), (1, -), (2, +), ...
    with u_p+ = (e_p + e_-p)/sqrt 2 and u_p- = i (e_p - e_-p)/sqrt 2, which keeps
    the bandwidth at about Ny.
    """
    ny = grid.Ny
    half = ny // 2
    s = 1.0 / math.sqrt(2.0)
    loc_rows, loc_cols, loc_vals = [], [], []
    start = 0
    if ny % 2:
        loc_rows.append(0)
        loc_cols.append(half)
        loc_vals.append(1.0)
        start = 1
    for p in range(1, half + 1):
        hi = half + p if ny % 2 else half - 1 + p
        lo = half - p
        a = start + 2 * (p - 1)
        loc_rows += [a, a, a + 1, a + 1]
        loc_cols += [hi, lo, hi, lo]
        loc_vals += [s, s, 1j * s, -1j * s]
    block = sp.csr_matrix((np.array(loc_vals, dtype=complex), (loc_rows, loc_cols)), shape=(ny, ny))
    return sp.kron(sp.identity(grid.Nx), block, format="csr")


def _to_band(m: sp.spmatrix) -> tuple[np.ndarray, int]:
    c = sp.triu(m).tocoo()
    b = int(np.max(c.col - c.row)) if c.nnz else 0
    ab = np.zeros((b + 1, m.shape[0]), dtype=c.data.dtype)
    ab[b + c.row - c.col, c.col] = c.data
    return ab, b


def _row_norm(w: sp.spmatrix) -> float:
    return float(abs(w).sum(axis=1).max())


def _gershgorin(m: sp.spmatrix) -> tuple[float, float]:
    d = m.diagonal().real
    r = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - r)), float(np.max(d + r))


def banded_eigvalsh(m: sp.spmatrix, upper: float | None = None, grid: Grid2D | None = None) -> np.ndarray:
    """Ascending eigenvalues (those <= upper, or all) of a sparse Hermitian matrix."""
    m = sp.csr_matrix(m)
    if grid is not None and reflection_parity(m, grid) == 1:
        q = _real_basis(grid)
        m = sp.csr_matrix((q.conj() @ m @ q.T).real)
        m.eliminate_zeros()
    lo, hi = _gershgorin(m)
    ab, _ = _to_band(m)
    if upper is None or upper >= hi:
        w = sla.eigvals_banded(ab, lower=False, select="a")
    elif upper < lo:
        w = np.empty(0)
    else:
        w = sla.eigvals_banded(ab, lower=False, select="v", select_range=(lo - 1.0, upper))
    return np.sort(np.asarray(w, dtype=float))


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Make the first component of magnitude > 1e-8 of each vector real positive."""
    mag = np.abs(vecs)
    first = np.argmax(mag > 1e-8, axis=0)
    ph = vecs[first, np.arange(vecs.shape[1])]
    ph = ph / np.abs(ph)
    return vecs / ph[None, :]


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Ascending real eigenvalues with an orthonormal basis or a sensitivity oracle.

    When `upper` is finite only eigenvalues <= upper are present; functions
    traced against a partial system must be negligible above `upper`.
    """

    values: np.ndarray
    vectors: np.ndarray | None
    tag: str
    dimension: int
    upper: float = math.inf
    operator: DiscreteOperator | None = field(default=None, repr=False)
    step: float = SENSITIVITY_STEP
    _perturbed: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def complete(self) -> bool:
        return self.count == self.dimension

    def expectation(self, weight) -> np.ndarray:
        """Per-eigenpair <v_i|W|v_i> for a Hermitian weight W (sparse, dense or diagonal array)."""
        w = _as_sparse(weight, self.dimension)
        w.eliminate_zeros()
        _check_hermitian(w)
        if self.count == 0:
            return np.zeros(0)
        if self.vectors is not None:
            v = self.vectors
            return np.real(np.einsum("ij,ij->j", v.conj(), w @ v))
        if self.operator is None:
            raise ValueError("eigenvalue-only system without an operator cannot form expectations")
        if w.nnz == 0:
            return np.zeros(self.count)
        grid = self.operator.grid
        if reflection_parity(self.operator.matrix, grid) == 1 and reflection_parity(w, grid) == -1:
            # Real eigenvectors in the invariant basis see an odd weight as zero.
            return np.zeros(self.count)
        s = self.step / _row_norm(w)
        shifted = self.perturbed_values(w, s)
        if shifted.size < self.count:
            raise RuntimeError("perturbed spectrum lost eigenvalues; widen the window")
        return (shifted[: self.count] - self.values) / s

    def perturbed_values(self, w: sp.spmatrix, s: float) -> np.ndarray:
        """Eigenvalues of H + sW up to upper + 2|s| ||W|| (cached per weight and step)."""
        w = sp.csr_matrix(w)
        key = (w.shape, w.data.tobytes(), w.indices.tobytes(), w.indptr.tobytes(), s, self.upper)
        if key not in self._perturbed:
            upper = None if math.isinf(self.upper) else self.upper + 2 * abs(s) * _row_norm(w) + 1e-9
            self._perturbed[key] = banded_eigvalsh(self.operator.matrix + s * w, upper, self.operator.grid)
        return self._perturbed[key]

    def trace_sensitivity(self, weight, f: "SmoothingFunction") -> float:
        """tr(W f(H)) for Hermitian W from spectra of H +- sW (eigenvalue-only systems)."""
        w = _as_sparse(weight, self.dimension)
        w.eliminate_zeros()
        _check_hermitian(w)
        if w.nnz == 0:
            return 0.0
        if self.operator is None:
            raise ValueError("eigenvalue-only system without an operator cannot form traces")
        grid = self.operator.grid
        if reflection_parity(self.operator.matrix, grid) == 1 and reflection_parity(w, grid) == -1:
            return 0.0
        s = TRACE_STEP / _row_norm(w)
        lp = self.perturbed_values(w, s)
        lm = self.perturbed_values(w, -s)
        k = min(lp.size, lm.size)
        # entries past k sit above the cut where the tail is negligible
        d = f.upper_tail(lm[:k]) - f.upper_tail(lp[:k])
        d = np.sum(d) - np.sum(f.upper_tail(lp[k:])) + np.sum(f.upper_tail(lm[k:]))
        return float(d / (2 * s))

    def restrict(self, upper: float) -> "Eigensystem":
        """The same system truncated to eigenvalues <= upper."""
        if upper >= self.upper:
            return self
        k = int(np.searchsorted(self.values, upper, side="right"))
        vecs = None if self.vectors is None else self.vectors[:, :k]
        return Eigensystem(
            self.values[:k], vecs, self.tag, self.dimension, float(upper), self.operator, self.step, self._perturbed
        )

    def residuals(self) -> np.ndarray:
        """||H v - lambda v|| per pair (dense systems only)."""
        if self.vectors is None or self.operator is None:
            raise ValueError("residuals need eigenvectors and the source operator")
        r = self.operator.matrix @ self.vectors - self.vectors * self.values[None, :]
        return np.linalg.norm(r, axis=0)


def eigendecompose(
    op: DiscreteOperator,
    *,
    upper: float | None = None,
    solver: str = "auto",
    dense_limit: int = DENSE_LIMIT,
) -> Eigensystem:
    """Spectrum of a Hermitian operator, optionally truncated to eigenvalues <= upper.

    ``solver`` is ``dense`` (eigenvectors), ``banded`` (eigenvalues plus
    sensitivity-based expectations) or ``auto`` (dense up to 1600 unknowns).
    """
    if op.tag not in HERMITIAN_TAGS:
        raise NotHermitianError(f"operator tag {op.tag!r} is not Hermitian")
    _check_hermitian(op.matrix)
    n = op.dimension
    if solver == "auto":
        solver = "dense" if n <= AUTO_DENSE_MAX else "banded"
    ub = math.inf if upper is None else float(upper)
    if solver == "dense":
        if n > dense_limit:
            raise DenseLimitError(f"dimension {n} exceeds the dense limit {dense_limit}; coarsen the grid")
        a = op.matrix.toarray()
        if upper is None:
            w, v = sla.eigh(a)
        else:
            lo, _ = _gershgorin(op.matrix)
            if ub < lo:
                w, v = np.empty(0), np.empty((n, 0), dtype=complex)
            else:
                w, v = sla.eigh(a, subset_by_value=(lo - 1.0, ub))
        return Eigensystem(np.asarray(w, float), _fix_phases(np.asarray(v, complex)), op.tag, n, ub, op)
    if solver == "banded":
        w = banded_eigvalsh(op.matrix, upper, op.grid)
        return Eigensystem(w, None, op.tag, n, ub, op)
    raise ValueError(f"unknown solver {solver!r}")


# -- functional calculus -----------------------------------------------------


def _check_window(f: SmoothingFunction, es: Eigensystem):
    if math.isinf(es.upper):
        return
    if not f.negligible_above(es.upper):
        raise ValueError(
            f"window {f.kind}@{f.center} is not negligible above the computed spectrum (upper={es.upper})"
        )


def apply_function(es: Eigensystem, f: SmoothingFunction) -> DiscreteOperator:
    """Materialize f(H) = sum_i f(lambda_i) v_i v_i^* (dense systems only)."""
    if es.vectors is None:
        raise ValueError("apply_function needs eigenvectors (use the dense solver)")
    _check_window(f, es)
    v = es.vectors
    m = (v * f(es.values)[None, :]) @ v.conj().T
    m = 0.5 * (m + m.conj().T)
    grid = es.operator.grid if es.operator is not None else None
    params = es.operator.params if es.operator is not None else None
    return DiscreteOperator(sp.csr_matrix(m), grid, params, "multiplication")


def trace_function(f: SmoothingFunction, es: Eigensystem) -> float:
    _check_window(f, es)
    return float(np.sum(f(es.values)))


def trace_diff(f: SmoothingFunction, es_h: Eigensystem, es_h0: Eigensystem) -> float:
    """sum_i f(lambda_i(H)) - sum_i f(lambda_i(H0)), i.e. <xi', f>."""
    if es_h.dimension != es_h0.dimension:
        raise ValueError(f"dimension mismatch: {es_h.dimension} vs {es_h0.dimension}")
    return trace_function(f, es_h) - trace_function(f, es_h0)


def weighted_trace(weight, f: SmoothingFunction, es: Eigensystem, expectations: np.ndarray | None = None):
    """tr(W f(H)) without materializing f(H).

    Dense systems use sum_i f(lambda_i) <v_i|W|v_i>; eigenvalue-only systems
    use the trace sensitivity. A non-Hermitian W is split as A + iC with A, C
    Hermitian and the (complex) trace is returned. Pass precomputed
    `expectations` to reuse them.
    """
    _check_window(f, es)
    if expectations is not None:
        return float(np.sum(f(es.values) * expectations))
    w = _as_sparse(weight, es.dimension)
    if w.shape[0] != es.dimension:
        raise ValueError("dimension mismatch between weight and eigensystem")

    def tr(m):
        if es.vectors is None:
            return es.trace_sensitivity(m, f)
        return float(np.sum(f(es.values) * es.expectation(m)))

    try:
        _check_hermitian(w)
    except NotHermitianError:
        a = 0.5 * (w + w.conj().T)
        c = (w - w.conj().T) / 2j
        return complex(tr(a), tr(c))
    return tr(w)
