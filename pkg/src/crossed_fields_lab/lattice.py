"""Finite-difference discretization of crossed-field Schroedinger operators.

Operators act on functions sampled at the interior nodes of a truncated box
with Dirichlet walls. Nodes are ordered row-major in (j, k): the flat index of
(x_j, y_k) is ``j * Ny + k`` with j = 0..Nx-1, k = 0..Ny-1, so the x-index
varies slowest and the matrix bandwidth equals Ny.

The semiclassical operator is

    H0(h) = (h Dx - B y)^2 + h^2 Dy^2 + eps x,    Dx = -i d/dx,

expanded as h^2 Dx^2 - 2 B y h Dx + B^2 y^2 + h^2 Dy^2 + eps x; h = 1 gives
the plain operator. Dx^2, Dy^2 use the 3-point stencil and Dx the centered
2-point stencil times -i.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .potentials import PotentialSpec, eval_potential

HERMITIAN_TAGS = ("H0", "H", "multiplication")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Interior nodes x_j = -Lx + (j+1) dx, j = 0..Nx-1, with dx = 2 Lx / (Nx + 1)."""

    Lx: float
    Ly: float
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx < 3 or self.Ny < 3:
            raise GridError(f"grid too small: Nx={self.Nx}, Ny={self.Ny} (need >= 3)")
        if self.Lx <= 0 or self.Ly <= 0:
            raise GridError("half-extents must be positive")

    @classmethod
    def with_spacing(cls, L: float, spacing: float, Ly: float | None = None) -> "Grid2D":
        """Square-spacing grid on [-L, L] x [-Ly, Ly] with spacing closest to `spacing`."""
        Ly = L if Ly is None else Ly
        nx = max(3, int(round(2 * L / spacing)) - 1)
        ny = max(3, int(round(2 * Ly / spacing)) - 1)
        return cls(float(L), float(Ly), nx, ny)

    @property
    def dx(self) -> float:
        return 2.0 * self.Lx / (self.Nx + 1)

    @property
    def dy(self) -> float:
        return 2.0 * self.Ly / (self.Ny + 1)

    @property
    def dimension(self) -> int:
        return self.Nx * self.Ny

    @property
    def x(self) -> np.ndarray:
        return -self.Lx + self.dx * np.arange(1, self.Nx + 1)

    @property
    def y(self) -> np.ndarray:
        return -self.Ly + self.dy * np.arange(1, self.Ny + 1)

    def index(self, j, k):
        return np.asarray(j) * self.Ny + np.asarray(k)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened node coordinates (X, Y) in matrix order."""
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return X.ravel(), Y.ravel()

    def boundary_distance(self) -> np.ndarray:
        """Per node, the number of cells to the nearest wall minus one (0 = adjacent to a wall)."""
        j = np.arange(self.Nx)
        k = np.arange(self.Ny)
        dj = np.minimum(j, self.Nx - 1 - j)
        dk = np.minimum(k, self.Ny - 1 - k)
        return np.minimum(dj[:, None], dk[None, :]).ravel()

    def x_boundary_distance(self) -> np.ndarray:
        j = np.arange(self.Nx)
        dj = np.minimum(j, self.Nx - 1 - j)
        return np.repeat(dj, self.Ny)


@dataclass(frozen=True)
class OperatorParams:
    """Field strengths B, eps and semiclassical parameter h (h = 1: non-semiclassical)."""

    B: float = 1.0
    eps: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        # B = 0 or eps = 0 are admitted for reference runs (Laplacian, Landau levels).
        if self.B < 0 or self.eps < 0:
            raise ValueError("B and eps must be nonnegative")
        if not 0 < self.h <= 1:
            raise ValueError("h must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix
    grid: Grid2D
    params: OperatorParams | None = None
    tag: str = "H0"

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def bandwidth(self) -> int:
        m = self.matrix.tocoo()
        return int(np.max(np.abs(m.row - m.col))) if m.nnz else 0

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_defect(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def __matmul__(self, other):
        if isinstance(other, DiscreteOperator):
            return self.matrix @ other.matrix
        return self.matrix @ other


def _second_difference(n: int, d: float) -> sp.csr_matrix:
    off = -np.ones(n - 1)
    return sp.diags([off, 2.0 * np.ones(n), off], [-1, 0, 1], format="csr") / d**2


def _central_difference(n: int, d: float) -> sp.csr_matrix:
    off = np.ones(n - 1)
    return sp.diags([-off, off], [-1, 1], format="csr") / (2.0 * d)


def momentum_x(grid: Grid2D) -> sp.csr_matrix:
    """Dx = -i d/dx with the centered 2-point stencil (Hermitian)."""
    return sp.kron(-1j * _central_difference(grid.Nx, grid.dx), sp.identity(grid.Ny), format="csr")


def build_h0(grid: Grid2D, params: OperatorParams) -> DiscreteOperator:
    """Assemble (h Dx - B y)^2 + h^2 Dy^2 + eps x on the grid."""
    if grid.Nx < 3 or grid.Ny < 3:
        raise GridError("grid too small")
    h, B = params.h, params.B
    X, Y = grid.mesh()
    Ix, Iy = sp.identity(grid.Nx), sp.identity(grid.Ny)
    kinetic = h * h * (
        sp.kron(_second_difference(grid.Nx, grid.dx), Iy)
        + sp.kron(Ix, _second_difference(grid.Ny, grid.dy))
    )
    # -2 B y h Dx with Dx = -i delta: the x-hopping between (j, k) and (j+-1, k)
    # is -h^2/dx^2 +- i B y_k h / dx, so the sum below is Hermitian entry by entry.
    cross = sp.diags(-2.0 * B * h * Y) @ momentum_x(grid)
    diag = sp.diags(B * B * Y * Y + params.eps * X)
    m = sp.csr_matrix(kinetic + cross + diag, dtype=complex)
    m.sum_duplicates()
    m.eliminate_zeros()
    return DiscreteOperator(m, grid, params, "H0")


def build_h(grid: Grid2D, params: OperatorParams, spec: PotentialSpec) -> DiscreteOperator:
    """build_h0 plus the potential sampled on the nodes."""
    h0 = build_h0(grid, params)
    X, Y = grid.mesh()
    v = np.asarray(eval_potential(spec, X, Y), dtype=float)
    m = sp.csr_matrix(h0.matrix + sp.diags(v.astype(complex)))
    m.eliminate_zeros()
    return DiscreteOperator(m, grid, params, "H")


def build_multiplication(grid: Grid2D, fn) -> DiscreteOperator:
    """Diagonal operator of a scalar field; `fn` is a callable fn(X, Y) or an array of node values."""
    if callable(fn):
        X, Y = grid.mesh()
        vals = np.asarray(fn(X, Y), dtype=float) * np.ones(grid.dimension)
    else:
        vals = np.asarray(fn, dtype=float).ravel()
        if vals.size != grid.dimension:
            raise ValueError("field size does not match the grid")
    if not np.all(np.isfinite(vals)):
        raise ValueError("multiplication field must be finite on the nodes")
    return DiscreteOperator(sp.diags(vals.astype(complex), format="csr"), grid, None, "multiplication")


def build_shift(grid: Grid2D, steps: int) -> DiscreteOperator:
    """Truncated shift (U u)(x_j, y_k) = u(x_{j+steps}, y_k); rows whose source leaves the grid are zero."""
    if abs(steps) >= grid.Nx:
        raise GridError(f"|steps|={abs(steps)} must be < Nx={grid.Nx}")
    j = np.arange(grid.Nx)
    src = j + steps
    ok = (src >= 0) & (src < grid.Nx)
    rows = (j[ok][:, None] * grid.Ny + np.arange(grid.Ny)[None, :]).ravel()
    cols = (src[ok][:, None] * grid.Ny + np.arange(grid.Ny)[None, :]).ravel()
    n = grid.dimension
    m = sp.csr_matrix((np.ones(rows.size, dtype=complex), (rows, cols)), shape=(n, n))
    return DiscreteOperator(m, grid, None, "shift")


def commutator(a: DiscreteOperator, b: DiscreteOperator) -> DiscreteOperator:
    """[A, B] = AB - BA."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    m = sp.csr_matrix(a.matrix @ b.matrix - b.matrix @ a.matrix)
    m.eliminate_zeros()
    return DiscreteOperator(m, a.grid, a.params or b.params, "commutator")
