import math

import numpy as np
import pytest
import scipy.sparse as sp

from crossed_fields_lab.lattice import (
    Grid2D,
    GridError,
    OperatorParams,
    build_h,
    build_h0,
    build_multiplication,
    build_shift,
    commutator,
)
from crossed_fields_lab.potentials import (
    PotentialSpec,
    default_bump,
    eval_dx_potential,
    eval_potential,
    zero_potential,
)

P = OperatorParams()


def test_grid_geometry():
    g = Grid2D(2.0, 3.0, 3, 5)
    assert g.dx == pytest.approx(1.0) and g.dy == pytest.approx(1.0)
    assert np.allclose(g.x, [-1, 0, 1])
    assert np.allclose(g.y, [-2, -1, 0, 1, 2])
    assert g.dimension == 15
    # row-major: x-index slowest
    X, Y = g.mesh()
    assert X[g.index(2, 1)] == 1.0 and Y[g.index(2, 1)] == -1.0


def test_grid_too_small():
    with pytest.raises(GridError):
        Grid2D(1.0, 1.0, 2, 5)


def test_with_spacing():
    g = Grid2D.with_spacing(8, 0.25)
    assert g.Nx == 63 and g.dx == pytest.approx(0.25)


def test_params_validation():
    with pytest.raises(ValueError):
        OperatorParams(h=0.0)
    with pytest.raises(ValueError):
        OperatorParams(h=1.5)
    with pytest.raises(ValueError):
        OperatorParams(B=-1.0)


def test_h0_3x3_diagonal():
    g = Grid2D(2.0, 2.0, 3, 3)
    m = build_h0(g, P)
    assert m.dimension == 9
    X, Y = g.mesh()
    expected = 2 / g.dx**2 + 2 / g.dy**2 + Y**2 + X
    assert np.allclose(m.matrix.diagonal().real, expected, rtol=0, atol=1e-14)
    assert m.hermiticity_defect() == 0.0


def test_h0_entrywise_hermitian_and_sparse():
    g = Grid2D.with_spacing(3, 0.3, Ly=2.5)
    for params in (P, OperatorParams(2.0, 0.5, 0.3), OperatorParams(0.0, 0.0, 1.0)):
        m = build_h0(g, params)
        assert m.hermiticity_defect() == 0.0
        assert np.max(np.diff(m.matrix.indptr)) <= 7
        assert m.bandwidth == g.Ny


def test_laplacian_ground_state():
    L = 1.0
    g = Grid2D(L, L, 79, 79)
    m = build_h0(g, OperatorParams(0.0, 0.0, 1.0))
    lo = sp.linalg.eigsh(m.matrix.real.tocsc(), k=1, sigma=0, which="LM")[0][0]
    exact = math.pi**2 * (2 / (2 * L) ** 2)
    assert lo == pytest.approx(exact, rel=2e-3)


def test_build_h_zero_equals_h0():
    g = Grid2D(3.0, 3.0, 11, 9)
    a, b = build_h0(g, P).matrix, build_h(g, P, zero_potential()).matrix
    assert (a != b).nnz == 0


def test_build_h_peak_diagonal():
    g = Grid2D(3.0, 3.0, 11, 11)  # a node sits at the origin
    spec = PotentialSpec("gaussian", 1.0, 1.0)
    d = build_h(g, P, spec).matrix.diagonal() - build_h0(g, P).matrix.diagonal()
    assert d[g.index(5, 5)].real == pytest.approx(1.0, abs=1e-15)
    assert build_h(g, P, default_bump()).hermiticity_defect() == 0.0


def test_multiplication_examples():
    g = Grid2D(2.0, 2.0, 5, 4)
    one = build_multiplication(g, lambda X, Y: 1.0)
    assert (one.matrix != sp.identity(g.dimension)).nnz == 0
    z = build_multiplication(g, lambda X, Y: eval_dx_potential(zero_potential(), X, Y))
    assert abs(z.matrix).max() == 0
    xm = build_multiplication(g, lambda X, Y: X)
    assert np.array_equal(xm.matrix.diagonal().real, g.mesh()[0])


def test_shift_examples():
    g = Grid2D(3.0, 2.0, 7, 5)
    assert (build_shift(g, 0).matrix != sp.identity(g.dimension)).nnz == 0
    assert build_shift(g, g.Nx - 1).matrix.nnz == g.Ny
    with pytest.raises(GridError):
        build_shift(g, g.Nx)
    u = build_shift(g, 1).matrix
    v = np.arange(g.dimension, dtype=float)
    w = (u @ v).reshape(g.Nx, g.Ny)
    assert np.array_equal(w[:-1], v.reshape(g.Nx, g.Ny)[1:])
    assert np.all(w[-1] == 0)


def _interior_rows(g, steps):
    return np.flatnonzero(g.x_boundary_distance() > abs(steps))


@pytest.mark.parametrize("steps", [1, 2, -1, -3])
def test_shift_commutes_with_x_up_to_tau(steps):
    g = Grid2D(3.0, 2.0, 11, 5)
    u = build_shift(g, steps)
    x = build_multiplication(g, lambda X, Y: X)
    c = commutator(u, x).matrix.toarray()
    tau = steps * g.dx
    rows = _interior_rows(g, steps)
    assert np.max(np.abs(c[rows] - tau * u.matrix.toarray()[rows])) < 1e-14


@pytest.mark.parametrize("params", [P, OperatorParams(1.5, 0.7, 0.4)])
def test_interior_shift_identity_for_h0(params):
    g = Grid2D(3.0, 2.5, 13, 9)
    steps = 2
    u = build_shift(g, steps)
    c = commutator(u, build_h0(g, params)).matrix.toarray()
    tau = steps * g.dx
    rows = _interior_rows(g, steps)
    ref = params.eps * tau * u.matrix.toarray()
    assert np.max(np.abs(c[rows] - ref[rows])) < 1e-12


def test_shift_commutator_with_potential():
    g = Grid2D(3.0, 2.0, 13, 7)
    spec = default_bump()
    u = build_shift(g, 1)
    V = build_multiplication(g, lambda X, Y: eval_potential(spec, X, Y))
    c = commutator(u, V).matrix.toarray()
    X, Y = g.mesh()
    dv = eval_potential(spec, X + g.dx, Y) - eval_potential(spec, X, Y)
    ref = (sp.diags(dv) @ u.matrix).toarray()
    rows = _interior_rows(g, 1)
    assert np.max(np.abs(c[rows] - ref[rows])) < 1e-14


def test_trivial_commutators():
    g = Grid2D(2.0, 2.0, 5, 5)
    h = build_h(g, P, default_bump())
    eye = build_multiplication(g, lambda X, Y: 1.0)
    assert commutator(eye, h).matrix.count_nonzero() == 0
    x = build_multiplication(g, lambda X, Y: X)
    y = build_multiplication(g, lambda X, Y: Y)
    assert commutator(x, y).matrix.nnz == 0
    with pytest.raises(ValueError):
        commutator(h, build_h0(Grid2D(2.0, 2.0, 5, 6), P))


def test_stencil_consistency():
    # H0 applied to exp(i(ax + by)) at a fixed interior point approaches the symbol
    a, b = 0.7, -0.4
    x0, y0 = 0.5, 0.25
    errs = []
    for n in (2, 4, 8):
        d = 0.25 / n
        g = Grid2D.with_spacing(2.0, d)
        X, Y = g.mesh()
        u = np.exp(1j * (a * X + b * Y))
        hu = build_h0(g, P).matrix @ u
        i = np.argmin((X - x0) ** 2 + (Y - y0) ** 2)
        sym = (a - P.B * Y[i]) ** 2 + b**2 + P.eps * X[i]
        errs.append(abs(hu[i] / u[i] - sym))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_spectrum_is_real():
    g = Grid2D(3.0, 3.0, 13, 13)
    m = build_h(g, OperatorParams(1.0, 1.0, 0.7), default_bump()).toarray()
    w = np.linalg.eigvals(m)
    assert np.max(np.abs(w.imag)) <= 1e-10 * np.max(np.abs(w))
