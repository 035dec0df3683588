import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import quad

from crossed_fields_lab.funcalc import (
    DenseLimitError,
    NotHermitianError,
    SmoothingFunction,
    apply_function,
    banded_eigvalsh,
    eigendecompose,
    gaussian_window,
    reflection_parity,
    trace_diff,
    trace_function,
    weighted_trace,
)
from crossed_fields_lab.lattice import (
    DiscreteOperator,
    Grid2D,
    OperatorParams,
    build_h,
    build_h0,
    build_multiplication,
    build_shift,
)
from crossed_fields_lab.potentials import PotentialSpec, eval_dx_potential

GRID = Grid2D(3.0, 2.5, 17, 13)
PARAMS = OperatorParams(1.0, 1.0, 0.8)
EVEN = PotentialSpec("gaussian", 0.7, 0.8, support_radius=2.0)
ODD = PotentialSpec("gaussian", 0.6, 0.7, (0.3, 0.6), support_radius=2.0)


def _dense_oracle(op):
    w, v = np.linalg.eigh(op.toarray())
    return w, v


def _dense_trace(weight, f, op):
    w, v = _dense_oracle(op)
    a = weight.toarray() if sp.issparse(weight) else np.diag(weight)
    return np.trace(v.conj().T @ a @ v @ np.diag(f(w)))


@pytest.mark.parametrize("kind", ["gaussian-window", "bump-window"])
def test_windows_have_unit_mass(kind):
    f = SmoothingFunction(kind, 0.3, 0.4)
    assert quad(f, -10, 10, points=[-0.1, 0.3, 0.7], epsabs=1e-13)[0] == pytest.approx(1.0, abs=1e-10)


def test_bump_vanishes_outside_support():
    f = SmoothingFunction("bump-window", 1.0, 0.5)
    assert f.support == (0.5, 1.5)
    assert np.all(f(np.array([0.5, 0.2, 1.5, 3.0])) == 0.0)
    assert f(1.0) > 0


def test_primitive_is_smoothed_count():
    f = SmoothingFunction("primitive-of-gaussian", 0.0, 0.2)
    assert f(0.0) == pytest.approx(0.5)
    assert f(-3.0) == pytest.approx(1.0) and f(3.0) == pytest.approx(0.0, abs=1e-15)
    g = gaussian_window(0.0, 0.2)
    assert f(0.1) == pytest.approx(quad(g, 0.1, 5)[0], rel=1e-10)


@pytest.mark.parametrize("kind", ["gaussian-window", "bump-window", "primitive-of-gaussian"])
def test_upper_tail_matches_quadrature(kind):
    f = SmoothingFunction(kind, 0.2, 0.5)
    for s in (-1.0, -0.1, 0.2, 0.45, 0.69):
        ref = quad(f, s, 12, points=[0.2, 0.7] if s < 0.2 else None, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        assert f.upper_tail(s) == pytest.approx(ref, abs=1e-10)
    with pytest.raises(ValueError):
        SmoothingFunction("identity").upper_tail(0.0)


def test_window_validation():
    with pytest.raises(ValueError):
        SmoothingFunction("boxcar")
    with pytest.raises(ValueError):
        SmoothingFunction("gaussian-window", 0.0, 0.0)


def test_negligible_above():
    g = gaussian_window(0.0, 0.5)
    assert not g.negligible_above(1.0)
    assert g.negligible_above(5.0)
    assert SmoothingFunction("bump-window", 0.0, 1.0).negligible_above(1.0)
    assert not SmoothingFunction("identity").negligible_above(1e9)


def test_reflection_parity():
    h = build_h(GRID, PARAMS, EVEN).matrix
    assert reflection_parity(h, GRID) == 1
    assert reflection_parity(build_h(GRID, PARAMS, ODD).matrix, GRID) == 0
    y = build_multiplication(GRID, lambda X, Y: Y).matrix
    assert reflection_parity(y, GRID) == -1


@pytest.mark.parametrize("spec", [EVEN, ODD], ids=["symmetric", "asymmetric"])
def test_banded_matches_dense(spec):
    op = build_h(GRID, PARAMS, spec)
    ref = _dense_oracle(op)[0]
    w = banded_eigvalsh(op.matrix, grid=GRID)
    assert np.max(np.abs(w - ref)) <= 1e-10 * np.max(np.abs(ref))
    cut = banded_eigvalsh(op.matrix, upper=2.0, grid=GRID)
    assert np.allclose(cut, ref[ref <= 2.0], atol=1e-10)


def test_eigendecompose_dense_and_partial():
    op = build_h(GRID, PARAMS, EVEN)
    es = eigendecompose(op, solver="dense")
    assert es.complete and es.count == GRID.dimension
    assert np.max(es.residuals()) < 1e-10
    part = eigendecompose(op, upper=1.0, solver="dense")
    assert np.allclose(part.values, es.values[es.values <= 1.0], atol=1e-10)
    assert part.restrict(0.0).count == np.sum(es.values <= 0.0)


def test_eigendecompose_errors():
    op = build_h0(GRID, PARAMS)
    with pytest.raises(DenseLimitError):
        eigendecompose(op, solver="dense", dense_limit=100)
    with pytest.raises(NotHermitianError):
        eigendecompose(build_shift(GRID, 1))
    with pytest.raises(ValueError):
        eigendecompose(op, solver="lanczos")


@pytest.mark.parametrize("spec", [EVEN, ODD], ids=["symmetric", "asymmetric"])
def test_banded_expectations_match_dense(spec):
    op = build_h(GRID, PARAMS, spec)
    dense = eigendecompose(op, upper=3.0, solver="dense")
    band = eigendecompose(op, upper=3.0, solver="banded")
    X, Y = GRID.mesh()
    wdiag = eval_dx_potential(spec, X, Y)
    ref = dense.expectation(wdiag)
    got = band.expectation(wdiag)
    assert np.max(np.abs(got - ref)) < 1e-5 * max(1.0, np.max(np.abs(wdiag)))


@pytest.mark.parametrize("spec", [EVEN, ODD], ids=["symmetric", "asymmetric"])
def test_weighted_trace_routes_agree(spec):
    op = build_h(GRID, PARAMS, spec)
    f = gaussian_window(0.5, 0.4)
    X, Y = GRID.mesh()
    wdiag = eval_dx_potential(spec, X, Y)
    ref = _dense_trace(wdiag, f, op).real
    dense = eigendecompose(op, upper=0.5 + 12 * 0.4, solver="dense")
    band = eigendecompose(op, upper=0.5 + 12 * 0.4, solver="banded")
    assert weighted_trace(wdiag, f, dense) == pytest.approx(ref, abs=1e-12)
    assert weighted_trace(wdiag, f, band) == pytest.approx(ref, abs=1e-8 * max(1, abs(ref)))


def test_weighted_trace_non_hermitian_weight():
    op = build_h(GRID, PARAMS, ODD)
    f = gaussian_window(0.0, 0.5)
    u = build_shift(GRID, 1)
    ref = _dense_trace(u.matrix, f, op)
    es = eigendecompose(op, upper=7.0, solver="banded")
    got = weighted_trace(u, f, es)
    assert abs(got - ref) < 1e-8
    assert abs(weighted_trace(u, f, eigendecompose(op, solver="dense")) - ref) < 1e-12


def test_odd_weight_vanishes_on_symmetric_operator():
    op = build_h(GRID, PARAMS, EVEN)
    f = gaussian_window(0.0, 0.5)
    X, Y = GRID.mesh()
    assert abs(_dense_trace(Y, f, op)) < 1e-12
    es = eigendecompose(op, upper=7.0, solver="banded")
    assert weighted_trace(Y, f, es) == 0.0
    assert np.all(es.expectation(Y) == 0.0)


def test_trace_identity_and_partial_window_check():
    op = build_h(GRID, PARAMS, EVEN)
    es = eigendecompose(op, solver="dense")
    ident = SmoothingFunction("identity")
    assert trace_function(ident, es) == pytest.approx(np.trace(op.toarray()).real, rel=1e-12)
    part = eigendecompose(op, upper=0.0, solver="dense")
    with pytest.raises(ValueError):
        trace_function(gaussian_window(0.0, 0.5), part)


def test_apply_function():
    op = build_h(GRID, PARAMS, EVEN)
    es = eigendecompose(op, solver="dense")
    a = apply_function(es, SmoothingFunction("identity")).toarray()
    assert np.max(np.abs(a - op.toarray())) < 1e-10
    fm = apply_function(es, gaussian_window(0.0, 1.0)).toarray()
    ref = sla.expm(-0.5 * op.toarray() @ op.toarray()) / math.sqrt(2 * math.pi)
    assert np.max(np.abs(fm - ref)) < 1e-10
    with pytest.raises(ValueError):
        apply_function(eigendecompose(op, solver="banded"), gaussian_window(0.0, 1.0))


def test_trace_diff_examples():
    f = gaussian_window(0.0, 0.5)
    es0 = eigendecompose(build_h0(GRID, PARAMS), solver="dense")
    assert trace_diff(f, es0, es0) == 0.0
    other = eigendecompose(build_h0(Grid2D(3.0, 2.5, 17, 11), PARAMS), solver="dense")
    with pytest.raises(ValueError):
        trace_diff(f, es0, other)


def test_two_by_two_oracle():
    # hand-built operator with known spectrum {1, 3}
    g = Grid2D(1.0, 1.0, 3, 3)
    m = np.zeros((9, 9))
    m[np.arange(9), np.arange(9)] = 5.0
    m[:2, :2] = [[2.0, 1.0], [1.0, 2.0]]
    op = DiscreteOperator(sp.csr_matrix(m), g, PARAMS, "H")
    es = eigendecompose(op, solver="dense")
    f = gaussian_window(1.0, 1.0)
    expected = f(1.0) + f(3.0) + 7 * f(5.0)
    assert trace_function(f, es) == pytest.approx(expected, rel=1e-14)
    w = np.zeros(9)
    w[0] = 1.0
    # <e0|v>^2 = 1/2 for both eigenvectors of the 2x2 block
    assert weighted_trace(w, f, es) == pytest.approx(0.5 * (f(1.0) + f(3.0)), rel=1e-13)
