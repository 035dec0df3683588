"""Phase-space functionals of the symbol p2 = (zeta - y)^2 + eta^2 + x + V(x, y).

The (zeta, eta) fiber is integrated analytically: the disc {(zeta - y)^2 +
eta^2 <= s} has area pi s, so every functional reduces to a 2D integral over
(x, y). Integrands carrying (lambda - x - V)_+ or the indicator of
{x + V <= tau} are integrated line by line in x, with the crossings of the
level set located by root bracketing and used as panel breakpoints, then
adaptively in y.

Also provided: the Tauberian kernels theta and their scaled transforms
theta_breve_h(tau) = (2 pi h)^(-1) int exp(i tau t / h) theta(t) dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_trapezoid, quad, trapezoid
from scipy.optimize import brentq

from .funcalc import SmoothingFunction
from .potentials import (
    PotentialSpec,
    eval_dx_potential,
    eval_dy_potential,
    eval_potential,
)

PANEL_WIDTH = 0.05
PANEL_NODES = 8
QUAD_LIMIT = 500
NONDEGENERACY_MARGIN = 0.1
DEFAULT_C0 = 0.5

_GL_X, _GL_W = leggauss(PANEL_NODES)


class QuadratureError(RuntimeError):
    """Tolerance not reached; carries the best estimate and its error bound."""

    def __init__(self, message: str, estimate: float, bound: float):
        super().__init__(f"{message} (estimate {estimate!r}, error bound {bound!r})")
        self.estimate = estimate
        self.bound = bound


class NondegeneracyError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolContext:
    """Potential, optional weight psi(x, y) in [0, 1], and the quadrature box.

    ``weight=None`` means psi = 1 on ``box``. ``box=None`` means the support
    box of the potential, which is then required to contain supp psi.
    """

    potential: PotentialSpec
    weight: Callable | None = None
    box: tuple[float, float, float, float] | None = None
    tol_factor: float = 1e-8
    limit: int = QUAD_LIMIT

    def __post_init__(self):
        if self.box is not None:
            xa, xb, ya, yb = self.box
            if xb < xa or yb < ya:
                raise ValueError("box must be (xmin, xmax, ymin, ymax) with min <= max")

    @property
    def quad_box(self) -> tuple[float, float, float, float]:
        if self.box is not None:
            return tuple(float(b) for b in self.box)
        return tuple(float(b) for b in self.potential.support_box())

    def psi(self, x, y):
        if self.weight is None:
            return np.ones(np.broadcast(x, y).shape)
        return np.asarray(self.weight(x, y), dtype=float)

    def level(self, x, y):
        """x + V(x, y)."""
        return x + np.asarray(eval_potential(self.potential, x, y))


# -- line-by-line quadrature ---------------------------------------------------


def _level_roots(ctx: SymbolContext, tau: float, y: float, xs: np.ndarray, g: np.ndarray) -> list[float]:
    roots = []
    for i in np.flatnonzero(g[:-1] * g[1:] < 0):
        roots.append(brentq(lambda x: tau - x - eval_potential(ctx.potential, x, y), xs[i], xs[i + 1], xtol=1e-14))
    return roots


def _line(ctx: SymbolContext, weight, y: float, tau: float | None, power: int, xa: float, xb: float) -> float:
    """int_xa^xb weight(x, y) * (tau - x - V)_+^power dx; tau=None drops the level factor."""
    if xb <= xa:
        return 0.0
    m = max(1, int(math.ceil((xb - xa) / PANEL_WIDTH)))
    xs = np.linspace(xa, xb, m + 1)
    if tau is not None:
        g = tau - ctx.level(xs, y)
        if np.all(g <= 0):
            return 0.0
        edges = np.sort(np.concatenate([xs, _level_roots(ctx, tau, y, xs, g)]))
    else:
        edges = xs
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    keep = half > 0
    if tau is not None:
        keep &= tau - ctx.level(mid, y) > 0
    mid, half = mid[keep], half[keep]
    if mid.size == 0:
        return 0.0
    X = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = weight(X, y)
    if tau is not None and power:
        vals = vals * np.maximum(tau - ctx.level(X, y), 0.0) ** power
    return float(np.sum(half[:, None] * _GL_W[None, :] * vals))


def _area_integral(ctx: SymbolContext, weight, tau: float | None, power: int, tol: float, what: str) -> float:
    xa, xb, ya, yb = ctx.quad_box
    if xb <= xa or yb <= ya:
        return 0.0
    val, err = quad(
        lambda y: _line(ctx, weight, y, tau, power, xa, xb),
        ya,
        yb,
        epsabs=tol,
        epsrel=0.0,
        limit=ctx.limit,
    )
    if not err <= tol:
        raise QuadratureError(f"{what}: tolerance {tol:g} not reached", val, err)
    return val


# -- functionals ---------------------------------------------------------------


def _dxv_weight(ctx):
    return lambda X, y: np.asarray(eval_dx_potential(ctx.potential, X, y))


def _psi_weight(ctx):
    return lambda X, y: ctx.psi(X, y)


def c0(lam: float, ctx: SymbolContext) -> float:
    """c0(lambda) = -pi int dV/dx (lambda - x - V)_+ dx dy, to absolute tolerance tol_factor*(1+|lambda|)."""
    if ctx.potential.kind in ("zero", "y-bump"):
        return 0.0
    tol = ctx.tol_factor * (1.0 + abs(lam))
    return -math.pi * _area_integral(ctx, _dxv_weight(ctx), float(lam), 1, tol / math.pi, "c0")


def c0_derivative(lam: float, ctx: SymbolContext) -> float:
    """d c0 / d lambda = -pi int dV/dx 1[x + V <= lambda] dx dy."""
    if ctx.potential.kind in ("zero", "y-bump"):
        return 0.0
    tol = ctx.tol_factor * (1.0 + abs(lam))
    return -math.pi * _area_integral(ctx, _dxv_weight(ctx), float(lam), 0, tol / math.pi, "c0'")


def gamma0(tau: float, ctx: SymbolContext, check: bool = True) -> float:
    """gamma0(tau) = pi int psi 1[x + V <= tau] dx dy, the fiber-reduced level density."""
    if check:
        rep = check_nondegeneracy(tau, ctx)
        if not rep.ok:
            raise NondegeneracyError(f"degenerate level set at tau={tau}: min |grad(x+V)| = {rep.min_grad:.3g}")
    tol = ctx.tol_factor * (1.0 + abs(tau))
    return math.pi * _area_integral(ctx, _psi_weight(ctx), float(tau), 0, tol / math.pi, "gamma0")


def phase_volume(tau: float, ctx: SymbolContext) -> float:
    """int psi over {p2 <= tau} in (x, y, zeta, eta) = pi int psi (tau - x - V)_+ dx dy."""
    tol = ctx.tol_factor * (1.0 + abs(tau))
    return math.pi * _area_integral(ctx, _psi_weight(ctx), float(tau), 1, tol / math.pi, "volume")


def upper_tail(f: SmoothingFunction, u):
    """T_f(u) = int_u^infinity f(t) dt."""
    if f.kind == "identity":
        raise ValueError("a0 needs a window that vanishes at +infinity")
    return f.upper_tail(u)


def a0(f: SmoothingFunction, ctx: SymbolContext) -> float:
    """(2 pi)^(-2) int psi f(p2) over phase space.

    The fiber integral is int_0^inf f(r^2 + x + V) 2 pi r dr = pi T_f(x + V).
    """
    upper_tail(f, 0.0)  # rejects windows that do not vanish at +infinity
    weight = lambda X, y: ctx.psi(X, y) * upper_tail(f, ctx.level(X, y))  # noqa: E731
    tol = ctx.tol_factor * 4 * math.pi
    return _area_integral(ctx, weight, None, 0, tol, "a0") * math.pi / (2 * math.pi) ** 2


class NondegeneracyReport(NamedTuple):
    ok: bool
    min_grad: float
    argmin: tuple[float, float] | None


def check_nondegeneracy(lam: float, ctx: SymbolContext, margin: float = NONDEGENERACY_MARGIN, samples: int = 801) -> NondegeneracyReport:
    """Sample |grad(x + V)| near the level set {x + V = lambda} inside the quadrature box.

    Outside the box V vanishes and the gradient is (1, 0), so the minimum is
    taken together with 1.
    """
    xa, xb, ya, yb = ctx.quad_box
    if xb <= xa or yb <= ya or ctx.potential.kind == "zero":
        return NondegeneracyReport(1.0 >= margin, 1.0, None)
    xs = np.linspace(xa, xb, samples)
    ys = np.linspace(ya, yb, samples)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    gx = 1.0 + np.asarray(eval_dx_potential(ctx.potential, X, Y))
    gy = np.asarray(eval_dy_potential(ctx.potential, X, Y))
    G = np.hypot(gx, gy)
    # every level-set point lies within half a diagonal cell of a sample
    band = 0.5 * math.hypot(xs[1] - xs[0], ys[1] - ys[0]) * float(G.max())
    near = np.abs(ctx.level(X, Y) - lam) <= band
    if not near.any():
        return NondegeneracyReport(1.0 >= margin, 1.0, None)
    i = np.argmin(np.where(near, G, np.inf))
    i = np.unravel_index(i, G.shape)
    mg = float(G[i])
    if mg >= 1.0:
        return NondegeneracyReport(1.0 >= margin, 1.0, None)
    return NondegeneracyReport(mg >= margin, mg, (float(X[i]), float(Y[i])))


def predict_ssf_increment(lam1: float, lam2: float, h: float, ctx: SymbolContext, margin: float = NONDEGENERACY_MARGIN) -> float:
    """Leading Weyl term (2 pi h)^(-2) (c0(lambda2) - c0(lambda1))."""
    for lam in (lam1, lam2):
        rep = check_nondegeneracy(lam, ctx, margin)
        if not rep.ok:
            raise NondegeneracyError(
                f"degenerate level set at lambda={lam}: min |grad(x+V)| = {rep.min_grad:.3g} at {rep.argmin}"
            )
    if lam1 == lam2:
        return 0.0
    return (c0(lam2, ctx) - c0(lam1, ctx)) / (2 * math.pi * h) ** 2


# -- Tauberian kernels -------------------------------------------------------------

KERNEL_KINDS = ("autocorrelation", "flat-top")


def _bump(s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - ss * ss)), 0.0)


def _smooth_step(t):
    from .potentials import smooth_step

    return smooth_step(t)


@dataclass(frozen=True)
class TauberianKernel:
    """theta in C_0^infinity(]-1/C0, 1/C0[) and samples of theta_breve_h.

    ``autocorrelation``: theta = phi * phi~ with phi a bump on [-1/(2 C0),
    1/(2 C0)] normalized so that theta(0) = int phi^2 = 1; then
    theta_breve_h(tau) = |phi_hat(tau/h)|^2 / (2 pi h) >= 0.
    ``flat-top``: theta = 1 on [-1/(2 C0), 1/(2 C0)], smoothly decaying to 0
    at |t| = 1/C0.
    """

    construction: str
    C0: float
    h: float
    t: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)

    @property
    def half_width(self) -> float:
        return 1.0 / self.C0

    @property
    def certificate(self) -> float:
        """min theta_breve / max theta_breve over the samples (>= 0 for autocorrelation)."""
        return float(self.values.min() / self.values.max())

    def theta(self, t):
        """theta(t) by quadrature (autocorrelation) or closed form (flat-top)."""
        t = np.asarray(t, dtype=float)
        if self.construction == "flat-top":
            return _flat_top(t, self.C0)
        a = 0.5 / self.C0
        s, w = leggauss(200)
        flat = np.abs(t).ravel()
        res = np.empty(flat.size)
        for i, tt in enumerate(flat):
            if tt >= 2 * a:
                res[i] = 0.0
                continue
            lo, hi = tt - a, a
            x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * s
            res[i] = 0.5 * (hi - lo) * np.sum(w * self._phi(x) * self._phi(x - tt))
        out = res.reshape(t.shape)
        return float(out) if out.ndim == 0 else out

    def _phi(self, x):
        a = 0.5 / self.C0
        return _bump(x / a) * self.profile[0]

    def theta_integral(self) -> float:
        """int theta(t) dt over its support [-1/C0, 1/C0]."""
        return float(np.sum(self.weights / self.C0 * self.theta(self.nodes / self.C0)))

    def theta_breve(self, tau):
        """theta_breve_h(tau) evaluated from its definition."""
        tau = np.asarray(tau, dtype=float)
        u = tau.ravel() / self.h
        if self.construction == "autocorrelation":
            a = 0.5 / self.C0
            s, w = self.nodes, self.weights
            # phi_hat(u) = int phi(t) cos(u t) dt on phi's support
            x = a * s
            ph = np.cos(np.outer(u, x)) @ (a * w * self._phi(x))
            out = ph * ph / (2 * math.pi * self.h)
        else:
            tt = self.nodes / self.C0
            out = np.cos(np.outer(u, tt)) @ (self.weights / self.C0 * _flat_top(tt, self.C0)) / (2 * math.pi * self.h)
        out = out.reshape(tau.shape)
        return float(out) if out.ndim == 0 else out

    def mass(self) -> float:
        """Trapezoid integral of the samples (should equal theta(0) = 1)."""
        return float(trapezoid(self.values, self.t))

    def cumulative(self, d):
        """int_{-inf}^{d} theta_breve_h from the samples."""
        c = cumulative_trapezoid(self.values, self.t, initial=0.0)
        return np.interp(d, self.t, c, left=0.0, right=c[-1])


def _flat_top(t, C0):
    t = np.abs(np.asarray(t, dtype=float))
    half = 0.5 / C0
    return _smooth_step((1.0 / C0 - t) / half)


def tauberian_kernel(construction: str = "autocorrelation", C0: float = DEFAULT_C0, h: float = 1.0, nodes: int = 512, u_max: float | None = None, du: float | None = None) -> TauberianKernel:
    """Build theta and sample theta_breve_h on tau = h u, |u| <= u_max."""
    if construction not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel construction {construction!r}")
    if not (C0 > 0 and h > 0):
        raise ValueError("C0 and h must be positive")
    s, w = leggauss(nodes)
    a = 0.5 / C0
    if construction == "autocorrelation":
        # nodes on [-1, 1] map to phi's support [-a, a]; normalize int phi^2 = 1
        norm = 1.0 / math.sqrt(a * np.sum(w * _bump(s) ** 2))
        profile = np.array([norm])
    else:
        profile = np.array([1.0])
    u_max = 400.0 * C0 if u_max is None else u_max
    du = 0.02 * min(1.0, C0 / 0.5) if du is None else du
    n = int(math.ceil(u_max / du))
    u = du * np.arange(-n, n + 1)
    k = TauberianKernel(construction, float(C0), float(h), h * u, np.empty(0), s, w, profile)
    values = np.asarray(k.theta_breve(h * u))
    return TauberianKernel(construction, float(C0), float(h), h * u, values, s, w, profile)


def step_approximation_error(k: TauberianKernel, d: float) -> float:
    """|int_{-inf}^{lambda} theta_breve_h(lambda' - mu) dlambda' - 1(mu < lambda)| with d = lambda - mu."""
    return float(abs(k.cumulative(d) - (1.0 if d > 0 else 0.0)))
