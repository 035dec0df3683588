"""Analytic test potentials V(x, y) and their first derivatives.

Every kind is given in closed form so that the x-derivative is exact and the
decay hypothesis |V| <= C (1+|x|)^(-2-delta) (1+|y|)^(-1-delta) can be
checked on samples. Compact kinds vanish identically (exact zero) outside
their support radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

KINDS = ("zero", "gaussian", "sum-of-bumps", "compact-polynomial", "y-bump")


@dataclass(frozen=True)
class PotentialSpec:
    """Closed-form model of a perturbing potential.

    Parameters
    ----------
    kind : str
        One of ``zero``, ``gaussian``, ``sum-of-bumps``,
        ``compact-polynomial`` or ``y-bump``.
    amplitude, width : float
        Peak value A and length scale w.
    center : tuple of float
        Bump center (x0, y0).
    decay_c, decay_delta : float
        Declared constants of the decay bound. They are metadata, checked by
        :func:`validate_decay`, never inferred.
    support_radius : float or None
        Radius R outside which the potential is exactly zero. ``None`` means
        unbounded support (plain Gaussian). For ``y-bump`` the radius applies
        to |y - y0| only.
    components : tuple of PotentialSpec
        Summands of a ``sum-of-bumps`` potential.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    width: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    decay_c: float = 1.0
    decay_delta: float = 0.5
    support_radius: float | None = None
    components: tuple["PotentialSpec", ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.decay_c <= 0 or self.decay_delta <= 0:
            raise ValueError("decay constants C and delta must be positive")
        if self.support_radius is not None and self.support_radius <= 0:
            raise ValueError("support_radius must be positive")
        if self.kind == "compact-polynomial" and self.support_radius is None:
            raise ValueError("compact-polynomial needs a support_radius")
        if self.kind == "sum-of-bumps":
            if not self.components:
                raise ValueError("sum-of-bumps needs at least one component")
            for c in self.components:
                if c.kind == "sum-of-bumps":
                    raise ValueError("nested sum-of-bumps is not supported")

    @property
    def is_compact(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "sum-of-bumps":
            return all(c.is_compact for c in self.components)
        if self.kind == "y-bump":
            return False
        return self.support_radius is not None

    def support_box(self) -> tuple[float, float, float, float]:
        """Bounding box (xmin, xmax, ymin, ymax) of the numerically relevant support.

        Unbounded Gaussians are cut where exp(-r^2/w^2) drops below 1e-17.
        """
        if self.kind == "zero":
            return (0.0, 0.0, 0.0, 0.0)
        if self.kind == "sum-of-bumps":
            boxes = np.array([c.support_box() for c in self.components])
            return (boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max())
        r = self.support_radius
        if r is None:
            r = self.width * math.sqrt(17 * math.log(10))
        x0, y0 = self.center
        return (x0 - r, x0 + r, y0 - r, y0 + r)


def zero_potential() -> PotentialSpec:
    return PotentialSpec(kind="zero")


def default_bump(amplitude: float = 0.5, width: float = 1.0, radius: float = 6.0) -> PotentialSpec:
    """Smoothly truncated Gaussian used throughout the verification suite."""
    return PotentialSpec(
        kind="gaussian",
        amplitude=amplitude,
        width=width,
        decay_c=10.0,
        decay_delta=0.5,
        support_radius=radius,
    )


# -- smooth cutoff -----------------------------------------------------------


def _e(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    out = np.zeros_like(t)
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _de(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    out = np.zeros_like(t)
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    a, b = _e(t), _e(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def smooth_step_derivative(t):
    t = np.asarray(t, dtype=float)
    a, b = _e(t), _e(1.0 - t)
    da, db = _de(t), _de(1.0 - t)
    return (da * b + a * db) / (a + b) ** 2


def _cutoff(r, outer, width):
    """Return (chi(r), chi'(r)); chi = 1 for r <= outer - ramp, exactly 0 for r >= outer."""
    ramp = min(width, 0.5 * outer)
    t = (outer - r) / ramp
    return smooth_step(t), -smooth_step_derivative(t) / ramp


# -- evaluation --------------------------------------------------------------


def _gaussian(spec: PotentialSpec, x, y):
    x0, y0 = spec.center
    dx, dy = x - x0, y - y0
    w2 = spec.width**2
    g = spec.amplitude * np.exp(-(dx * dx + dy * dy) / w2)
    gx = -2.0 * dx / w2 * g
    gy = -2.0 * dy / w2 * g
    if spec.support_radius is None:
        return g, gx, gy
    r = np.hypot(dx, dy)
    chi, dchi = _cutoff(r, spec.support_radius, spec.width)
    safe = np.where(r > 0, r, 1.0)
    drdx = np.where(r > 0, dx / safe, 0.0)
    drdy = np.where(r > 0, dy / safe, 0.0)
    return g * chi, gx * chi + g * dchi * drdx, gy * chi + g * dchi * drdy


def _polynomial(spec: PotentialSpec, x, y):
    x0, y0 = spec.center
    dx, dy = x - x0, y - y0
    R2 = spec.support_radius**2
    s = 1.0 - (dx * dx + dy * dy) / R2
    inside = s > 0
    s = np.where(inside, s, 0.0)
    v = spec.amplitude * s**4
    vx = spec.amplitude * 4.0 * s**3 * (-2.0 * dx / R2)
    vy = spec.amplitude * 4.0 * s**3 * (-2.0 * dy / R2)
    return np.where(inside, v, 0.0), np.where(inside, vx, 0.0), np.where(inside, vy, 0.0)


def _ybump(spec: PotentialSpec, x, y):
    dy = y - spec.center[1]
    g = spec.amplitude * np.exp(-dy * dy / spec.width**2)
    gy = -2.0 * dy / spec.width**2 * g
    if spec.support_radius is not None:
        chi, dchi = _cutoff(np.abs(dy), spec.support_radius, spec.width)
        gy = gy * chi + g * dchi * np.sign(dy)
        g = g * chi
    zero = np.zeros_like(g + 0.0 * x)
    return g + zero, zero, gy + zero


def _evaluate(spec: PotentialSpec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "zero":
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy(), z.copy()
    if spec.kind == "gaussian":
        return _gaussian(spec, x, y)
    if spec.kind == "compact-polynomial":
        return _polynomial(spec, x, y)
    if spec.kind == "y-bump":
        return _ybump(spec, x, y)
    v = np.zeros(np.broadcast(x, y).shape)
    vx = np.zeros_like(v)
    vy = np.zeros_like(v)
    for c in spec.components:
        a, b, d = _evaluate(c, x, y)
        v, vx, vy = v + a, vx + b, vy + d
    return v, vx, vy


def _as_output(a):
    return float(a) if np.ndim(a) == 0 else a


def eval_potential(spec: PotentialSpec, x, y):
    """V(x, y); accepts scalars or broadcastable arrays."""
    return _as_output(_evaluate(spec, x, y)[0])


def eval_dx_potential(spec: PotentialSpec, x, y):
    """Analytic partial derivative dV/dx."""
    return _as_output(_evaluate(spec, x, y)[1])


def eval_dy_potential(spec: PotentialSpec, x, y):
    """Analytic partial derivative dV/dy."""
    return _as_output(_evaluate(spec, x, y)[2])


def dx_sup_norm(spec: PotentialSpec, samples: int = 801) -> float:
    """Sup norm of dV/dx, from a dense sample of the support box refined by a local search."""
    if spec.kind in ("zero", "y-bump"):
        return 0.0
    from scipy.optimize import minimize

    xmin, xmax, ymin, ymax = spec.support_box()
    xs = np.linspace(xmin, xmax, samples)
    ys = np.linspace(ymin, ymax, samples)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    G = np.abs(eval_dx_potential(spec, X, Y))
    i = np.unravel_index(np.argmax(G), G.shape)
    res = minimize(
        lambda p: -abs(eval_dx_potential(spec, p[0], p[1])),
        x0=[X[i], Y[i]],
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14},
    )
    return float(max(G[i], -res.fun))


class DecayReport(NamedTuple):
    ok: bool
    worst_ratio: float
    worst_point: tuple[float, float]


def decay_ratio(spec: PotentialSpec, x, y):
    """|V| (1+|x|)^(2+delta) (1+|y|)^(1+delta) / C, pointwise."""
    d = spec.decay_delta
    v = np.abs(np.asarray(eval_potential(spec, x, y)))
    return v * (1 + np.abs(x)) ** (2 + d) * (1 + np.abs(y)) ** (1 + d) / spec.decay_c


def validate_decay(spec: PotentialSpec, sample_count: int, box) -> DecayReport:
    """Check the declared decay constants on a tensor grid of about `sample_count` points.

    `box` is (xmin, xmax, ymin, ymax); a single number b means [-b, b]^2.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if np.isscalar(box):
        box = (-box, box, -box, box)
    xmin, xmax, ymin, ymax = box
    m = max(1, int(math.ceil(math.sqrt(sample_count))))
    xs = np.linspace(xmin, xmax, m) if m > 1 else np.array([0.5 * (xmin + xmax)])
    ys = np.linspace(ymin, ymax, m) if m > 1 else np.array([0.5 * (ymin + ymax)])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    R = decay_ratio(spec, X, Y)
    i = np.unravel_index(np.argmax(R), R.shape)
    worst = float(R[i])
    return DecayReport(worst <= 1.0, worst, (float(X[i]), float(Y[i])))
