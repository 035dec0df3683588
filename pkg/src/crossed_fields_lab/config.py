"""INI experiment configuration.

Sections::

    [potential]  kind, amplitude, width, center, support_radius, decay_c, decay_delta
    [operator]   B, eps, h            (h may be a comma-separated list)
    [grid]       L, spacing           (L may be a list; Nx, Ny may replace spacing)
    [query]      energies and per-subcommand settings, see ``QueryConfig``
    [output]     directory, formats   (formats: any of csv, json, png)

A ``sum-of-bumps`` potential lists its summands in sections
``[potential.1]``, ``[potential.2]``, ... with the same keys.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Grid2D, OperatorParams
from .potentials import KINDS, PotentialSpec

FORMATS = ("csv", "json", "png")
SECTIONS = ("potential", "operator", "grid", "query", "output")
REQUIRED = {
    "verify-trace": ("potential", "operator", "grid", "query"),
    "semiclassical": ("potential", "operator", "grid", "query"),
    "scan": ("potential", "operator", "grid"),
    "curves": ("potential",),
}


class ConfigError(ValueError):
    pass


def _number(section: str, key: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: {raw!r} is not a number") from None
    if not math.isfinite(v):
        raise ConfigError(f"[{section}] {key}: {raw!r} is not finite")
    return v


def _numbers(section: str, key: str, raw: str) -> tuple[float, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"[{section}] {key}: empty list")
    return tuple(_number(section, key, s) for s in items)


class _Section:
    """Typed access to one INI section with unknown-key detection."""

    def __init__(self, parser: configparser.ConfigParser, name: str, known: tuple[str, ...]):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        unknown = sorted(set(self.data) - set(known))
        if unknown:
            raise ConfigError(f"[{name}] unknown key(s): {', '.join(unknown)}")

    def has(self, key: str) -> bool:
        return key in self.data

    def num(self, key: str, default=None) -> float:
        if key not in self.data:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        return _number(self.name, key, self.data[key])

    def nums(self, key: str, default=None) -> tuple[float, ...]:
        if key not in self.data:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return tuple(default)
        return _numbers(self.name, key, self.data[key])

    def text(self, key: str, default=None) -> str:
        if key not in self.data:
            if default is None:
                raise ConfigError(f"[{self.name}] missing key {key!r}")
            return default
        return self.data[key].strip()


@dataclass(frozen=True)
class GridConfig:
    L: tuple[float, ...]
    spacing: float | None = None
    Nx: int | None = None
    Ny: int | None = None

    def grid(self, L: float) -> Grid2D:
        if self.spacing is not None:
            return Grid2D.with_spacing(L, self.spacing)
        return Grid2D(float(L), float(L), int(self.Nx), int(self.Ny))


@dataclass(frozen=True)
class QueryConfig:
    """Energies and per-subcommand settings (defaults in brackets).

    verify-trace: lambda_min [-2], lambda_max [2], lambda_step [0.25], sigma [0.5], tolerance [0.05]
    semiclassical: lambda1 [-4], lambda2 [1], weyl_sigma [0.1], ratio_low [0.85], ratio_high [1.15]
    scan: window [-3, 3], loc_threshold [0.05]
    curves: c0_range [-5, 10, 0.25], gamma0_range [-3, 3, 0.25], kernel [autocorrelation], C0 [0.5], kernel_h [1]
    any: solver [auto], guard [on]
    """

    lambdas: tuple[float, ...] = tuple(np.round(np.arange(-2.0, 2.0 + 1e-9, 0.25), 12))
    sigma: float = 0.5
    tolerance: float = 0.05
    lambda1: float = -4.0
    lambda2: float = 1.0
    weyl_sigma: float = 0.1
    ratio_low: float = 0.85
    ratio_high: float = 1.15
    window: tuple[float, float] = (-3.0, 3.0)
    loc_threshold: float = 0.05
    c0_range: tuple[float, float, float] = (-5.0, 10.0, 0.25)
    gamma0_range: tuple[float, float, float] = (-3.0, 3.0, 0.25)
    kernel: str = "autocorrelation"
    C0: float = 0.5
    kernel_h: float = 1.0
    solver: str = "auto"
    guard: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    potential: PotentialSpec
    B: float = 1.0
    eps: float = 1.0
    h: tuple[float, ...] = (1.0,)
    grid: GridConfig | None = None
    query: QueryConfig = field(default_factory=QueryConfig)
    directory: str = "out"
    formats: tuple[str, ...] = FORMATS
    present: tuple[str, ...] = ()
    source: str = ""

    def params(self, h: float | None = None) -> OperatorParams:
        return OperatorParams(self.B, self.eps, self.h[0] if h is None else h)

    def require(self, command: str):
        missing = [s for s in REQUIRED[command] if s not in self.present]
        if missing:
            raise ConfigError(f"{command} needs the [{'], ['.join(missing)}] block(s); missing from {self.source}")


_POT_KEYS = ("kind", "amplitude", "width", "center", "support_radius", "decay_c", "decay_delta")


def _potential(parser, name="potential") -> PotentialSpec:
    s = _Section(parser, name, _POT_KEYS)
    kind = s.text("kind", "zero")
    if kind not in KINDS:
        raise ConfigError(f"[{name}] kind: {kind!r} is not one of {', '.join(KINDS)}")
    comps = ()
    if kind == "sum-of-bumps":
        names = sorted(
            (n for n in parser.sections() if n.startswith(name + ".")), key=lambda n: int(n.split(".")[-1])
        )
        if not names:
            raise ConfigError(f"[{name}] sum-of-bumps needs [{name}.1], [{name}.2], ... sections")
        comps = tuple(_potential(parser, n) for n in names)
    center = s.nums("center", (0.0, 0.0))
    if len(center) != 2:
        raise ConfigError(f"[{name}] center needs two numbers")
    radius = None
    if s.has("support_radius") and s.text("support_radius").lower() != "none":
        radius = s.num("support_radius")
    try:
        return PotentialSpec(
            kind=kind,
            amplitude=s.num("amplitude", 0.0),
            width=s.num("width", 1.0),
            center=(center[0], center[1]),
            decay_c=s.num("decay_c", 1.0),
            decay_delta=s.num("decay_delta", 0.5),
            support_radius=radius,
            components=comps,
        )
    except ValueError as e:
        raise ConfigError(f"[{name}] {e}") from None


def _triple(s: _Section, key: str, default) -> tuple[float, float, float]:
    v = s.nums(key, default)
    if len(v) != 3 or v[2] <= 0 or v[1] < v[0]:
        raise ConfigError(f"[{s.name}] {key} needs 'start, stop, step' with stop >= start and step > 0")
    return v


def _bool(s: _Section, key: str, default: bool) -> bool:
    if not s.has(key):
        return default
    t = s.text(key).lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"[{s.name}] {key}: {t!r} is not a boolean")


_QUERY_KEYS = (
    "lambdas", "lambda_min", "lambda_max", "lambda_step", "sigma", "tolerance", "lambda1", "lambda2",
    "weyl_sigma", "ratio_low", "ratio_high", "window", "loc_threshold", "c0_range", "gamma0_range",
    "kernel", "c0", "kernel_h", "solver", "guard",
)


def _query(parser) -> QueryConfig:
    s = _Section(parser, "query", _QUERY_KEYS)
    d = QueryConfig()
    if s.has("lambdas"):
        lambdas = s.nums("lambdas")
    elif any(s.has(k) for k in ("lambda_min", "lambda_max", "lambda_step")):
        a, b, st = s.num("lambda_min", -2.0), s.num("lambda_max", 2.0), s.num("lambda_step", 0.25)
        if st <= 0 or b < a:
            raise ConfigError("[query] lambda grid needs lambda_max >= lambda_min and lambda_step > 0")
        n = int(math.floor((b - a) / st + 1e-9))
        lambdas = tuple(float(np.round(a + i * st, 12)) for i in range(n + 1))
    else:
        lambdas = d.lambdas
    if np.any(np.diff(lambdas) <= 0):
        raise ConfigError("[query] lambdas must be strictly ascending")
    window = s.nums("window", d.window)
    if len(window) != 2 or window[1] < window[0]:
        raise ConfigError("[query] window needs 'lo, hi' with hi >= lo")
    solver = s.text("solver", d.solver)
    if solver not in ("auto", "dense", "banded"):
        raise ConfigError(f"[query] solver: {solver!r} is not auto, dense or banded")
    kernel = s.text("kernel", d.kernel)
    if kernel not in ("autocorrelation", "flat-top"):
        raise ConfigError(f"[query] kernel: {kernel!r} is not autocorrelation or flat-top")
    q = QueryConfig(
        lambdas=tuple(lambdas),
        sigma=s.num("sigma", d.sigma),
        tolerance=s.num("tolerance", d.tolerance),
        lambda1=s.num("lambda1", d.lambda1),
        lambda2=s.num("lambda2", d.lambda2),
        weyl_sigma=s.num("weyl_sigma", d.weyl_sigma),
        ratio_low=s.num("ratio_low", d.ratio_low),
        ratio_high=s.num("ratio_high", d.ratio_high),
        window=(window[0], window[1]),
        loc_threshold=s.num("loc_threshold", d.loc_threshold),
        c0_range=_triple(s, "c0_range", d.c0_range),
        gamma0_range=_triple(s, "gamma0_range", d.gamma0_range),
        kernel=kernel,
        C0=s.num("c0", d.C0),
        kernel_h=s.num("kernel_h", d.kernel_h),
        solver=solver,
        guard=_bool(s, "guard", d.guard),
    )
    for key in ("sigma", "weyl_sigma", "C0", "kernel_h", "tolerance"):
        if not getattr(q, key) > 0:
            raise ConfigError(f"[query] {key.lower()} must be positive")
    return q


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    extra = [n for n in parser.sections() if n.split(".")[0] not in SECTIONS]
    if extra:
        raise ConfigError(f"unknown block(s): [{'], ['.join(extra)}]")
    present = tuple(n for n in SECTIONS if parser.has_section(n))

    pot = _potential(parser)

    op = _Section(parser, "operator", ("b", "eps", "h"))
    B, eps = op.num("b", 1.0), op.num("eps", 1.0)
    hs = op.nums("h", (1.0,))
    if any(not 0 < h <= 1 for h in hs):
        raise ConfigError("[operator] h values must lie in (0, 1]")
    if B < 0 or eps < 0:
        raise ConfigError("[operator] B and eps must be nonnegative")

    grid = None
    if parser.has_section("grid"):
        g = _Section(parser, "grid", ("l", "spacing", "nx", "ny"))
        Ls = g.nums("l")
        if any(L <= 0 for L in Ls):
            raise ConfigError("[grid] L values must be positive")
        if g.has("spacing") and (g.has("nx") or g.has("ny")):
            raise ConfigError("[grid] give either spacing or Nx/Ny, not both")
        if g.has("spacing"):
            sp_ = g.num("spacing")
            if sp_ <= 0:
                raise ConfigError("[grid] spacing must be positive")
            grid = GridConfig(Ls, spacing=sp_)
        else:
            nx, ny = g.num("nx"), g.num("ny", g.num("nx"))
            if nx != int(nx) or ny != int(ny) or nx < 3 or ny < 3:
                raise ConfigError("[grid] Nx, Ny must be integers >= 3")
            grid = GridConfig(Ls, Nx=int(nx), Ny=int(ny))

    query = _query(parser)

    out = _Section(parser, "output", ("directory", "formats"))
    fmts = tuple(f.strip() for f in out.text("formats", ", ".join(FORMATS)).split(",") if f.strip())
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise ConfigError(f"[output] unknown format(s): {', '.join(bad)}")
    return ExperimentConfig(
        potential=pot,
        B=B,
        eps=eps,
        h=hs,
        grid=grid,
        query=query,
        directory=out.text("directory", "out"),
        formats=fmts,
        present=present,
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return parse_config(text, str(p))
