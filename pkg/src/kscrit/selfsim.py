"""Profiles of the perturbed stationary problem and exact self-similar blow-up.

V_eps solves x^{2-q} V'' + V V'^q = eps x V', V(0) = 0, V'(0) = 1.  When
a(t) = a0 (1 - eps a0^q q t)^{-1/q}, the field u(t, x) = V_eps(a(t) x) solves
the evolution equation exactly and blows up at T* = 1/(eps a0^q q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, InvalidInputError
from .profiles import Grid, Parameters, Profile, nmax
from .stationary import critical_constants, shoot

CONCAVITY_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SelfSimProfile:
    eps: float
    profile: Profile
    A_eps: float
    M_eps: float
    concave: bool
    K_eps: float
    flat_detected: bool = True
    closed_form_gap: float = math.nan
    u_fn: Callable = field(repr=False, default=None)
    du_fn: Callable = field(repr=False, default=None)

    @property
    def x_max(self) -> float:
        return self.profile.grid.x_max

    def evaluate(self, x) -> np.ndarray:
        return self.u_fn(np.asarray(x, dtype=float))

    def slope(self, x) -> np.ndarray:
        return self.du_fn(np.asarray(x, dtype=float))

    def sample(self, grid: Grid) -> Profile:
        vals = self.evaluate(grid.nodes)
        vals[0] = 0.0
        return Profile(grid, np.maximum.accumulate(vals), 1.0)


def default_window(params: Parameters) -> float:
    # flat points grow quickly with eps (about 137 at eps = 0.1 for N = 3)
    return 3.0 * (critical_constants(params.N).A + 1.0)


def closed_form_slope(x: np.ndarray, V: np.ndarray, eps: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Slope of V_eps rebuilt from its integrated Bernoulli form.

    With E(x) = exp(eps (1-q) x^q / q) and the weighted bracket
    B(x) = 1 - (1-q) int_0^x V(s) s^{q-2} / E(s) ds, one has V'^{1-q} = E B,
    hence V' = exp(eps x^q / q) B_+^{1/(1-q)}.  Returns (slope, bracket).
    The weight s^{q-1} is integrated exactly against piecewise-linear V/(s E).
    """
    E = np.exp(eps * (1 - q) * x**q / q)
    g = np.empty_like(x)
    g[0] = 1.0
    g[1:] = V[1:] / x[1:] / E[1:]
    h = np.diff(x)
    W0 = (x[1:] ** q - x[:-1] ** q) / q
    W1 = (x[1:] ** (q + 1) - x[:-1] ** (q + 1)) / (q + 1) - x[:-1] * W0
    cell = g[:-1] * W0 + (g[1:] - g[:-1]) / h * W1
    B = 1.0 - (1 - q) * np.concatenate(([0.0], np.cumsum(cell)))
    return np.exp(eps * x**q / q) * np.maximum(B, 0.0) ** (1 / (1 - q)), B


def solve_Qeps(eps: float, params: Parameters, x_max: float | None = None, tol: float = 1e-10, *,
               n_cells: int = 8192, p: float | None = None, check_cells: int = 2**15) -> SelfSimProfile:
    """V_eps on [0, x_max] by the same Picard-plus-integrator route as U_a."""
    if not 0 < eps <= 1:
        raise InvalidInputError("eps must lie in (0, 1]")
    q = params.q
    p = float(params.N) if p is None else p
    x_max = default_window(params) if x_max is None else float(x_max)
    s = shoot(1.0, q, x_max, eps=eps, tol=tol)
    flat = math.isfinite(s.flat_point)
    grid = Grid.graded(n_cells, x_max, p)
    vals = s.u(grid.nodes)
    vals[0] = 0.0
    prof = Profile(grid, np.maximum.accumulate(vals), 1.0)
    M_eps = s.plateau if flat else float(prof.values[-1])

    x = grid.nodes
    dv = s.du(x)
    active = x < s.flat_point
    lhs = eps * x * dv ** (1 - q)
    concave = bool(np.all(lhs[active] <= vals[active] * (1 + CONCAVITY_RTOL) + 1e-300))

    # independent check of the slope against the integrated form
    x_end = min(s.flat_point, x_max)
    xc = Grid.graded(check_cells, x_end, p).nodes
    dv_cf, _ = closed_form_slope(xc, s.u(xc), eps, q)
    gap = float(np.max(np.abs(dv_cf - s.du(xc))))

    return SelfSimProfile(eps, prof, s.flat_point, M_eps, concave, nmax(prof), flat, gap, s.u, s.du)


@dataclass(frozen=True)
class BandEntry:
    eps: float
    A_eps: float
    M_eps: float
    concave: bool
    flat_detected: bool


@dataclass(frozen=True)
class CriticalBand:
    M: float
    entries: tuple[BandEntry, ...]

    @property
    def M_plus(self) -> float:
        vals = [e.M_eps for e in self.entries if e.flat_detected]
        return max(vals) if vals else math.nan

    def as_dict(self) -> dict[float, float]:
        return {e.eps: e.M_eps for e in self.entries}

    def to_csv(self) -> str:
        lines = ["eps,A_eps,M_eps,concave"]
        for e in self.entries:
            lines.append(f"{e.eps!r},{e.A_eps!r},{e.M_eps!r},{str(e.concave).lower()}")
        return "\n".join(lines) + "\n"

    def extrapolate_to_zero(self) -> float:
        """Linear fit of M_eps against eps through the two smallest entries."""
        pts = sorted((e.eps, e.M_eps) for e in self.entries)[:2]
        if len(pts) < 2:
            raise InvalidInputError("need at least two entries to extrapolate")
        (e1, m1), (e2, m2) = pts
        return m1 - e1 * (m2 - m1) / (e2 - e1)


def critical_band(params: Parameters, eps_grid=(0.1, 0.05, 0.02, 0.01), tol: float = 1e-10) -> CriticalBand:
    """Tabulate V_eps(A + 1) over eps; these values fill the interval [M, M+]."""
    cc = critical_constants(params.N)
    x_eval = cc.A + 1.0
    out = []
    for eps in eps_grid:
        s = shoot(1.0, params.q, default_window(params), eps=eps, tol=tol)
        flat = math.isfinite(s.flat_point)
        xs = np.linspace(0.0, x_eval, 2001)
        dv = s.du(xs)
        act = xs < s.flat_point
        concave = bool(np.all(eps * xs[act] * dv[act] ** (1 - params.q) <= s.u(xs[act]) * (1 + CONCAVITY_RTOL)))
        out.append(BandEntry(float(eps), s.flat_point, float(s.u(np.array(x_eval))), concave, flat))
    return CriticalBand(cc.M, tuple(out))


# ------------------------------------------------------------------ amplitude law

@dataclass(frozen=True)
class AmplitudeLaw:
    a0: float
    eps: float
    q: float

    def __post_init__(self):
        if self.a0 <= 0 or self.eps <= 0 or not 0 < self.q < 1:
            raise InvalidInputError("need a0 > 0, eps > 0 and q in (0, 1)")

    @property
    def T_star(self) -> float:
        return 1.0 / (self.eps * self.a0**self.q * self.q)

    def time_of(self, a: float) -> float:
        """Inverse of the law: the time at which the amplitude equals a (>= a0)."""
        return self.T_star * (1.0 - (self.a0 / a) ** self.q)


def amplitude(law: AmplitudeLaw, t: float) -> float:
    if t >= law.T_star:
        raise DomainError(f"t = {t} is past the blow-up time {law.T_star}", bound=law.T_star)
    return law.a0 * (1.0 - law.eps * law.a0**law.q * law.q * t) ** (-1.0 / law.q)


def self_similar_field(V: SelfSimProfile, law: AmplitudeLaw, t: float, grid: Grid) -> Profile:
    """V_eps(a(t) x) on the grid, by monotone cubic interpolation of V's samples."""
    if law.eps != V.eps:
        raise InvalidInputError("law and profile have different eps")
    a = amplitude(law, t)
    y = a * grid.nodes
    beyond = y > V.x_max
    if np.any(beyond) and not a >= V.A_eps:
        raise DomainError("a(t) x_max leaves the profile window before the flat point", bound=V.x_max)
    interp = PchipInterpolator(V.profile.grid.nodes, V.profile.values)
    vals = np.where(beyond, V.M_eps, interp(np.minimum(y, V.x_max)))
    vals[0] = 0.0
    if a >= V.A_eps:
        vals = np.where(y >= V.A_eps, V.M_eps, vals)
    return Profile(grid, np.maximum.accumulate(vals), a * V.profile.derivative_at_zero)


def is_exact_regime(V: SelfSimProfile, law: AmplitudeLaw) -> bool:
    """a0 >= A_eps: the field is an exact solution; otherwise only a subsolution."""
    return law.a0 >= V.A_eps
