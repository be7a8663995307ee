"""Stationary profiles U_a: local Picard start, shooting, integral equation, critical constants.

The stationary equation x^{2-q} u'' + u u'^q = 0 is integrated in the variables
(u, z) with z = u'^{1-q}.  Along a solution

    z' = -(1-q) u x^{q-2},   so   z(x) = 1 - (1-q) int_0^x u(s) s^{q-2} ds   (a = 1),

which is exactly the bracket whose first zero is the flat point A.  Unlike u'
itself, z crosses zero transversally, so the flat point is an ordinary event.
The same machinery handles the perturbed problem with the extra term
eps * x * u' on the right (see :mod:`kscrit.selfsim`).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.special import gamma, roots_jacobi

from .errors import InconsistencyError, InvalidInputError, NoConvergenceError, NumericalFailureError
from .profiles import Grid, Parameters, Profile

CHEB_DEGREE = 40
JACOBI_NODES = 48
MAX_HALVINGS = 40


def unit_ball_volume(N: int) -> float:
    return math.pi ** (N / 2) / gamma(N / 2 + 1)


# ------------------------------------------------------------------ Picard start

def contraction_factor(a: float, q: float, delta: float, eps: float = 0.0) -> float:
    """Lipschitz constant of the fixed-point map on the ball a/2 <= u' <= 3a/2 over [0, delta]."""
    k = (1.5**q / q + 1.5 / 0.5 ** (1 - q)) * (a * delta) ** q
    return k + eps * delta**q / q


def default_delta(a: float, q: float) -> float:
    if a <= 0:
        return 0.05
    return min(0.05, (q / 4) ** (1 / q) / a)


@dataclass(frozen=True)
class PicardSolution:
    """Fixed point of u -> a x - int_0^x int_0^y (u/s) u'^q s^{q-1} on [0, delta].

    The slope is a smooth function of tau = x^q and is held as a Chebyshev
    series in tau; u(x)/x is recovered by Gauss-Jacobi quadrature.
    """

    a: float
    q: float
    eps: float
    delta: float
    contraction: float
    iterations: int
    slope_series: Chebyshev | None = field(repr=False)

    def du(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.slope_series is None:
            return np.zeros_like(x)
        return self.slope_series(x**self.q)

    def ratio(self, x) -> np.ndarray:
        """u(x)/x, continuous at x = 0 with value a."""
        x = np.asarray(x, dtype=float)
        if self.slope_series is None:
            return np.zeros_like(x)
        return _mean_slope(self.slope_series, np.atleast_1d(x**self.q), self.q).reshape(x.shape)

    def u(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x * self.ratio(x)

    def profile(self, n_cells: int = 64, p: float = 3.0) -> Profile:
        grid = Grid.graded(n_cells, self.delta, p)
        vals = self.u(grid.nodes)
        vals[0] = 0.0
        return Profile(grid, np.maximum.accumulate(vals), self.a)


@functools.lru_cache(maxsize=8)
def _jacobi_rule(q: float):
    beta = 1.0 / q - 1.0
    xi, w = roots_jacobi(JACOBI_NODES, 0.0, beta)
    rho = 0.5 * (1.0 + xi)
    w = w * 0.5 ** (beta + 1.0)
    return rho, w


def _mean_slope(P: Chebyshev, tau: np.ndarray, q: float) -> np.ndarray:
    # u(x)/x = int_0^1 u'(x s) ds = (1/q) int_0^1 P(tau r) r^{1/q-1} dr
    rho, w = _jacobi_rule(q)
    vals = P(np.multiply.outer(tau, rho))
    return (vals @ w) / q


def picard_local(a: float, q: float, *, eps: float = 0.0, delta: float | None = None,
                 tol: float = 1e-14, max_iter: int = 200) -> PicardSolution:
    """Local solution near x = 0 by fixed-point iteration.

    ``delta`` is halved until the contraction factor is below 1.  With eps > 0
    the map includes the perturbation term of the self-similar problem
    (slope at 0 is then taken as ``a``).
    """
    if a < 0 or not math.isfinite(a):
        raise InvalidInputError("slope a must be finite and >= 0")
    if not 0 < q < 1:
        raise InvalidInputError("q must lie in (0, 1)")
    delta = default_delta(a, q) if delta is None else float(delta)
    if delta <= 0:
        raise InvalidInputError("delta must be positive")
    if a == 0:
        return PicardSolution(0.0, q, eps, delta, 0.0, 0, None)

    k = contraction_factor(a, q, delta, eps)
    halvings = 0
    while k >= 1.0:
        if halvings >= MAX_HALVINGS:
            raise NoConvergenceError(f"no contraction after {halvings} halvings of delta")
        delta *= 0.5
        halvings += 1
        k = contraction_factor(a, q, delta, eps)

    T = delta**q
    domain = [0.0, T]
    P = Chebyshev([a], domain=domain)
    for it in range(1, max_iter + 1):
        def G(tau, P=P):
            p = P(tau)
            r = _mean_slope(P, np.atleast_1d(tau), q)
            return r * np.maximum(p, 0.0) ** q - eps * p

        Gc = Chebyshev.interpolate(G, CHEB_DEGREE, domain=domain)
        P_new = a - Gc.integ(lbnd=0.0) / q
        probe = np.linspace(0.0, T, 65)
        change = float(np.max(np.abs(P_new(probe) - P(probe))))
        P = P_new
        if change <= tol * max(a, 1.0):
            return PicardSolution(a, q, eps, delta, k, it, P)
    raise NoConvergenceError("Picard iteration did not reach tolerance")


# ------------------------------------------------------------------ shooting

@dataclass(frozen=True)
class Shot:
    """Solution of the shooting problem on [0, x_end] with a possible flat point."""

    a: float
    q: float
    eps: float
    local: PicardSolution
    ode: object | None
    flat_point: float
    plateau: float
    x_end: float

    def u(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        if self.a == 0:
            out[...] = 0.0
            return out
        d = self.local.delta
        lo = x <= d
        hi = x >= self.flat_point
        mid = ~lo & ~hi
        out[lo] = self.local.u(x[lo])
        if np.any(mid):
            out[mid] = self.ode.sol(x[mid])[0]
        out[hi] = self.plateau
        return out

    def du(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if self.a == 0:
            return out
        d = self.local.delta
        lo = x <= d
        hi = x >= self.flat_point
        mid = ~lo & ~hi
        out[lo] = self.local.du(x[lo])
        if np.any(mid):
            z = self.ode.sol(x[mid])[1]
            out[mid] = np.maximum(z, 0.0) ** (1 / (1 - self.q))
        return out

    def bracket(self, x) -> np.ndarray:
        """z = u'^{1-q} continued through its zero (negative past the flat point)."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        d = self.local.delta
        lo = x <= d
        out[lo] = self.local.du(x[lo]) ** (1 - self.q)
        mid = ~lo & (x <= self.flat_point)
        if np.any(mid):
            out[mid] = self.ode.sol(x[mid])[1]
        out[x > self.flat_point] = np.nan
        return out


def shoot(a: float, q: float, x_max: float, *, eps: float = 0.0, tol: float = 1e-12,
          delta: float | None = None) -> Shot:
    """Integrate the (possibly perturbed) stationary problem from slope a out to x_max.

    The terminal event z = 0 marks the flat point; past it the solution is
    constant.  If no flat point occurs before x_max, flat_point = inf.
    """
    if x_max <= 0:
        raise InvalidInputError("x_max must be positive")
    loc = picard_local(a, q, eps=eps, delta=delta)
    if a == 0:
        return Shot(0.0, q, eps, loc, None, 0.0, 0.0, x_max)
    d = loc.delta
    if x_max <= d:
        return Shot(a, q, eps, loc, None, math.inf, math.nan, x_max)

    def rhs(x, y):
        u, z = y
        return [max(z, 0.0) ** (1 / (1 - q)), (1 - q) * (eps * x ** (q - 1) * z - u * x ** (q - 2))]

    def flat(x, y):
        return y[1]
    flat.terminal = True
    flat.direction = -1

    y0 = [float(loc.u(d)), float(loc.du(d)) ** (1 - q)]
    rtol = max(tol * 1e-2, 3e-14)
    sol = solve_ivp(rhs, (d, x_max), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                    events=flat, dense_output=True)
    if sol.status == -1:
        raise NumericalFailureError(f"integrator failed: {sol.message}", last_x=float(sol.t[-1]))
    if sol.t_events[0].size:
        xf = float(sol.t_events[0][0])
        return Shot(a, q, eps, loc, sol, xf, float(sol.y_events[0][0][0]), x_max)
    return Shot(a, q, eps, loc, sol, math.inf, math.nan, x_max)


@functools.lru_cache(maxsize=32)
def unit_shot(q: float, eps: float = 0.0, tol: float = 1e-12, x_max: float = 1e4) -> Shot:
    """Cached solution with slope 1, integrated until the flat point or x_max."""
    return shoot(1.0, q, x_max, eps=eps, tol=tol)


@functools.lru_cache(maxsize=8)
def unit_table(q: float, n_cells: int = 2**15) -> Callable:
    """Fast evaluator of U_1: a cubic Hermite table on a graded grid over [0, A].

    Evaluating the integrator's dense output is slow when called inside an
    optimizer; the table reproduces it to about 1e-12.
    """
    s = unit_shot(q)
    x = Grid.graded(n_cells, s.flat_point, 3.0).nodes
    spline = CubicHermiteSpline(x, s.u(x), s.du(x))
    A, M = s.flat_point, s.plateau

    def u(y):
        y = np.asarray(y, dtype=float)
        return np.where(y >= A, M, spline(np.minimum(y, A)))
    return u


# ------------------------------------------------------------------ stationary profiles

@dataclass(frozen=True, eq=False)
class StationaryProfile:
    a: float
    profile: Profile
    max_value: float
    flat_point: float
    solver_tag: str
    u_fn: Callable = field(repr=False, default=None)
    du_fn: Callable = field(repr=False, default=None)

    def evaluate(self, x) -> np.ndarray:
        return self.u_fn(np.asarray(x, dtype=float))

    def slope(self, x) -> np.ndarray:
        return self.du_fn(np.asarray(x, dtype=float))

    def sample(self, grid: Grid) -> Profile:
        """This profile sampled on another grid (exact evaluator, no interpolation)."""
        vals = self.evaluate(grid.nodes)
        vals[0] = 0.0
        return Profile(grid, np.maximum.accumulate(vals), self.a)


def _sample(fn, grid: Grid, a: float) -> Profile:
    vals = np.asarray(fn(grid.nodes), dtype=float)
    vals[0] = 0.0
    return Profile(grid, np.maximum.accumulate(vals), a)


def solve_Pa(a: float, params: Parameters, x_max: float | None = None, tol: float = 1e-10, *,
             n_cells: int = 2048, p: float | None = None) -> StationaryProfile:
    """U_a on [0, x_max]: Picard start on [0, delta], then an adaptive integrator.

    The default window is [0, A_a + 1] where A_a = A/a is the flat point.
    """
    if a < 0:
        raise InvalidInputError("a must be >= 0")
    q = params.q
    p = float(params.N) if p is None else p
    if a == 0:
        x_max = 1.0 if x_max is None else x_max
        grid = Grid.graded(n_cells, x_max, p)
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return StationaryProfile(0.0, Profile(grid, np.zeros(grid.nodes.size), 0.0), 0.0, 0.0,
                                 "picard_rk", zero, zero)
    if x_max is None:
        x_max = unit_shot(q).flat_point / a + 1.0
    s = shoot(a, q, x_max, tol=tol)
    grid = Grid.graded(n_cells, x_max, p)
    prof = _sample(s.u, grid, a)
    max_value = s.plateau if math.isfinite(s.flat_point) else float(prof.values[-1])
    return StationaryProfile(a, prof, max_value, s.flat_point, "picard_rk", s.u, s.du)


@dataclass(frozen=True)
class IntegralSweep:
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    bracket: np.ndarray
    A: float
    M: float
    sweeps: int


def _integral_sweeps(q: float, x_max: float, n_cells: int, p: float, tol: float,
                     max_sweeps: int = 500) -> IntegralSweep:
    x = x_max * (np.arange(n_cells + 1) / n_cells) ** p
    h = np.diff(x)
    # exact moments of s^{q-1} on each cell for linear ratio r = u/s
    W0 = (x[1:] ** q - x[:-1] ** q) / q
    W1 = (x[1:] ** (q + 1) - x[:-1] ** (q + 1)) / (q + 1) - x[:-1] * W0
    du = np.ones_like(x)
    u = x.copy()
    last = math.inf
    rising = 0
    for k in range(1, max_sweeps + 1):
        r = np.empty_like(x)
        r[0] = du[0]
        r[1:] = u[1:] / x[1:]
        cell = r[:-1] * W0 + (r[1:] - r[:-1]) / h * W1
        B = 1.0 - (1 - q) * np.concatenate(([0.0], np.cumsum(cell)))
        du_new = np.maximum(B, 0.0) ** (1 / (1 - q))
        u_new = np.concatenate(([0.0], np.cumsum(0.5 * h * (du_new[1:] + du_new[:-1]))))
        change = float(np.max(np.abs(u_new - u)) + np.max(np.abs(du_new - du)))
        u, du = u_new, du_new
        if change < tol:
            break
        rising = rising + 1 if change > last else 0
        if rising >= 3:
            raise NoConvergenceError("integral-equation sweeps are not contracting")
        last = change
    else:
        raise NoConvergenceError("integral-equation sweeps did not converge")
    neg = np.flatnonzero(B <= 0)
    if neg.size == 0:
        return IntegralSweep(x, u, du, B, math.inf, float(u[-1]), k)
    i = int(neg[0]) - 1
    A = x[i] + B[i] / (B[i] - B[i + 1]) * (x[i + 1] - x[i])
    M = u[i] + 0.5 * (A - x[i]) * du[i]
    return IntegralSweep(x, u, du, B, float(A), float(M), k)


def integral_equation_solve(params: Parameters, x_max: float | None = None, tol: float = 1e-10, *,
                            n_cells: int = 2**16, p: float | None = None,
                            richardson: bool = True) -> StationaryProfile:
    """U_1 from the integral representation of its slope.

    Iterates u' <- (1 - (1-q) int_0^x u/s^{2-q})_+^{1/(1-q)}, u <- int u'.  The
    weight s^{q-1} is integrated exactly against a piecewise-linear u/s, which
    absorbs the singularity at 0.  With ``richardson`` the flat point and
    maximum are extrapolated from n and 2n cells (the scheme is second order).
    """
    q = params.q
    p = float(params.N) if p is None else p
    if x_max is None:
        x_max = _integral_sweeps(q, 2e3, 2**12, p, 1e-8).A + 1.0
    fine = _integral_sweeps(q, x_max, n_cells, p, tol)
    A, M = fine.A, fine.M
    if richardson and math.isfinite(A):
        coarse = _integral_sweeps(q, x_max, n_cells // 2, p, tol)
        A = (4 * fine.A - coarse.A) / 3
        M = (4 * fine.M - coarse.M) / 3
    spline = CubicHermiteSpline(fine.x, fine.u, fine.du)

    def u_fn(x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= A, M, spline(np.minimum(x, x_max)))

    def du_fn(x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= A, 0.0, np.maximum(spline(np.minimum(x, x_max), 1), 0.0))

    grid = Grid(fine.x, p, n_cells)
    vals = np.where(fine.x >= A, M, fine.u)
    prof = Profile(grid, np.maximum.accumulate(vals), 1.0)
    return StationaryProfile(1.0, prof, M, A, "integral_equation", u_fn, du_fn)


@dataclass(frozen=True)
class RefinementStudy:
    n_cells: tuple[int, ...]
    A: tuple[float, ...]
    orders: tuple[float, ...]  # log2 of successive difference ratios

    def as_dict(self) -> dict:
        return {"n_cells": list(self.n_cells), "A": list(self.A), "orders": list(self.orders)}


def flat_point_refinement(params: Parameters, levels: tuple[int, ...] = (2**11, 2**12, 2**13, 2**14),
                          tol: float = 1e-12) -> RefinementStudy:
    """Observed convergence order of the unextrapolated flat point under halving of h.

    Reported only; nothing in the library depends on the value.
    """
    if len(levels) < 3:
        raise InvalidInputError("need at least three refinement levels")
    q, p = params.q, float(params.N)
    x_max = _integral_sweeps(q, 2e3, 2**12, p, 1e-8).A + 1.0
    A = [_integral_sweeps(q, x_max, n, p, tol).A for n in levels]
    d = np.abs(np.diff(A))
    orders = tuple(float(np.log2(d[i] / d[i + 1])) if d[i + 1] > 0 else math.inf for i in range(len(d) - 1))
    return RefinementStudy(tuple(levels), tuple(float(a) for a in A), orders)


# ------------------------------------------------------------------ critical constants

@dataclass(frozen=True)
class CriticalConstants:
    N: int
    M: float
    A: float
    M_bar: float
    tol: float

    def as_dict(self) -> dict:
        return {"N": self.N, "M": self.M, "A": self.A, "M_bar": self.M_bar, "tol": self.tol}


@functools.lru_cache(maxsize=16)
def critical_constants(params_or_N: Parameters | int, tol: float = 1e-10) -> CriticalConstants:
    """M = max U_1 and A = first flat point, from two independent solvers."""
    N = params_or_N.N if isinstance(params_or_N, Parameters) else int(params_or_N)
    params = Parameters(N)
    q = params.q
    ie = integral_equation_solve(params, tol=min(tol, 1e-12), n_cells=2**18)
    s = unit_shot(q, 0.0, min(tol, 1e-12))
    gap = max(abs(ie.max_value - s.plateau), abs(ie.flat_point - s.flat_point) / max(s.flat_point, 1.0))
    if gap > 100 * tol * max(1.0, s.flat_point):
        raise InconsistencyError(f"solvers disagree on (M, A) by {gap:.3e}")
    M = ie.max_value
    M_bar = N**N * unit_ball_volume(N) * M
    return CriticalConstants(N, M, ie.flat_point, M_bar, max(gap, tol))


# ------------------------------------------------------------------ mass inversion

@dataclass(frozen=True)
class MassClass:
    """Outcome of inverting a -> U_a(1) = U_1(a)."""

    kind: str  # "unique" | "continuum" | "none"
    a: float | None = None
    a_min: float | None = None
    in_tolerance_band: bool = False


def find_a_for_mass(m: float, params: Parameters, tol: float = 1e-10,
                    constants: CriticalConstants | None = None) -> MassClass:
    if m < 0:
        raise InvalidInputError("m must be >= 0")
    cc = constants or critical_constants(params.N)
    if m == 0:
        return MassClass("unique", a=0.0)
    if abs(m - cc.M) <= tol:
        return MassClass("continuum", a_min=cc.A, in_tolerance_band=m != cc.M)
    if m > cc.M:
        return MassClass("none")
    s = unit_shot(params.q)
    a = brentq(lambda b: float(s.u(np.array(b))) - m, 0.0, cc.A, xtol=tol * 1e-2, rtol=1e-15)
    return MassClass("unique", a=float(a))
