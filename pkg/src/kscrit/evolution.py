"""Time stepping for u_t = x^{2-q} u_xx + u g(u_x) on (0, 1] and its transformed form.

The direct scheme is backward Euler on a graded grid with the transport
term linearized about the current state: u g(u_x) is written as
k(x) u_x with k = u g(u_x)/u_x frozen from the previous step, and the
resulting tridiagonal system is solved implicitly.  Central weights are used
for k u_x except where they would give a negative off-diagonal entry, where
the one-sided (upwind) difference is used instead; the matrix is then an
M-matrix, so the step is monotone.  Step doubling provides an error estimate
and a Richardson-extrapolated update of second order in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import ConstraintViolationError, FitRejectedError, InvalidInputError
from .lyapunov import energy_F, f_eps
from .profiles import Grid, Parameters, Profile, derivative, nmax, slope_at_zero
from .stationary import unit_ball_volume

SCHEMES = ("direct_imex", "regularized_imex", "transformed")
SLOPE_GUARD = 1e-14
REPAIR_RTOL = 1e-13
# once the first cell holds this fraction of the mass (N[u] >= frac * m / x_1) the
# blow-up core is narrower than a cell and further growth is not resolved
SATURATION = 0.05


class StepFailure(Exception):
    """The step size fell below dt_min while retrying a step."""

    def __init__(self, t: float, dt: float):
        super().__init__(f"step size {dt:.3e} below minimum at t = {t:.6g}")
        self.t = t
        self.dt = dt


@dataclass(frozen=True)
class DiagRecord:
    t: float
    nmax: float
    F: float
    dt: float
    bd_residual: float
    smoothing: float = math.nan  # sqrt(t) * ||u||_{C^1}, bounded on finite runs


@dataclass
class EvolutionState:
    params: Parameters
    u: Profile
    t: float = 0.0
    dt: float = 1e-6
    scheme: str = "direct_imex"
    reg_eps: float = 0.0
    tol: float = 1e-6
    dt_min: float = 1e-13
    dt_max: float = math.inf
    diagnostics: list = field(default_factory=list, repr=False)
    steps: int = 0
    rejected: int = 0
    last_dt: float = 0.0

    def __post_init__(self):
        if self.scheme not in ("direct_imex", "regularized_imex"):
            raise InvalidInputError(f"scheme {self.scheme!r} is not a direct scheme")
        if self.scheme == "regularized_imex" and self.reg_eps <= 0:
            raise InvalidInputError("the regularized scheme needs reg_eps > 0")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")

    @property
    def m(self) -> float:
        return self.params.m

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def record(self) -> DiagRecord:
        v = self.u.values
        c1 = float(np.max(np.abs(v)) + np.max(np.abs(derivative(self.u))))
        rec = DiagRecord(float(self.t), nmax(self.u), energy_F(self.u, self.params),
                         float(self.last_dt or self.dt), float(abs(v[0]) + abs(v[-1] - self.m)),
                         math.sqrt(self.t) * c1)
        self.diagnostics.append(rec)
        return rec


def initial_state(params: Parameters, u0: Profile, **kw) -> EvolutionState:
    if u0.grid.x_max != 1.0:
        raise InvalidInputError("the evolution problem lives on [0, 1]")
    if abs(u0.values[-1] - params.m) > 1e-12 * max(params.m, 1.0):
        raise InvalidInputError("initial profile violates u(1) = m")
    vals = np.array(u0.values)
    vals[-1] = params.m
    return EvolutionState(params, Profile(u0.grid, vals, u0.derivative_at_zero), **kw)


# ------------------------------------------------------------------ one implicit substep

def _transport_coefficient(u_mid: np.ndarray, g: np.ndarray, q: float, reg_eps: float) -> np.ndarray:
    if reg_eps > 0:
        safe = np.maximum(g, 1e-300)
        ratio = np.where(g > 1e-12 * reg_eps, f_eps(safe, reg_eps, q) / safe, q * reg_eps ** (q - 1))
        return u_mid * ratio
    return u_mid * np.maximum(g, SLOPE_GUARD) ** (q - 1)


def implicit_substep(x: np.ndarray, u: np.ndarray, dt: float, m: float, q: float,
                     reg_eps: float = 0.0) -> np.ndarray:
    """One backward-Euler step with the transport coefficient frozen at u."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    D = x[1:-1] ** (2 - q)
    a = 2 * D / (hm * (hm + hp))
    c = 2 * D / (hp * (hm + hp))
    g = (hm**2 * u[2:] - hp**2 * u[:-2] + (hp**2 - hm**2) * u[1:-1]) / (hp * hm * (hp + hm))
    g = np.maximum(g, 0.0)
    k = _transport_coefficient(u[1:-1], g, q, reg_eps)
    wp = hm / (hp * (hp + hm))
    wm = -hp / (hm * (hp + hm))
    w0 = (hp - hm) / (hp * hm)
    lo = a + k * wm
    up = c + k * wp
    di = -(a + c) + k * w0
    upwind = lo < 0
    lo = np.where(upwind, a, lo)
    up = np.where(upwind, c + k / hp, up)
    di = np.where(upwind, -(a + c) - k / hp, di)

    n_in = x.size - 2
    ab = np.zeros((3, n_in))
    ab[0, 1:] = -dt * up[:-1]
    ab[1] = 1.0 - dt * di
    ab[2, :-1] = -dt * lo[1:]
    rhs = u[1:-1].copy()
    rhs[-1] += dt * up[-1] * m
    out = np.empty_like(u)
    out[1:-1] = solve_banded((1, 1), ab, rhs)
    out[0] = 0.0
    out[-1] = m
    return out


def _monotone(v: np.ndarray, m: float) -> np.ndarray | None:
    """Return v if nondecreasing, a repaired copy if the drops are at roundoff, else None."""
    d = np.diff(v)
    if np.all(d >= 0):
        return v
    if -d.min() > REPAIR_RTOL * max(m, 1.0):
        return None
    w = np.minimum(np.maximum.accumulate(v), m)
    w[-1] = m
    return w


def step(state: EvolutionState) -> EvolutionState:
    """Advance by one accepted step with step-doubling error control."""
    x = state.grid.nodes
    u = state.u.values
    m, q = state.m, state.params.q
    reg = state.reg_eps if state.scheme == "regularized_imex" else 0.0
    scale = max(nmax(state.u), 1e-300)
    dt = min(state.dt, state.dt_max)
    rejected = 0
    while True:
        if dt < state.dt_min:
            raise StepFailure(state.t, dt)
        full = implicit_substep(x, u, dt, m, q, reg)
        half = implicit_substep(x, implicit_substep(x, u, dt / 2, m, q, reg), dt / 2, m, q, reg)
        err = float(np.max(np.abs(half[1:] - full[1:]) / x[1:])) / scale
        if not math.isfinite(err):
            dt *= 0.5
            rejected += 1
            continue
        if err > state.tol:
            dt *= max(0.2, 0.9 * math.sqrt(state.tol / err))
            rejected += 1
            continue
        new = _monotone(2 * half - full, m)
        if new is None:
            new = _monotone(half, m)
        if new is None:
            dt *= 0.5
            rejected += 1
            continue
        break
    grow = min(2.0, 0.9 * math.sqrt(state.tol / max(err, 1e-16)))
    prof = Profile(state.grid, new, slope_at_zero(x, new, q))
    return replace(state, u=prof, t=state.t + dt, dt=min(dt * grow, state.dt_max),
                   steps=state.steps + 1, rejected=state.rejected + rejected, last_dt=dt)


# ------------------------------------------------------------------ driver

@dataclass(frozen=True)
class StopRule:
    nmax_threshold: float = 1e6
    dt_min: float = 1e-13
    record_every: int = 10


@dataclass(frozen=True)
class BlowupReport:
    blew_up: bool
    T_estimate: float
    trigger: str
    rate_exponent: float | None = None
    rate_fit_r2: float | None = None
    stopped_by_observer: bool = False


@dataclass
class Trajectory:
    """Snapshots of a run at prescribed times (all on one grid)."""

    grid: Grid
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def add(self, t: float, v: np.ndarray) -> None:
        self.times.append(float(t))
        self.values.append(np.array(v))


@dataclass(frozen=True)
class BlowupFit:
    exponent: float
    r2: float
    T_estimate: float
    n_points: int


def fit_blowup(t, n, q: float, window: float = 0.1, min_points: int = 20) -> BlowupFit:
    """Fit n ~ C (T - t)^{-beta}: T from the affine fit of n^{-q} against t, beta by log-log regression.

    The window keeps points with n >= window * n[-1] (the last decade for 0.1).
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    keep = n >= window * n[-1]
    # only the final contiguous stretch
    if not keep[-1]:
        raise FitRejectedError("last point outside the window")
    start = len(keep) - np.argmin(keep[::-1]) if not keep.all() else 0
    tw, nw = t[start:], n[start:]
    if tw.size < min_points:
        raise FitRejectedError(f"only {tw.size} points in the growth window")
    if np.any(np.diff(nw) <= 0):
        raise FitRejectedError("nmax is not increasing in the fit window")
    y = nw ** (-q)
    slope, icpt = np.polyfit(tw, y, 1)
    if slope >= 0:
        raise FitRejectedError("n^{-q} is not decreasing; no finite blow-up time")
    T = -icpt / slope
    gap = T - tw
    ok = gap > 0
    if ok.sum() < 3:
        raise FitRejectedError("fitted blow-up time precedes the data")
    lx, ly = np.log(gap[ok]), np.log(nw[ok])
    b, c = np.polyfit(lx, ly, 1)
    resid = ly - (b * lx + c)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return BlowupFit(float(-b), float(r2), float(T), int(tw.size))


def run_until(state: EvolutionState, horizon: float, stop: StopRule | None = None, *,
              observer: Callable[[EvolutionState], bool] | None = None, observe_every: int = 1,
              output_times=None, trajectory: Trajectory | None = None,
              trace: dict | None = None) -> tuple[EvolutionState, BlowupReport]:
    """Step until the horizon, a blow-up trigger, or the observer asks to stop.

    ``trace`` (if given) receives per-step lists ``t`` and ``nmax``; ``trajectory``
    receives snapshots at ``output_times`` (steps are shortened to hit them).
    """
    if horizon <= state.t:
        raise InvalidInputError("horizon must exceed the current time")
    stop = stop or StopRule()
    state = replace(state, dt_min=stop.dt_min)
    tr = trace if trace is not None else {}
    tr.setdefault("t", []).append(state.t)
    tr.setdefault("nmax", []).append(nmax(state.u))
    targets = sorted(float(s) for s in ([] if output_times is None else output_times) if s >= state.t)
    if trajectory is not None and targets and targets[0] == state.t:
        trajectory.add(state.t, state.u.values)
        targets.pop(0)
    if not state.diagnostics:
        state.record()
    trigger = "horizon_reached"
    observed_stop = False
    ceiling = SATURATION * state.m / state.grid.nodes[1]
    while state.t < horizon:
        cap = horizon - state.t
        if targets:
            cap = min(cap, targets[0] - state.t)
        clipped = state.dt > cap
        if clipped:
            saved = state.dt
            state = replace(state, dt=cap)
        try:
            state = step(state)
        except StepFailure:
            trigger = "dt_collapse"
            break
        if clipped and state.last_dt == cap:
            state = replace(state, dt=max(state.dt, saved))
        if targets and abs(state.t - targets[0]) <= 1e-12 * max(1.0, targets[0]):
            state = replace(state, t=targets[0])
            if trajectory is not None:
                trajectory.add(state.t, state.u.values)
            targets.pop(0)
        nm = nmax(state.u)
        tr["t"].append(state.t)
        tr["nmax"].append(nm)
        if state.steps % stop.record_every == 0:
            state.record()
        if nm >= stop.nmax_threshold:
            trigger = "nmax_threshold"
            break
        if nm >= ceiling:
            trigger = "grid_saturation"
            break
        if observer is not None and state.steps % observe_every == 0 and observer(state):
            observed_stop = True
            trigger = "observer"
            break
    if not state.diagnostics or state.diagnostics[-1].t != state.t:
        state.record()
    blew = trigger in ("nmax_threshold", "grid_saturation", "dt_collapse")
    T_est, beta, r2 = math.inf, None, None
    if blew:
        try:
            fit = fit_blowup(tr["t"], tr["nmax"], state.params.q)
            T_est, beta, r2 = fit.T_estimate, fit.exponent, fit.r2
        except FitRejectedError:
            T_est = state.t
    return state, BlowupReport(blew, T_est, trigger, beta, r2, observed_stop)


# ------------------------------------------------------------------ transformed problem

@dataclass(frozen=True, eq=False)
class TransformedState:
    """w(t, r) = u(N^2 t, r^N) / r^N on a uniform radial grid."""

    r: np.ndarray
    w: np.ndarray
    t: float
    m: float
    N: int

    def constraint(self) -> np.ndarray:
        """w + r w_r / N, which equals u_x and must stay >= 0."""
        return self.w + self.r * np.gradient(self.w, self.r, edge_order=2) / self.N


def theta0(u: Profile, N: int, n_cells: int | None = None) -> TransformedState:
    """w0(r) = u(r^N) / r^N with w0(0) = u'(0)."""
    n_cells = n_cells or u.grid.n_cells
    r = np.linspace(0.0, 1.0, n_cells + 1)
    x = r**N
    nodes = u.grid.nodes
    if x.size == nodes.size and np.allclose(x, nodes, rtol=1e-14, atol=0):
        vals = u.values
    else:
        ratio = np.empty_like(nodes)
        ratio[0] = u.derivative_at_zero
        ratio[1:] = u.values[1:] / nodes[1:]
        vals = x * CubicSpline(nodes, ratio)(x)
    w = np.empty_like(r)
    w[0] = u.derivative_at_zero
    w[1:] = vals[1:] / x[1:]
    return TransformedState(r, w, 0.0, float(u.values[-1]), N)


def solve_transformed(state: TransformedState, dt: float, n_steps: int,
                      constraint_tol: float = 1e-10) -> TransformedState:
    """Backward-Euler diffusion with the radial Laplacian in dimension N+2, explicit reaction."""
    N, q = state.N, 2.0 / state.N
    r = state.r
    n = r.size - 1
    h = r[1] - r[0]
    ri = r[1:-1]
    lo = 1 / h**2 - (N + 1) / (2 * h * ri)
    up = 1 / h**2 + (N + 1) / (2 * h * ri)
    # rows 0..n-1 unknown, w_n = m fixed
    ab = np.zeros((3, n))
    ab[1, 0] = 1 + dt * 2 * (N + 2) / h**2
    ab[0, 1] = -dt * 2 * (N + 2) / h**2
    ab[1, 1:] = 1 + dt * 2 / h**2
    ab[0, 2:] = -dt * up[:-1]
    ab[2, :-1] = -dt * lo
    w = state.w.copy()
    for _ in range(n_steps):
        wr = np.empty_like(w)
        wr[0] = 0.0
        wr[1:-1] = (w[2:] - w[:-2]) / (2 * h)
        wr[-1] = (3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * h)
        cons = w + r * wr / N
        if np.any(cons < -constraint_tol * max(state.m, 1.0)):
            raise ConstraintViolationError("w + r w_r / N became negative")
        reac = N**2 * w * np.maximum(cons, 0.0) ** q
        rhs = w[:-1] + dt * reac[:-1]
        rhs[-1] += dt * up[-1] * state.m
        w[:-1] = solve_banded((1, 1), ab, rhs)
        w[-1] = state.m
    return TransformedState(r, w, state.t + n_steps * dt, state.m, N)


def map_w_to_u(w: TransformedState, grid: Grid) -> Profile:
    """u(x) = x w(x^{1/N}), sampled on the target grid."""
    spline = CubicSpline(w.r, w.w, bc_type=((1, 0.0), "not-a-knot"))
    x = grid.nodes
    vals = x * spline(x ** (1.0 / w.N))
    vals[0] = 0.0
    vals[-1] = w.m * x[-1] if x[-1] != 1.0 else w.m
    vals = np.maximum.accumulate(vals)
    return Profile(grid, vals, float(w.w[0]))


# ------------------------------------------------------------------ audits and reconstruction

@dataclass(frozen=True)
class ComparisonAudit:
    ordered: bool
    max_violation: float
    tol: float


def comparison_audit(lo: Trajectory, hi: Trajectory, tol: float) -> ComparisonAudit:
    if not lo.grid.same_as(hi.grid):
        raise InvalidInputError("trajectories are on different grids")
    if len(lo.times) != len(hi.times) or not np.allclose(lo.times, hi.times, rtol=1e-12, atol=0):
        raise InvalidInputError("trajectories are recorded at different times")
    worst = 0.0
    for a, b in zip(lo.values, hi.values):
        worst = max(worst, float(np.max(a - b)))
    return ComparisonAudit(worst <= tol, worst, tol)


def comparison_check(lo: Trajectory, hi: Trajectory, tol: float | None = None,
                     dt: float | None = None) -> bool:
    """Whether lo <= hi + tol holds at every recorded time (default tol 10 (h^2 + dt))."""
    if tol is None:
        dt = dt if dt is not None else 0.0
        tol = 10.0 * (lo.grid.h_max**2 + dt)
    return comparison_audit(lo, hi, tol).ordered


@dataclass(frozen=True)
class PhysicalFields:
    r: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    total_mass: float
    expected_mass: float
    t_physical: float


def reconstruct_physical(u: Profile, params: Parameters, t: float = 0.0) -> PhysicalFields:
    """Radial cell density and chemical concentration from the cumulative profile."""
    N, q = params.N, params.q
    x = u.grid.nodes
    if x[-1] != 1.0:
        raise InvalidInputError("reconstruction needs a profile on [0, 1]")
    r = x ** (1.0 / N)
    rho = N**N * np.maximum(derivative(u), 0.0)
    ratio = np.empty_like(x)
    ratio[0] = u.derivative_at_zero
    ratio[1:] = u.values[1:] / x[1:]
    W0 = (x[1:] ** q - x[:-1] ** q) / q
    W1 = (x[1:] ** (q + 1) - x[:-1] ** (q + 1)) / (q + 1) - x[:-1] * W0
    cell = ratio[:-1] * W0 + (ratio[1:] - ratio[:-1]) / np.diff(x) * W1
    tail = np.concatenate((np.cumsum(cell[::-1])[::-1], [0.0]))
    c = N ** (N - 2) * tail
    sigma = N * unit_ball_volume(N)
    total = sigma * float(np.trapezoid(r ** (N - 1) * rho, r))
    expected = N**N * unit_ball_volume(N) * float(u.values[-1])
    return PhysicalFields(r, rho, c, total, expected, t / N**2)
