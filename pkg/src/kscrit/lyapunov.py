"""Energy functionals H, H_eps, F, F_eps, the dissipation rate, and monotonicity audits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import DomainError
from .profiles import Parameters, Profile, derivative


def f_eps(x, eps: float, q: float):
    """Regularized nonlinearity (x + eps)^q - eps^q."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("f_eps is defined for x >= 0", bound=0.0)
    out = (xa + eps) ** q - eps**q
    return float(out) if np.ndim(x) == 0 else out


def H(x, q: float):
    """Limit potential x^{2-q} / ((2-q)(1-q)); H'' = x^{-q}."""
    xa = np.asarray(x, dtype=float)
    out = np.maximum(xa, 0.0) ** (2 - q) / ((2 - q) * (1 - q))
    return float(out) if np.ndim(x) == 0 else out


def H_eps(x, eps: float, q: float, tol: float = 1e-12):
    """int_0^x int_1^y dt / f_eps(t) dy + x / (1 - q).

    Integration by parts removes the logarithmic singularity of the inner
    integral at 0:  H_eps(x) = x gamma(x) - int_0^x y / f_eps(y) dy + x / (1-q)
    with gamma(x) = int_1^x dt / f_eps(t).  Arrays are handled by integrating
    between consecutive sorted abscissae.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("H_eps is defined for x >= 0", bound=0.0)
    flat = xa.ravel()
    pts = np.unique(flat[flat > 0])
    vals = {}
    if pts.size:
        recip = lambda t: 1.0 / ((t + eps) ** q - eps**q)
        ratio = lambda t: t / ((t + eps) ** q - eps**q) if t > 0 else eps ** (1 - q) / q
        kw = dict(epsabs=tol * 1e-2, epsrel=tol, limit=200)
        J = np.empty(pts.size)
        C = np.empty(pts.size)
        prev, accJ, accC = 0.0, 0.0, 0.0
        for k, p in enumerate(pts):
            accJ += quad(ratio, prev, p, **kw)[0]
            if k > 0:
                accC += quad(recip, prev, p, **kw)[0]
            J[k], C[k] = accJ, accC
            prev = p
        # anchor C at t = 1 so that gamma = C - C(1)
        j = int(np.searchsorted(pts, 1.0, side="right")) - 1
        if j >= 0:
            c1 = C[j] + quad(recip, pts[j], 1.0, **kw)[0]
        else:
            c1 = -quad(recip, 1.0, pts[0], **kw)[0]
        gam = C - c1
        Hv = pts * gam - J + pts / (1 - q)
        vals = dict(zip(pts.tolist(), Hv.tolist()))
    out = np.array([vals.get(v, 0.0) for v in flat.tolist()]).reshape(xa.shape)
    return float(out) if np.ndim(x) == 0 else out


def H_eps_bound(eps: float, q: float, R: float) -> float:
    """Uniform bound on |H_eps - H| over [0, R] from f_eps(t) >= K t, K = f_1(R)/R."""
    K = f_eps(R, 1.0, q) / R
    return eps**q / (K * q) * (R ** (1 - q) / (1 - q) + R)


def _potential_term(u: Profile, q: float) -> float:
    """int u^2 / (2 x^{2-q}) = (1/2) int (u/x)^2 x^q dx, exact weights per cell."""
    x = u.grid.nodes
    v = u.values
    r2 = np.empty_like(x)
    r2[0] = u.derivative_at_zero**2
    r2[1:] = (v[1:] / x[1:]) ** 2
    first = u.derivative_at_zero**2 * x[1] ** (1 + q) / (1 + q)
    xl, xr = x[1:-1], x[2:]
    W0 = (xr ** (q + 1) - xl ** (q + 1)) / (q + 1)
    W1 = (xr ** (q + 2) - xl ** (q + 2)) / (q + 2) - xl * W0
    rest = np.sum(r2[1:-1] * W0 + (r2[2:] - r2[1:-1]) / (xr - xl) * W1)
    return 0.5 * (first + rest)


def _chords(u: Profile) -> tuple[np.ndarray, np.ndarray]:
    h = u.grid.widths
    return h, np.maximum(np.diff(u.values), 0.0) / h


def energy_F(u: Profile, params: Parameters) -> float:
    """F(u) = int H(u_x) - u^2 / (2 x^{2-q}); midpoint rule on cell slopes."""
    q = params.q
    h, s = _chords(u)
    return float(np.sum(h * H(s, q)) - _potential_term(u, q))


def energy_F_eps(u: Profile, params: Parameters, eps: float, tol: float = 1e-12) -> float:
    q = params.q
    h, s = _chords(u)
    return float(np.sum(h * H_eps(s, eps, q, tol)) - _potential_term(u, q))


def dissipation_eps(u: Profile, u_t: np.ndarray, eps: float, params: Parameters) -> float:
    """int u_t^2 / (x^{2-q} f_eps(u_x)), the decay rate of F_eps along the regularized flow."""
    q = params.q
    x = u.grid.nodes
    ux = derivative(u)
    u_t = np.asarray(u_t, dtype=float)
    inner = slice(1, -1)
    if np.any(ux[inner] <= 0):
        raise DomainError("dissipation needs u_x > 0 at interior nodes")
    g = np.zeros_like(x)
    g[inner] = u_t[inner] ** 2 / (x[inner] ** (2 - q) * f_eps(ux[inner], eps, q))
    return float(np.trapezoid(g, x))


# ------------------------------------------------------------------ audits

@dataclass(frozen=True)
class EnergyRecord:
    t: float
    F_value: float
    F_eps_value: float | None = None
    dissipation: float | None = None


@dataclass(frozen=True)
class AuditReport:
    passed: bool
    flagged: list[int] = field(default_factory=list)
    max_increase: float = 0.0
    tol: float = 0.0
    n_records: int = 0


def audit_monotonicity(records, tol: float, t0: float = 0.0) -> AuditReport:
    """Flag every adjacent pair (at t >= t0) where F increases by more than tol."""
    recs = [r for r in records if r.t >= t0]
    F = np.array([r.F_value for r in recs], dtype=float)
    if F.size < 2:
        return AuditReport(True, [], 0.0, tol, F.size)
    inc = np.diff(F)
    bad = np.flatnonzero(inc > tol)
    # report indices relative to the full list
    offset = len(records) - len(recs)
    flagged = [int(i) + offset + 1 for i in bad]
    return AuditReport(bad.size == 0, flagged, float(max(inc.max(), 0.0)), tol, F.size)


def audit_tolerance(h: float, dt: float, horizon: float) -> float:
    return 10.0 * (h * h + dt) * horizon

