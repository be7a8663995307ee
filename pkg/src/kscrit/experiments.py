"""Scenario orchestration: classification against the critical mass, rate fits, mass sweeps."""

from __future__ import annotations

import configparser
import copy
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import __version__
from .errors import FitRejectedError, InvalidInputError
from .evolution import EvolutionState, StopRule, fit_blowup, initial_state, run_until
from .profiles import Grid, Parameters, Profile, c1_distance, load_profile
from .selfsim import AmplitudeLaw, self_similar_field, solve_Qeps
from .stationary import critical_constants, solve_Pa, unit_shot, unit_table

SCHEMA = 1


def parse_mass(text: str | float, M: float) -> float:
    """Numbers, or multiples of the critical mass written as 'M', '0.5M' or '1.1*M'."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().replace(" ", "")
    if s.endswith("M"):
        coef = s[:-1].rstrip("*")
        return (float(coef) if coef else 1.0) * M
    return float(s)


@dataclass(frozen=True)
class Scenario:
    N: int = 3
    m: float | None = None
    init: str = "linear"
    scheme: str = "direct"
    n_cells: int = 512
    grading: float | None = None
    tol: float = 1e-6
    dt0: float = 1e-6
    horizon: float = 50.0
    nmax_threshold: float = 1e6
    dt_min: float = 1e-13
    conv_tol: float = 1e-3
    sustain: int = 10
    checkpoint_every: int = 1
    record_every: int = 10

    @property
    def reg_eps(self) -> float:
        if self.scheme.startswith("regularized"):
            _, _, val = self.scheme.partition(":")
            return float(val) if val else 1e-6
        return 0.0

    def grid(self) -> Grid:
        return Grid.graded(self.n_cells, 1.0, float(self.grading or self.N))


def build_initial(sc: Scenario) -> tuple[Parameters, Profile]:
    """Parameters and initial profile for a scenario; non-linear inits fix m themselves."""
    grid = sc.grid()
    kind, _, arg = sc.init.partition(":")
    P = Parameters(sc.N)
    if kind == "linear":
        if sc.m is None:
            raise InvalidInputError("linear initial data needs a mass m")
        return P.with_mass(sc.m), Profile(grid, sc.m * grid.nodes, sc.m)
    if kind == "stationary":
        a = float(arg)
        U = solve_Pa(a, P, x_max=max(2.0, unit_shot(P.q).flat_point / max(a, 1e-12) + 1.0))
        u = U.sample(grid)
        return P.with_mass(u.boundary_value), u
    if kind == "selfsim":
        eps, a0 = (float(t) for t in arg.split(","))
        V = solve_Qeps(eps, P, n_cells=16384)
        u = self_similar_field(V, AmplitudeLaw(a0, eps, P.q), 0.0, grid)
        return P.with_mass(u.boundary_value), u
    if kind == "file":
        u = load_profile(arg, P.q)
        return P.with_mass(u.boundary_value), u
    raise InvalidInputError(f"unknown initial data {sc.init!r}")


# ------------------------------------------------------------------ classification

@dataclass
class ScenarioReport:
    verdict: str
    a_limit: float | None
    T_estimate: float | None
    rate_exponent: float | None
    rate_fit_r2: float | None
    m: float
    m_vs_M: float
    diagnostics: dict
    config: dict
    version: str = __version__
    schema: int = SCHEMA
    timeseries: list = field(default_factory=list, repr=False)
    final: Profile | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        skip = ("timeseries", "final")
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.name not in skip}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def timeseries_csv(self) -> str:
        lines = ["t,nmax,F,dt"]
        lines += [f"{r[0]!r},{r[1]!r},{r[2]!r},{r[3]!r}" for r in self.timeseries]
        return "\n".join(lines) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class _Tracker:
    """Matches the current state to the stationary family and counts sustained proximity."""

    def __init__(self, params: Parameters, grid: Grid, conv_tol: float, sustain: int):
        cc = critical_constants(params.N)
        self.q = params.q
        self.A = cc.A
        self.critical = params.m >= cc.M - conv_tol
        self.grid = grid
        self.conv_tol = conv_tol
        self.sustain = sustain
        self.U1 = unit_table(params.q)
        self.count = 0
        self.best = math.inf
        self.a = math.nan
        self.dist = math.inf

    def stationary(self, a: float) -> Profile:
        vals = self.U1(a * self.grid.nodes)
        vals[0] = 0.0
        return Profile(self.grid, np.maximum.accumulate(vals), a)

    def match(self, u: Profile) -> tuple[float, float]:
        a0 = u.derivative_at_zero
        if self.critical:
            # the family at the critical mass is U_a, a >= A, labelled by the slope at 0
            a = max(a0, self.A)
        else:
            lo, hi = max(0.0, 0.75 * a0), min(self.A, 1.25 * a0 + 1e-9)
            if hi <= lo:
                a = min(a0, self.A)
            else:
                res = minimize_scalar(lambda b: float(np.sum((u.values - self.U1(b * self.grid.nodes)) ** 2)),
                                      bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
                a = float(res.x)
        return a, c1_distance(u, self.stationary(a))

    def __call__(self, state: EvolutionState) -> bool:
        self.a, self.dist = self.match(state.u)
        self.best = min(self.best, self.dist)
        self.count = self.count + 1 if self.dist < self.conv_tol else 0
        return self.count >= self.sustain


def classify(sc: Scenario) -> ScenarioReport:
    params, u0 = build_initial(sc)
    cc = critical_constants(sc.N)
    if sc.scheme == "transformed":
        raise InvalidInputError("classification runs on a direct scheme")
    scheme = "regularized_imex" if sc.reg_eps > 0 else "direct_imex"
    state = initial_state(params, u0, dt=sc.dt0, tol=sc.tol, scheme=scheme, reg_eps=sc.reg_eps)
    tracker = _Tracker(params, u0.grid, sc.conv_tol, sc.sustain)
    stop = StopRule(sc.nmax_threshold, sc.dt_min, sc.record_every)
    trace: dict = {}
    final, rep = run_until(state, sc.horizon, stop, observer=tracker, observe_every=sc.checkpoint_every,
                           trace=trace)
    if rep.stopped_by_observer:
        verdict, a_lim = "converged", tracker.a
    elif rep.blew_up:
        verdict, a_lim = "blew_up", None
    else:
        verdict, a_lim = "undecided", None
    diag = {
        "steps": final.steps, "rejected_steps": final.rejected, "t_final": final.t,
        "nmax_final": trace["nmax"][-1], "nmax_max": max(trace["nmax"]),
        "slope_at_zero_final": final.u.derivative_at_zero, "trigger": rep.trigger,
        "F_initial": final.diagnostics[0].F, "F_final": final.diagnostics[-1].F,
        "matched_a": tracker.a, "c1_to_matched": tracker.dist, "c1_best": tracker.best,
        "sustained_checkpoints": tracker.count, "h_max": u0.grid.h_max,
        "dt_max_accepted": max(r.dt for r in final.diagnostics),
        "smoothing_max": max(r.smoothing for r in final.diagnostics),
    }
    config = {k: v for k, v in asdict(sc).items()}
    config["m"] = params.m
    ts = [(r.t, r.nmax, r.F, r.dt) for r in final.diagnostics]
    return ScenarioReport(verdict, a_lim, rep.T_estimate if rep.blew_up else None, rep.rate_exponent,
                          rep.rate_fit_r2, params.m, params.m - cc.M, diag, config, timeseries=ts, final=final.u)


# ------------------------------------------------------------------ rate fitting

@dataclass(frozen=True)
class RateFit:
    exponent: float
    r2: float
    T_estimate: float


def fit_blowup_rate(series, window: float = 0.1, q: float = 2.0 / 3.0) -> RateFit:
    """Fit nmax ~ C (T - t)^{-beta} over the final growth decade of (t, nmax) pairs."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InvalidInputError("series must be (t, nmax) pairs")
    t, n = arr[:, 0], arr[:, 1]
    if np.ptp(n) == 0:
        raise FitRejectedError("constant series")
    f = fit_blowup(t, n, q, window)
    return RateFit(f.exponent, f.r2, f.T_estimate)


# ------------------------------------------------------------------ sweeps

@dataclass
class SweepTable:
    masses: list
    reports: list
    consistent: bool
    changeover: tuple | None

    def to_csv(self) -> str:
        lines = ["m,m_over_M,verdict,a_limit,T_estimate"]
        for m, r in zip(self.masses, self.reports):
            M = r.m - r.m_vs_M
            lines.append(f"{m!r},{m / M!r},{r.verdict},{_fmt(r.a_limit)},{_fmt(r.T_estimate)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _verdict_consistent(verdicts: list[str]) -> bool:
    seen_blowup = False
    for v in verdicts:
        if v == "blew_up":
            seen_blowup = True
        elif v == "converged":
            if seen_blowup:
                return False
        else:
            return False
    return True


def dichotomy_sweep(params: Parameters, mass_grid, base_init: str = "linear",
                    template: Scenario | None = None, workers: int = 1) -> SweepTable:
    masses = [float(m) for m in mass_grid]
    if masses != sorted(masses):
        raise InvalidInputError("mass grid must be sorted")
    tmpl = template or Scenario(N=params.N)
    scenarios = [replace(tmpl, N=params.N, m=m, init=base_init) for m in masses]
    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(classify, scenarios))
    else:
        reports = [classify(s) for s in scenarios]
    verdicts = [r.verdict for r in reports]
    change = None
    conv = [m for m, v in zip(masses, verdicts) if v == "converged"]
    blow = [m for m, v in zip(masses, verdicts) if v == "blew_up"]
    if conv and blow:
        change = (max(conv), min(blow))
    return SweepTable(masses, reports, _verdict_consistent(verdicts), change)


# ------------------------------------------------------------------ config files

def _read_config(path: str | Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        cp.read_file(fh)
    return cp


def scenario_from_config(path: str | Path) -> tuple[Scenario, list[float] | None]:
    """Parse the line-based config; returns the scenario and an optional mass grid."""
    cp = _read_config(path)
    sec = lambda name: cp[name] if cp.has_section(name) else {}
    p, i, s, th = sec("params"), sec("init"), sec("scheme"), sec("thresholds")
    N = int(p.get("N", 3))
    M = critical_constants(N).M
    kw: dict = {"N": N}
    if "m" in p:
        kw["m"] = parse_mass(p["m"], M)
    if "horizon" in p:
        kw["horizon"] = float(p["horizon"])
    kw["init"] = i.get("profile", i.get("kind", "linear")) if i else "linear"
    if s:
        kw["scheme"] = s.get("name", "direct")
        for key, conv in (("n_cells", int), ("grading", float), ("tol", float), ("dt0", float)):
            if key in s:
                kw[key] = conv(s[key])
        if "horizon" in s:
            kw["horizon"] = float(s["horizon"])
    if th:
        mapping = {"nmax": ("nmax_threshold", float), "nmax_threshold": ("nmax_threshold", float),
                   "dt_min": ("dt_min", float), "conv_tol": ("conv_tol", float),
                   "sustain": ("sustain", int), "checkpoint_every": ("checkpoint_every", int),
                   "record_every": ("record_every", int), "horizon": ("horizon", float)}
        for key, val in th.items():
            if key in mapping:
                name, conv = mapping[key]
                kw[name] = conv(val)
    masses = None
    if "masses" in p:
        masses = [parse_mass(t, M) for t in p["masses"].split(",") if t.strip()]
    return Scenario(**kw), masses
