"""Grids, monotone profiles, the admissible class Y_m and the functional N[u].

A profile is a nondecreasing function sampled on a graded grid over
[0, x_max] together with its slope at the origin.  The slope is stored
separately because admissible profiles are C^1 but not C^2 at x = 0
(u'(x) = a - a^{1+q} x^q / q + ...), so one-sided differences converge
slowly there.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

DU0_RTOL = 1e-3
ENDPOINT_RTOL = 1e-12


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered nodes on [0, x_max], usually graded as x_max * (i/n)^p."""

    nodes: np.ndarray
    grading_exponent: float
    n_cells: int

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidInputError("a grid needs at least 2 nodes")
        if nodes[0] != 0.0:
            raise InvalidInputError("first node must be 0")
        if not np.all(np.diff(nodes) > 0):
            raise InvalidInputError("nodes must be strictly increasing")
        if self.n_cells != nodes.size - 1:
            raise InvalidInputError("n_cells must equal len(nodes) - 1")

    @classmethod
    def graded(cls, n_cells: int, x_max: float = 1.0, p: float = 3.0) -> "Grid":
        if n_cells < 1 or x_max <= 0 or p <= 0:
            raise InvalidInputError("need n_cells >= 1, x_max > 0, p > 0")
        i = np.arange(n_cells + 1, dtype=float)
        nodes = x_max * (i / n_cells) ** p
        nodes[-1] = x_max
        return cls(nodes, float(p), int(n_cells))

    @classmethod
    def from_nodes(cls, nodes) -> "Grid":
        """Wrap arbitrary nodes; the grading exponent is inferred from the first cell."""
        nodes = np.asarray(nodes, dtype=float)
        n = nodes.size - 1
        p = math.nan
        if n >= 2 and nodes[1] > 0:
            p = math.log(nodes[1] / nodes[-1]) / math.log(1.0 / n)
        elif n == 1:
            p = 1.0
        return cls(nodes, p, n)

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h_max(self) -> float:
        return float(np.max(self.widths))

    def same_as(self, other: "Grid") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)


@dataclass(frozen=True, eq=False)
class Profile:
    """Nondecreasing samples with u(0) = 0 and a stored slope at the origin.

    Construction checks the invariants; pass ``check=False`` only to build
    deliberately invalid data for diagnostics (see :func:`validate_Ym`).
    """

    grid: Grid
    values: np.ndarray
    derivative_at_zero: float
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "derivative_at_zero", float(self.derivative_at_zero))
        if vals.shape != self.grid.nodes.shape:
            raise InvalidInputError("values must have one entry per node")
        if not self.check:
            return
        if vals[0] != 0.0:
            raise InvalidInputError("profile must vanish at x = 0")
        if np.any(np.diff(vals) < 0):
            raise InvalidInputError("profile must be nondecreasing")
        if not math.isfinite(self.derivative_at_zero) or self.derivative_at_zero < 0:
            raise InvalidInputError("derivative_at_zero must be finite and >= 0")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def boundary_value(self) -> float:
        return float(self.values[-1])

    def derivative(self) -> np.ndarray:
        return derivative(self)

    def scaled(self, lam: float) -> "Profile":
        return Profile(self.grid, lam * self.values, lam * self.derivative_at_zero)


@dataclass(frozen=True)
class Parameters:
    """Space dimension N >= 3, exponent q = 2/N and boundary mass m."""

    N: int
    m: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise InvalidInputError("N must be an integer >= 3")
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise InvalidInputError("m must be finite and >= 0")

    @property
    def q(self) -> float:
        return 2.0 / self.N

    def with_mass(self, m: float) -> "Parameters":
        return Parameters(self.N, m)


def _check_grid(u: Profile) -> None:
    if u.grid.nodes.size < 2:
        raise InvalidInputError("profile grid must have at least 2 nodes")


def nmax(u: Profile) -> float:
    """sup_{x>0} u(x)/x, with the slope at 0 standing in for the first cell."""
    _check_grid(u)
    x = u.grid.nodes
    ratios = u.values[1:] / x[1:]
    return float(max(u.derivative_at_zero, np.max(ratios)))


def derivative(u: Profile) -> np.ndarray:
    """Nodal derivative: stored slope at 0, central differences inside, one-sided at x_max."""
    x = u.grid.nodes
    v = u.values
    n = x.size
    d = np.empty(n)
    d[0] = u.derivative_at_zero
    if n == 2:
        d[1] = (v[1] - v[0]) / (x[1] - x[0])
        return d
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    d[1:-1] = (hm**2 * v[2:] - hp**2 * v[:-2] + (hp**2 - hm**2) * v[1:-1]) / (hm * hp * (hm + hp))
    # second-order one-sided at the right end
    h1 = x[-1] - x[-2]
    h2 = x[-2] - x[-3]
    s = h1 + h2
    d[-1] = (v[-1] * (2 * h1 + h2) / (h1 * s) - v[-2] * s / (h1 * h2) + v[-3] * h1 / (h2 * s))
    return d


def c1_distance(u: Profile, v: Profile) -> float:
    """max|u - v| + max|u' - v'| on a shared grid."""
    if not u.grid.same_as(v.grid):
        raise InvalidInputError("profiles live on different grids")
    return float(np.max(np.abs(u.values - v.values)) + np.max(np.abs(derivative(u) - derivative(v))))


@dataclass(frozen=True)
class YmReport:
    origin: bool
    endpoint: bool
    monotone: bool
    slope_consistent: bool
    details: dict

    @property
    def passed(self) -> bool:
        return self.origin and self.endpoint and self.monotone and self.slope_consistent

    @property
    def failures(self) -> list[str]:
        names = ("origin", "endpoint", "monotone", "slope_consistent")
        return [k for k in names if not getattr(self, k)]


def validate_Ym(u: Profile, m: float, *, du0_rtol: float = DU0_RTOL,
                endpoint_rtol: float = ENDPOINT_RTOL) -> YmReport:
    """Check membership of a sampled profile in Y_m, one flag per condition."""
    x = u.grid.nodes
    v = u.values
    origin = bool(v[0] == 0.0)
    end_err = abs(v[-1] - m)
    endpoint = bool(end_err <= endpoint_rtol * max(abs(m), 1.0))
    drops = np.flatnonzero(np.diff(v) < 0)
    monotone = drops.size == 0
    chord = (v[1] - v[0]) / (x[1] - x[0])
    scale = max(abs(u.derivative_at_zero), abs(v[-1]) / x[-1], 1e-300)
    slope_gap = abs(chord - u.derivative_at_zero)
    slope_ok = bool(math.isfinite(u.derivative_at_zero) and slope_gap <= du0_rtol * scale)
    details = {"endpoint_error": float(end_err), "decreasing_pairs": drops.tolist(),
               "first_chord": float(chord), "slope_gap": float(slope_gap)}
    return YmReport(origin, endpoint, monotone, slope_ok, details)


def slope_at_zero(x: np.ndarray, v: np.ndarray, q: float) -> float:
    """Estimate u'(0) from the first two nonzero nodes.

    u(x)/x = a - c x^q + ..., so the ratio is extrapolated linearly in x^q.
    """
    r1, r2 = v[1] / x[1], v[2] / x[2]
    t1, t2 = x[1] ** q, x[2] ** q
    return float(max((r1 * t2 - r2 * t1) / (t2 - t1), 0.0))


# ---------------------------------------------------------------- serialization

def to_csv(u: Profile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "u"])
    for xi, vi in zip(u.grid.nodes, u.values):
        w.writerow([repr(float(xi)), repr(float(vi))])
    return buf.getvalue()


def from_csv(text: str, q: float | None = None) -> Profile:
    """Read an ``x,u`` table.  The slope at 0 is not stored in CSV and is re-estimated."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["x", "u"]:
        raise InvalidInputError("CSV header must be 'x,u'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()], dtype=float)
    grid = Grid.from_nodes(data[:, 0])
    vals = data[:, 1]
    if vals.size >= 3:
        du0 = slope_at_zero(grid.nodes, vals, q if q is not None else 1.0)
    else:
        du0 = vals[1] / grid.nodes[1]
    return Profile(grid, vals, du0)


def to_json(u: Profile) -> str:
    g = u.grid
    obj = {
        "grid": {"x_max": g.x_max, "grading_exponent": g.grading_exponent,
                 "n_cells": g.n_cells, "nodes": [float(t) for t in g.nodes]},
        "values": [float(t) for t in u.values],
        "du0": u.derivative_at_zero,
    }
    return json.dumps(obj)


def from_json(text: str) -> Profile:
    obj = json.loads(text)
    g = obj["grid"]
    grid = Grid(np.array(g["nodes"], dtype=float), float(g["grading_exponent"]), int(g["n_cells"]))
    return Profile(grid, np.array(obj["values"], dtype=float), float(obj["du0"]))


def save_profile(u: Profile, path: str | Path) -> None:
    path = Path(path)
    text = to_json(u) if path.suffix.lower() == ".json" else to_csv(u)
    path.write_text(text)


def load_profile(path: str | Path, q: float | None = None) -> Profile:
    path = Path(path)
    text = path.read_text()
    return from_json(text) if path.suffix.lower() == ".json" else from_csv(text, q)
