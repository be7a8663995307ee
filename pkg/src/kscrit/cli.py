"""Command-line entry point: ``kscrit <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evolution as ev
from .experiments import (Scenario, build_initial, classify, dichotomy_sweep, fit_blowup_rate, parse_mass,
                          scenario_from_config)
from .lyapunov import energy_F, energy_F_eps
from .profiles import Grid, Parameters, load_profile, to_csv, to_json
from .selfsim import AmplitudeLaw, critical_band, self_similar_field, solve_Qeps
from .stationary import critical_constants, flat_point_refinement, solve_Pa


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _profile_text(prof, fmt: str) -> str:
    return to_json(prof) if fmt == "json" else to_csv(prof)


def cmd_stationary(args) -> int:
    P = Parameters(args.N)
    U = solve_Pa(args.a, P, x_max=args.x_max, tol=args.tol, n_cells=args.n_cells)
    _emit(_profile_text(U.profile, args.out), args.output)
    meta = {"a": U.a, "max_value": U.max_value, "flat_point": U.flat_point}
    sys.stderr.write(json.dumps({k: (v if math.isfinite(v) else None) for k, v in meta.items()}) + "\n")
    if args.plot:
        from .plotting import plot_profiles
        flats = [U.flat_point] if math.isfinite(U.flat_point) else []
        plot_profiles([(f"U_a, a={args.a:g}", U.profile)], args.plot, flat_points=flats)
    return 0


def cmd_constants(args) -> int:
    out = critical_constants(args.N, args.tol).as_dict()
    if args.refinement:
        out["refinement"] = flat_point_refinement(Parameters(args.N)).as_dict()
    print(json.dumps(out))
    return 0


def cmd_selfsim(args) -> int:
    P = Parameters(args.N)
    V = solve_Qeps(args.eps, P, tol=args.tol, n_cells=max(args.n_cells, 8192))
    if args.a0 is None:
        prof = V.profile
    else:
        law = AmplitudeLaw(args.a0, args.eps, P.q)
        prof = self_similar_field(V, law, args.t, Grid.graded(args.n_cells, 1.0, P.N))
        sys.stderr.write(json.dumps({"T_star": law.T_star, "exact": args.a0 >= V.A_eps}) + "\n")
    _emit(_profile_text(prof, args.out), args.output)
    meta = {"eps": V.eps, "A_eps": V.A_eps, "M_eps": V.M_eps, "concave": V.concave, "K_eps": V.K_eps}
    sys.stderr.write(json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                                 for k, v in meta.items()}) + "\n")
    if args.plot:
        from .plotting import plot_profiles
        plot_profiles([(f"eps={args.eps:g}", prof)], args.plot)
    return 0


def cmd_band(args) -> int:
    eps = [float(t) for t in args.eps_grid.split(",") if t.strip()]
    band = critical_band(Parameters(args.N), eps, args.tol)
    _emit(band.to_csv(), args.output)
    if args.plot:
        from .plotting import plot_band
        plot_band(band, args.plot)
    return 0


def _diag_csv(rows) -> str:
    lines = ["t,nmax,F,dt,bd_residual"]
    lines += [f"{r.t!r},{r.nmax!r},{r.F!r},{r.dt!r},{r.bd_residual!r}" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_evolve(args) -> int:
    N = args.N
    M = critical_constants(N).M
    m = parse_mass(args.m, M) if args.m is not None else None
    sc = Scenario(N=N, m=m, init=args.init, scheme=args.scheme, n_cells=args.n_cells, tol=args.tol,
                  horizon=args.horizon)
    params, u0 = build_initial(sc)
    if args.scheme == "transformed":
        w = ev.theta0(u0, N)
        dt_w = args.dt / N**2
        total = max(1, int(round(args.horizon / N**2 / dt_w)))
        chunk = max(1, total // 200)
        rows = []
        done = 0
        from .profiles import nmax as nm
        while True:
            u = ev.map_w_to_u(w, u0.grid)
            rows.append(ev.DiagRecord(float(N**2 * w.t), nm(u), energy_F(u, params), args.dt,
                                      float(abs(u.values[-1] - params.m))))
            if done >= total:
                break
            k = min(chunk, total - done)
            w = ev.solve_transformed(w, dt_w, k)
            done += k
        final = u
        report = {"blew_up": False, "trigger": "horizon_reached", "t_final": rows[-1].t}
    else:
        scheme = "regularized_imex" if sc.reg_eps > 0 else "direct_imex"
        state = ev.initial_state(params, u0, tol=args.tol, scheme=scheme, reg_eps=sc.reg_eps)
        state, rep = ev.run_until(state, args.horizon, ev.StopRule(record_every=args.record_every))
        rows, final = state.diagnostics, state.u
        report = {"blew_up": rep.blew_up, "trigger": rep.trigger, "t_final": state.t,
                  "T_estimate": rep.T_estimate if rep.blew_up else None,
                  "rate_exponent": rep.rate_exponent}
    _emit(_diag_csv(rows), args.out_csv)
    if args.profile_out:
        Path(args.profile_out).write_text(to_json(final) if args.profile_out.endswith(".json") else to_csv(final))
    sys.stderr.write(json.dumps(report) + "\n")
    if args.plot:
        from .plotting import plot_timeseries
        plot_timeseries([r.t for r in rows], [r.nmax for r in rows], [r.F for r in rows], args.plot)
    return 0


def cmd_energy(args) -> int:
    P = Parameters(args.N)
    u = load_profile(args.csv, P.q)
    out = {"F": energy_F(u, P)}
    if args.eps is not None:
        out["F_eps"] = energy_F_eps(u, P, args.eps)
    print(json.dumps(out))
    return 0


def _write_report_dir(rep, out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(rep.to_json() + "\n")
    (out_dir / f"{stem}_timeseries.csv").write_text(rep.timeseries_csv())
    from .plotting import plot_timeseries
    ts = np.array(rep.timeseries, dtype=float)
    plot_timeseries(ts[:, 0], ts[:, 1], ts[:, 2], out_dir / f"{stem}_timeseries.png",
                    title=f"m/M = {rep.m / (rep.m - rep.m_vs_M):.4g}: {rep.verdict}")


def cmd_classify(args) -> int:
    sc, _ = scenario_from_config(args.config)
    rep = classify(sc)
    print(rep.to_json())
    if args.out_dir:
        _write_report_dir(rep, Path(args.out_dir), "report")
    return 0


def cmd_sweep(args) -> int:
    sc, masses = scenario_from_config(args.config)
    if not masses:
        raise SystemExit("sweep config needs 'masses' in [params]")
    table = dichotomy_sweep(Parameters(sc.N), masses, sc.init, sc, workers=args.workers)
    sys.stdout.write(table.to_csv())
    sys.stderr.write(json.dumps({"consistent": table.consistent, "changeover": table.changeover}) + "\n")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(table.to_csv())
        for i, rep in enumerate(table.reports):
            _write_report_dir(rep, out, f"m{i:02d}")
        from .plotting import plot_sweep
        plot_sweep(table, out / "sweep.png")
    return 0


def cmd_rate_fit(args) -> int:
    import csv
    with open(args.csv) as fh:
        rows = list(csv.DictReader(fh))
    series = [(float(r["t"]), float(r["nmax"])) for r in rows]
    fit = fit_blowup_rate(series, args.window, 2.0 / args.N)
    print(json.dumps({"exponent": fit.exponent, "r2": fit.r2, "T_estimate": fit.T_estimate}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kscrit", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("stationary", help="stationary profile U_a")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--n-cells", type=int, default=2048)
    p.add_argument("--out", choices=("csv", "json"), default="csv")
    p.add_argument("--output", help="write the profile here instead of stdout")
    p.add_argument("--plot", help="PNG path for a figure")
    p.set_defaults(func=cmd_stationary)

    p = sub.add_parser("critical-constants", help="print M, A, M_bar as JSON")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--refinement", action="store_true", help="also report the observed order of A under h -> h/2")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("selfsim", help="self-similar profile or field")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--a0", type=float, default=None)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--n-cells", type=int, default=2048)
    p.add_argument("--out", choices=("csv", "json"), default="csv")
    p.add_argument("--output")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_selfsim)

    p = sub.add_parser("critical-band", help="tabulate V_eps(A+1) over eps")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--eps-grid", default="0.1,0.05,0.02,0.01")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--output")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("evolve", help="time-step the evolution problem")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--m", default=None, help="mass, e.g. 0.6 or 0.5M")
    p.add_argument("--init", default="linear")
    p.add_argument("--scheme", default="direct")
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--n-cells", type=int, default=512)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--dt", type=float, default=1e-4, help="fixed step (transformed scheme, u-time units)")
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--profile-out", default=None)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("energy", help="F (and F_eps) of a profile file")
    p.add_argument("--csv", required=True)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--eps", type=float, default=None)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("classify", help="classify one scenario from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="classify a grid of masses")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rate-fit", help="blow-up rate fit from a t,nmax CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--window", type=float, default=0.1)
    p.set_defaults(func=cmd_rate_fit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
