"""Command-line front end: ``ecodyn <command> [options]``.

Without ``--out`` the primary artifact of a command goes to stdout. With
``--out DIR`` every artifact is written to ``DIR`` together with
``manifest.json`` holding the resolved configuration and output digests.

Exit codes: 0 success, 1 numeric failure (JSON error on stdout), 2 usage
or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from . import io as eio
from .bifurcation import NoHopf, NotApplicable, region_grid, scan_parameter
from .control import ControlProblem, solve
from .equilibria import PreconditionError, all_equilibria, classify_nullclines, predator_nullcline, \
    prey_nullcline
from .model import DomainError, ModelParams, State
from .parallel import default_workers
from .sde import NoiseParams, PathConfig, simulate_ensemble
from .simulate import IntegrationFailure, integrate, vector_field_grid
from .stats import mann_whitney_u, summarize
from .stochastic_control import StochControlConfig, calibrate_sigma, ensemble_means, evaluate, optimize

NUMERIC_ERRORS = (IntegrationFailure, PreconditionError, NotApplicable, NoHopf, DomainError,
                  ArithmeticError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# --- config loading ------------------------------------------------------------------------

def load_params(path) -> ModelParams:
    data = eio.load_json(path, "params")
    data = {"alpha": 0.0, "xi": 0.0, **data}
    try:
        return ModelParams.from_dict(data)
    except DomainError as exc:
        raise eio.ConfigError(f"{path}: {exc}") from exc


def load_noise(path) -> NoiseParams:
    if path is None:
        return NoiseParams()
    try:
        return NoiseParams.from_dict(eio.load_json(path, "noise"))
    except ValueError as exc:
        if isinstance(exc, eio.ConfigError):
            raise
        raise eio.ConfigError(f"{path}: {exc}") from exc


def load_stoch_config(path):
    if path is None:
        return StochControlConfig(), None
    data = dict(eio.load_json(path, "stoch_control"))
    target = data.pop("calibrate_mean", None)
    try:
        return StochControlConfig.from_dict(data), target
    except (TypeError, ValueError) as exc:
        raise eio.ConfigError(f"{path}: {exc}") from exc


def _grid(text: str):
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected NxM, for example 20x20")
    if nx < 2 or ny < 2:
        raise argparse.ArgumentTypeError("grid sizes must be at least 2")
    return nx, ny


# --- commands ------------------------------------------------------------------------------
# Each command returns (config, seed, {filename: text}, primary filename).

def cmd_simulate(a):
    p = load_params(a.params)
    traj = integrate((a.x0, a.y0), p, a.t_end, a.dt, stride=a.stride)
    files = {"trajectory.csv": eio.to_csv(["t", "x", "y"], ((t, s[0], s[1]) for t, s in
                                                          zip(traj.times, traj.states)))}
    if traj.events:
        files["events.json"] = eio.to_json([{"time": t, "event": e} for t, e in traj.events])
    if a.phase_grid:
        nx, ny = a.phase_grid
        xr = (0.0, float(np.max(traj.x)) * 1.1 or 1.0)
        yr = (0.0, float(np.max(traj.y)) * 1.1 or 1.0)
        files["phase_grid.csv"] = eio.to_csv(["x", "y", "dx", "dy"], vector_field_grid(p, xr, yr, nx, ny))
    cfg = {"params": p.to_dict(), "x0": a.x0, "y0": a.y0, "t_end": a.t_end, "dt": a.dt,
           "stride": a.stride, "phase_grid": a.phase_grid}
    return cfg, None, files, "trajectory.csv"


def cmd_nullclines(a):
    p = load_params(a.params)
    xs = np.linspace(p.gamma / a.samples, p.gamma, a.samples)
    rows = []
    for x in xs:
        try:
            yp = float(prey_nullcline(x, p))
        except ZeroDivisionError:
            yp = float("nan")
        rows.append((x, yp, float(predator_nullcline(x, p))))
    files = {"nullclines.csv": eio.to_csv(["x", "y_prey", "y_pred"], rows),
             "geometry.json": eio.to_json(classify_nullclines(p).to_dict())}
    return {"params": p.to_dict(), "samples": a.samples}, None, files, "nullclines.csv"


def cmd_equilibria(a):
    p = load_params(a.params)
    reports = all_equilibria(p)
    files = {"equilibria.json": eio.to_json([r.to_dict() for r in reports])}
    return {"params": p.to_dict()}, None, files, "equilibria.json"


def cmd_bifurcate(a):
    p = load_params(a.params)
    scan = scan_parameter(p, a.vary, a.from_, a.to, a.steps, workers=a.workers)
    branches = eio.to_csv(["param", "label", "x", "y", "stability"], scan.branches)
    files = {"branches.csv": branches, "events.json": eio.to_json(scan.events)}
    cfg = {"params": p.to_dict(), "vary": a.vary, "from": a.from_, "to": a.to, "steps": a.steps}
    return cfg, None, files, "events.json"


def cmd_regions(a):
    p = load_params(a.params)
    cells = region_grid(p, a.alpha_max, a.xi_max, a.resolution, a.workers)
    header = ["alpha", "xi", "base_region", "food_region", "phi1", "phi2", "phi3", "phi4",
              "boundary", "n_stable_interior", "e2_exists"]
    rows = ((al, xi, lab.base_region, lab.food_region, *lab.curve_values, lab.boundary,
             lab.n_stable_interior, e2) for al, xi, lab, e2 in cells)
    files = {"regions.csv": eio.to_csv(header, rows),
             "regions_meta.json": eio.to_json({"sign_pattern": "reconstructed from curve signs",
                                               "a2_a3_split": "count of stable interior equilibria"})}
    cfg = {"params": p.to_dict(), "alpha_max": a.alpha_max, "xi_max": a.xi_max, "resolution": a.resolution}
    return cfg, None, files, "regions.csv"


def cmd_control(a):
    p = load_params(a.params)
    prob = ControlProblem(p, a.mode, State(a.x0, a.y0), State(a.xt, a.yt), (a.umin, a.umax))
    sol = solve(prob, a.intervals)
    rows = []
    for k in range(sol.n_intervals + 1):
        u = sol.controls[min(k, sol.n_intervals - 1)] if sol.n_intervals else float("nan")
        sw = sol.switching[k] if k < sol.switching.size else float("nan")
        rows.append((sol.t_grid[k], sol.states[k, 0], sol.states[k, 1], u, sw))
    out = sol.to_dict()
    out["history"] = sol.history
    files = {"control.json": eio.to_json(out),
             "control.csv": eio.to_csv(["t", "x", "y", "u", "switching"], rows)}
    cfg = {"params": p.to_dict(), "mode": a.mode, "start": [a.x0, a.y0], "target": [a.xt, a.yt],
           "bounds": [a.umin, a.umax], "intervals": a.intervals}
    return cfg, None, files, "control.json"


def _hitting_rows(res):
    return ((s["path"], s["hitting_time"], s["censored"], s["clamps"]) for s in res.summaries())


def _trajectory_rows(trajs):
    for i, tr in enumerate(trajs):
        for t, s in zip(tr.times, tr.states):
            yield i, t, s[0], s[1]


def cmd_sde(a):
    p = load_params(a.params)
    n = load_noise(a.noise)
    cfg = PathConfig(a.dt, a.t_max, a.seed, a.x_target)
    res = simulate_ensemble((a.x0, a.y0), p, n, cfg, a.paths, record=a.record, workers=a.workers)
    files = {"hitting_times.csv": eio.to_csv(["path", "hitting_time", "censored", "clamps"], _hitting_rows(res))}
    if a.record:
        files["trajectories.csv"] = eio.to_csv(["path", "t", "x", "y"], _trajectory_rows(res.trajectories))
    if res.warnings:
        files["warnings.json"] = eio.to_json(res.warnings)
    conf = {"params": p.to_dict(), "noise": n.to_dict(), "paths": a.paths, "dt": a.dt, "t_max": a.t_max,
            "x_target": a.x_target, "start": [a.x0, a.y0], "record": a.record}
    return conf, a.seed, files, "hitting_times.csv"


def cmd_stoch_control(a):
    p = load_params(a.params)
    n = load_noise(a.noise)
    cfg, target = load_stoch_config(a.config)
    s0 = (a.x0, a.y0)
    result = {}
    if target is not None:
        sigma, mean, trace = calibrate_sigma(cfg, p, n, s0, a.seed, target, workers=a.workers)
        n = n.with_sigma(sigma)
        result["calibration"] = {"target": target, "sigma": sigma, "baseline_mean": mean, "trace": trace}
    opt = optimize(cfg, p, n, s0, a.seed, workers=a.workers)
    ev = evaluate(opt.schedule, cfg, p, n, s0, a.seed, workers=a.workers)
    result.update({"schedule": opt.schedule.to_dict(), "history": opt.history, "status": opt.status,
                   "metadata": opt.metadata, "baseline": list(ev.baseline),
                   "cost_controlled": ev.cost_controlled, "cost_uncontrolled": ev.cost_uncontrolled,
                   "mean_controlled": float(np.mean(ev.controlled.hitting_times)),
                   "mean_uncontrolled": float(np.mean(ev.uncontrolled.hitting_times)),
                   "censored_controlled": ev.controlled.censored_fraction,
                   "censored_uncontrolled": ev.uncontrolled.censored_fraction,
                   "unreliable": ev.unreliable})
    if not ev.unreliable:
        result["rank_test"] = mann_whitney_u(ev.controlled.uncensored, ev.uncontrolled.uncensored).to_dict()
    head = ["path", "hitting_time", "censored", "clamps"]
    files = {"stoch_control.json": eio.to_json(result),
             "hitting_controlled.csv": eio.to_csv(head, _hitting_rows(ev.controlled)),
             "hitting_uncontrolled.csv": eio.to_csv(head, _hitting_rows(ev.uncontrolled)),
             "trajectories_controlled.csv": eio.to_csv(["path", "t", "x", "y"],
                                                       _trajectory_rows(ev.controlled.trajectories)),
             "ensemble_means.csv": eio.to_csv(["t", "x_mean", "y_mean", "alpha", "xi"],
                                              ensemble_means(ev.controlled, opt.schedule, cfg.dt))}
    conf = {"params": p.to_dict(), "noise": n.to_dict(), "config": cfg.to_dict(), "calibrate_mean": target,
            "start": list(s0)}
    return conf, a.seed, files, "stoch_control.json"


def _hist_rows(st):
    edges, counts = st.histogram
    return ((edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts))


def cmd_stats(a):
    vc, cc = eio.read_hitting_times(a.controlled)
    vu, cu = eio.read_hitting_times(a.uncontrolled)
    sc, su = summarize(vc, cc), summarize(vu, cu)
    test = mann_whitney_u(sc.samples, su.samples)
    out = {"stats_controlled": sc.to_dict(), "stats_uncontrolled": su.to_dict(), "rank_test": test.to_dict()}
    box = [("controlled", *sc.five_number), ("uncontrolled", *su.five_number)]
    files = {"stats.json": eio.to_json(out),
             "hist_controlled.csv": eio.to_csv(["left", "right", "count"], _hist_rows(sc)),
             "hist_uncontrolled.csv": eio.to_csv(["left", "right", "count"], _hist_rows(su)),
             "box.csv": eio.to_csv(["arm", "min", "q1", "median", "q3", "max"], box)}
    return {"controlled": a.controlled, "uncontrolled": a.uncontrolled}, None, files, "stats.json"


def cmd_repro(a):
    from .repro import CASES, run_case
    cases = list(CASES) if a.case == "all" else [a.case]
    results = [run_case(c, workers=a.workers, update_golden=a.update_golden) for c in cases]
    for r in results:
        for c in r.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {r.case}: {c.name}", file=sys.stderr)
    out = [r.to_dict() for r in results]
    files = {"repro.json": eio.to_json(out if len(out) > 1 else out[0])}
    a._repro_failed = not all(r.passed for r in results)
    return {"case": a.case, "update_golden": a.update_golden}, None, files, "repro.json"


# --- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .repro import CASES
    ap = _Parser(prog="ecodyn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ecodyn {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, params=True, seed=False):
        if params:
            sp.add_argument("--params", required=True, help="JSON file of model parameters")
        sp.add_argument("--out", help="directory for artifacts and manifest.json")
        sp.add_argument("--workers", type=int, default=default_workers(), help="process pool size")
        if seed:
            sp.add_argument("--seed", type=int, required=True, help="root seed of all random streams")

    sp = sub.add_parser("simulate", help="deterministic RK4 trajectory")
    common(sp)
    sp.add_argument("--x0", type=float, required=True)
    sp.add_argument("--y0", type=float, required=True)
    sp.add_argument("--t-end", type=float, required=True)
    sp.add_argument("--dt", type=float, default=1e-2)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--phase-grid", type=_grid, help="also emit vector field on an NxM grid")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("nullclines", help="sampled prey and predator nullclines")
    common(sp)
    sp.add_argument("--samples", type=int, default=200)
    sp.set_defaults(func=cmd_nullclines)

    sp = sub.add_parser("equilibria", help="all equilibria with stability")
    common(sp)
    sp.set_defaults(func=cmd_equilibria)

    sp = sub.add_parser("bifurcate", help="one-parameter equilibrium scan")
    common(sp)
    sp.add_argument("--vary", required=True, choices=["gamma", "alpha", "xi", "eps", "delta", "m", "omega"])
    sp.add_argument("--from", dest="from_", type=float, required=True)
    sp.add_argument("--to", type=float, required=True)
    sp.add_argument("--steps", type=int, default=200)
    sp.set_defaults(func=cmd_bifurcate)

    sp = sub.add_parser("regions", help="food-region labels on an (alpha, xi) grid")
    common(sp)
    sp.add_argument("--alpha-max", type=float, required=True)
    sp.add_argument("--xi-max", type=float, required=True)
    sp.add_argument("--resolution", type=int, default=200)
    sp.set_defaults(func=cmd_regions)

    sp = sub.add_parser("control", help="deterministic minimum-time food control")
    common(sp)
    sp.add_argument("--mode", choices=["quality", "quantity"], required=True)
    sp.add_argument("--x0", type=float, required=True)
    sp.add_argument("--y0", type=float, required=True)
    sp.add_argument("--xt", type=float, required=True)
    sp.add_argument("--yt", type=float, required=True)
    sp.add_argument("--umin", type=float, default=0.0)
    sp.add_argument("--umax", type=float, default=2.0)
    sp.add_argument("--intervals", type=int, default=100)
    sp.set_defaults(func=cmd_control)

    sp = sub.add_parser("sde", help="jump-diffusion hitting-time ensemble")
    common(sp, seed=True)
    sp.add_argument("--noise", help="JSON file of noise parameters")
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--x-target", type=float, required=True)
    sp.add_argument("--x0", type=float, default=50.0)
    sp.add_argument("--y0", type=float, default=10.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--t-max", type=float, default=20.0)
    sp.add_argument("--record", type=int, default=10, help="number of leading paths to dump")
    sp.set_defaults(func=cmd_sde)

    sp = sub.add_parser("stoch-control", help="stochastic time-optimal food schedule")
    common(sp, seed=True)
    sp.add_argument("--noise", help="JSON file of noise parameters")
    sp.add_argument("--config", help="JSON file of optimizer settings")
    sp.add_argument("--x0", type=float, default=50.0)
    sp.add_argument("--y0", type=float, default=10.0)
    sp.set_defaults(func=cmd_stoch_control)

    sp = sub.add_parser("stats", help="hitting-time summaries and rank test")
    common(sp, params=False)
    sp.add_argument("--controlled", required=True)
    sp.add_argument("--uncontrolled", required=True)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("repro", help="run a named acceptance case against golden files")
    common(sp, params=False)
    sp.add_argument("case", choices=[*CASES, "all"])
    sp.add_argument("--update-golden", action="store_true")
    sp.set_defaults(func=cmd_repro)
    return ap


def _error(kind: str, exc: BaseException):
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.workers < 1:
        print("ecodyn: error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        config, seed, files, primary = args.func(args)
    except eio.ConfigError as exc:
        print(f"ecodyn: error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        _error("numeric_failure", exc)
        return 1
    if args.out:
        sink = eio.OutputSink()
        for name, text in files.items():
            sink.add(name, text)
        sink.write(args.out, {"command": args.command, "argv": argv, "config": config, "seed": seed,
                              "version": __version__, "schema_version": eio.SCHEMA_VERSION})
    else:
        sys.stdout.write(files[primary])
    return 1 if getattr(args, "_repro_failed", False) else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
