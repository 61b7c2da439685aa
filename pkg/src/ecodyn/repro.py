"""Named end-to-end reproduction cases with golden-file comparison.

Each case returns a result with its checks and a flat ``outputs`` mapping
of numbers. ``compare_golden`` matches those numbers against the copy
committed under ``ecodyn/golden``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .bifurcation import (Kind, curve_values, label_consistent, region_grid,
                          saddle_node_xi, saddle_node_xi_exact, scan_parameter, transcritical_xi,
                          transcritical_xi_exact)
from .control import ControlProblem, solve
from .equilibria import axial_equilibria, interior_equilibria
from .model import ModelParams, State
from .sde import NoiseParams
from .simulate import detect_limit_cycle, integrate
from .stats import mann_whitney_u, summarize
from .stochastic_control import StochControlConfig, calibrate_sigma, evaluate, optimize

GOLDEN_RTOL = 1e-6
GOLDEN_ATOL = 1e-9

BIF_PARAMS = dict(gamma=1.0, alpha=1.0, xi=0.0, eps=0.5, delta=8.0, m=6.0, omega=4.0)
HOPF_PARAMS = dict(gamma=10.0, alpha=0.1, xi=0.45, delta=0.45, m=0.28, omega=0.01)
QUALITY_PARAMS = dict(gamma=8.0, alpha=1.0, xi=0.1, eps=0.1, delta=0.96, m=0.3, omega=0.1)
QUANTITY_PARAMS = dict(gamma=10.0, alpha=0.2, xi=1.0, eps=0.1, delta=0.96, m=0.3, omega=0.01)
STOCH_PARAMS = dict(gamma=10.0, alpha=0.0, xi=0.0, eps=0.1, delta=11.0, m=5.05, omega=0.1)
REGION_SETS = {
    "R1": (dict(gamma=4.0, alpha=0.0, xi=0.0, eps=1.0, delta=8.0, m=1.7, omega=0.9), 4.0, 1.0),
    "R2": (dict(gamma=2.0, alpha=0.0, xi=0.0, eps=0.5, delta=1.0, m=0.35, omega=0.04), 2.0, 2.0),
    "R3": (dict(gamma=24.0, alpha=0.0, xi=0.0, eps=0.16, delta=8.0, m=1.0, omega=0.15), 4.0, 1.0),
}
STOCH_SEED = 2024
STOCH_TARGET_MEAN = 2.23


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    expected: object = None
    tolerance: object = None

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": self.value,
                "expected": self.expected, "tolerance": self.tolerance}


@dataclass
class CaseResult:
    case: str
    checks: list
    outputs: dict
    runtime_s: float = 0.0
    budget_s: float | None = None
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {"case": self.case, "passed": self.passed, "runtime_s": self.runtime_s,
                "budget_s": self.budget_s, "checks": [c.to_dict() for c in self.checks],
                "outputs": self.outputs}


def _close(value, expected, tol):
    return Check("", abs(value - expected) <= tol, float(value), float(expected), tol)


def _named(name, check):
    check.name = name
    return check


# --- cases ----------------------------------------------------------------------------------

def case_transcritical(workers=1):
    p = ModelParams(**BIF_PARAMS)
    exact = transcritical_xi_exact(p)
    bp = transcritical_xi(p)
    scan = scan_parameter(p, "xi", 2.0, 4.0, 200, workers=workers)
    ev = [e for e in scan.events if e["equilibrium"] == "E1" and e["type"] == "stability_change"]
    checks = [
        _named("exact rational xi* = 2.8", Check("", abs(float(exact) - 2.8) <= 1e-12, str(exact), "14/5", 1e-12)),
        _named("analytic xi* = 2.8", _close(bp.value, 2.8, 1e-12)),
        _named("Sotomayor conditions hold", Check("", bp.valid, bp.valid, True)),
    ]
    if ev:
        lo, hi = ev[0]["bracket"]
        checks.append(_named("scan brackets xi* within 1e-3",
                             Check("", lo - 1e-3 <= 2.8 <= hi + 1e-3 and abs(ev[0]["value"] - 2.8) <= 1e-3,
                                   ev[0]["value"], 2.8, 1e-3)))
    else:
        checks.append(Check("scan brackets xi* within 1e-3", False, None, 2.8, 1e-3))
    outputs = {"xi_star": bp.value, "scan_event": ev[0]["value"] if ev else None,
               "WT_DH_xi_V": bp.transversality["WT_DH_xi_V"], "WT_D2H_VV": bp.transversality["WT_D2H_VV"]}
    return checks, outputs, 5.0


def case_saddle_node(workers=1):
    p = ModelParams(**BIF_PARAMS)
    exact = saddle_node_xi_exact(p)
    bp = saddle_node_xi(p)

    def e2(xi):
        return any(r.kind is Kind.PREY_FREE for r in axial_equilibria(p.with_(xi=xi)))

    above = [3.0 + d for d in (1e-6, 1e-3, 0.1, 1.0)]
    below = [3.0 - d for d in (1e-6, 1e-3, 0.1, 1.0)]
    checks = [
        _named("exact xi* = m/(delta - m alpha) = 3", Check("", abs(float(exact) - 3.0) <= 1e-12, str(exact), "3", 1e-12)),
        _named("analytic xi* = 3", _close(bp.value, 3.0, 1e-12)),
        _named("E2 exists for xi > 3", Check("", all(e2(x) for x in above), above, True)),
        _named("E2 absent for xi < 3", Check("", not any(e2(x) for x in below), below, False)),
    ]
    outputs = {"xi_star": bp.value, "WT_DH_xi_V": bp.transversality["WT_DH_xi_V"],
               "WT_D2H_VV": bp.transversality["WT_D2H_VV"]}
    return checks, outputs, 5.0


def hopf_run(eps: float):
    p = ModelParams(eps=eps, **HOPF_PARAMS)
    eqs = interior_equilibria(p)
    if not eqs:
        return None, None
    E = eqs[0].location
    traj = integrate((1.05 * E.x, E.y), p, 5000.0, 1e-2)
    return detect_limit_cycle(traj), eqs[0]


def case_hopf(workers=1):
    c35, e35 = hopf_run(0.35)
    c40, e40 = hopf_run(0.40)
    checks = [
        Check("limit cycle at eps = 0.35", c35 is not None, None if c35 is None else c35.period, "cycle"),
        Check("no limit cycle at eps = 0.40", c40 is None, None if c40 is None else c40.period, None),
    ]
    outputs = {"period_035": c35.period if c35 else None, "amplitude_035": c35.amplitude if c35 else None,
               "xstar_035": e35.location.x, "xstar_040": e40.location.x}
    return checks, outputs, 60.0


def _control_case(kind, params, reference, intervals=100):
    p = ModelParams(**params)
    pb = ControlProblem(p, kind, State(5.0, 2.0), State(1.0, 4.0), (0.0, 2.0))
    sol = solve(pb, intervals)
    checks = [
        _named(f"T* = {reference} +/- 10%", Check("", abs(sol.optimal_time - reference) <= 0.1 * reference,
                                                 sol.optimal_time, reference, 0.1 * reference)),
        Check("solver converged", sol.converged, sol.converged, True),
        Check("endpoint error < 1e-4", sol.endpoint_error < 1e-4, sol.endpoint_error, 0.0, 1e-4),
    ]
    outputs = {"optimal_time": sol.optimal_time, "max_defect": sol.max_defect,
               "converged": float(sol.converged)}
    return checks, outputs, 300.0, sol


def case_det_control_quality(workers=1):
    checks, outputs, budget, sol = _control_case("quality", QUALITY_PARAMS, 3.29)
    return checks, outputs, budget


def case_det_control_quantity(workers=1):
    checks, outputs, budget, sol = _control_case("quantity", QUANTITY_PARAMS, 2.30)
    return checks, outputs, budget


def stoch_experiment(workers=1, seed=STOCH_SEED, cfg: StochControlConfig | None = None,
                     noise: NoiseParams | None = None, target_mean: float | None = STOCH_TARGET_MEAN):
    """Calibrate sigma on the baseline arm, optimize, then evaluate both arms."""
    p = ModelParams(**STOCH_PARAMS)
    cfg = StochControlConfig() if cfg is None else cfg
    noise = NoiseParams() if noise is None else noise
    s0 = (50.0, 10.0)
    calib = None
    if target_mean is not None:
        sigma, mean, trace = calibrate_sigma(cfg, p, noise, s0, seed, target_mean, workers=workers)
        noise = noise.with_sigma(sigma)
        calib = {"sigma": sigma, "baseline_mean": mean, "trace": trace}
    opt = optimize(cfg, p, noise, s0, seed, workers=workers)
    ev = evaluate(opt.schedule, cfg, p, noise, s0, seed, workers=workers)
    test = mann_whitney_u(ev.controlled.uncensored, ev.uncontrolled.uncensored)
    return {"params": p, "cfg": cfg, "noise": noise, "calibration": calib, "opt": opt, "eval": ev,
            "rank_test": test}


def case_stoch_control(workers=1):
    r = stoch_experiment(workers)
    ev = r["eval"]
    mc = float(np.mean(ev.controlled.hitting_times))
    mu = float(np.mean(ev.uncontrolled.hitting_times))
    test = r["rank_test"]
    checks = [
        Check("(a) controlled mean < uncontrolled mean", mc < mu, mc, mu),
        Check("(b) two-sided Mann-Whitney p < 1e-4", test.p_value < 1e-4, test.p_value, 1e-4),
        Check("(c) calibrated uncontrolled mean 2.23 +/- 0.05", abs(mu - 2.23) <= 0.05, mu, 2.23, 0.05),
        Check("(c) controlled mean < 2.0", mc < 2.0, mc, 2.0),
        Check("statistics reliable (censoring <= 20%)", not ev.unreliable,
              max(ev.controlled.censored_fraction, ev.uncontrolled.censored_fraction), 0.2),
        Check("schedule within bounds", r["opt"].schedule.within(r["cfg"]), True, True),
    ]
    sc, su = summarize(ev.controlled.uncensored), summarize(ev.uncontrolled.uncensored)
    outputs = {"sigma": r["calibration"]["sigma"], "mean_controlled": mc, "mean_uncontrolled": mu,
               "ci_controlled_lo": sc.ci95[0], "ci_controlled_hi": sc.ci95[1],
               "ci_uncontrolled_lo": su.ci95[0], "ci_uncontrolled_hi": su.ci95[1],
               "p_value": test.p_value, "sweeps": float(len(r["opt"].history) - 1)}
    return checks, outputs, 900.0


def region_check(name, workers=1, resolution=200):
    params, amax, xmax = REGION_SETS[name]
    p = ModelParams(**params)
    rows = region_grid(p, amax, xmax, resolution, workers)
    violations = sum(not label_consistent(lab) for _, _, lab, _ in rows)
    xis = np.linspace(0.0, xmax, resolution)
    dxi = xis[1] - xis[0]
    worst = 0.0
    for i in range(resolution):
        row = rows[i * resolution:(i + 1) * resolution]
        alpha = row[0][0]
        e2 = np.array([r[3] for r in row])
        phi1 = np.array([curve_values(p, alpha, xi)[0] for xi in xis])
        # cells where existence and phi1 > 0 disagree, measured in grid cells from the phi1 root
        bad = e2 != (phi1 > 0)
        if bad.any():
            d = p.delta - p.m * alpha
            root = p.m / d if d > 0 else math.inf
            worst = max(worst, float(np.max(np.abs(xis[bad] - root))) / dxi)
    base = rows[0][2].base_region.value
    return violations, worst, base, len(rows)


def case_regions(workers=1):
    checks, outputs = [], {}
    for name in REGION_SETS:
        viol, worst, base, n = region_check(name, workers)
        checks.append(Check(f"{name}: label/sign violations = 0", viol == 0, viol, 0))
        checks.append(Check(f"{name}: E2 boundary within one cell of phi1 = 0", worst <= 1.0, worst, 1.0))
        checks.append(Check(f"{name}: base region", base == name, base, name))
        outputs[f"{name}_violations"] = float(viol)
        outputs[f"{name}_cells"] = float(n)
    return checks, outputs, 120.0


CASES = {
    "transcritical": case_transcritical,
    "saddle-node": case_saddle_node,
    "hopf": case_hopf,
    "det-control-quality": case_det_control_quality,
    "det-control-quantity": case_det_control_quantity,
    "stoch-control": case_stoch_control,
    "regions": case_regions,
}


def golden_path(case: str):
    return resources.files("ecodyn").joinpath("golden", f"{case}.json")


def load_golden(case: str):
    path = golden_path(case)
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def compare_golden(outputs: dict, golden: dict) -> list:
    """One check per golden number; ``None`` must match ``None``."""
    checks = []
    for key, ref in sorted(golden.items()):
        val = outputs.get(key)
        if ref is None or val is None:
            ok = ref is None and val is None
        else:
            ok = math.isclose(val, ref, rel_tol=GOLDEN_RTOL, abs_tol=GOLDEN_ATOL)
        checks.append(Check(f"golden {key}", ok, val, ref, GOLDEN_RTOL))
    return checks


def run_case(case: str, workers: int = 1, update_golden: bool = False) -> CaseResult:
    if case not in CASES:
        raise KeyError(case)
    t0 = time.perf_counter()
    checks, outputs, budget = CASES[case](workers=workers)
    runtime = time.perf_counter() - t0
    checks.append(Check(f"runtime < {budget:g} s", runtime < budget, runtime, budget))
    if update_golden:
        Path(str(golden_path(case))).write_text(json.dumps(outputs, indent=2, sort_keys=True) + "\n")
    golden = load_golden(case)
    if golden is None:
        checks.append(Check("golden file present", False, None, f"golden/{case}.json"))
    else:
        checks.extend(compare_golden(outputs, golden))
    return CaseResult(case, checks, outputs, runtime, budget)
