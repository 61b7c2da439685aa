"""End-to-end acceptance criteria, one test and one PASS/FAIL line each."""
import math
import time

import numpy as np
from scipy.integrate import solve_ivp

from ecodyn.control import ControlProblem, simulate_schedule, solve
from ecodyn.equilibria import all_equilibria
from ecodyn.model import ModelParams, State, field_xy, jacobian
from ecodyn.repro import run_case
from ecodyn.sde import NoiseParams, PathConfig, simulate_batch, simulate_path
from ecodyn.simulate import boundedness_check, integrate
from ecodyn.stats import mann_whitney_u


def report(capsys, number, title, passed, detail=""):
    with capsys.disabled():
        print(f"\nCRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")


def _case(capsys, number, title, case):
    res = run_case(case)
    failed = [c for c in res.checks if not c.passed]
    detail = "; ".join(f"{c.name} (got {c.value})" for c in failed) or \
        ", ".join(f"{k}={v:.6g}" for k, v in res.outputs.items() if isinstance(v, float))
    report(capsys, number, title, res.passed, f"{detail} [{res.runtime_s:.1f} s]")
    assert res.passed, detail


def test_criterion_1_transcritical(capsys):
    _case(capsys, 1, "transcritical point xi* = 2.8", "transcritical")


def test_criterion_2_saddle_node(capsys):
    _case(capsys, 2, "E0/E2 collision xi* = 3", "saddle-node")


def test_criterion_3_hopf(capsys):
    _case(capsys, 3, "limit cycle at eps 0.35, none at 0.40", "hopf")


def test_criterion_4_quality_control(capsys):
    _case(capsys, 4, "deterministic alpha-control T* = 3.29 +/- 10%", "det-control-quality")


def test_criterion_5_quantity_control(capsys):
    _case(capsys, 5, "deterministic xi-control T* = 2.30 +/- 10%", "det-control-quantity")


def test_criterion_6_stochastic_control(capsys):
    _case(capsys, 6, "stochastic control beats baseline", "stoch-control")


def test_criterion_8_regions(capsys):
    _case(capsys, 8, "region labels and E2 boundary on 200x200 grids", "regions")


# --- criterion 7: property suites in compact form --------------------------------------------

def _prop_jacobian(rng):
    p = ModelParams(10.0, 0.2, 1.0, 0.1, 0.96, 0.3, 0.01)
    worst = 0.0
    for x, y in zip(rng.uniform(0, p.gamma, 100), rng.uniform(0, 10, 100)):
        J = jacobian((x, y), p)
        h = 1e-6
        F = np.column_stack([(np.array(field_xy(x + h, y, p)) - field_xy(x - h, y, p)) / (2 * h),
                             (np.array(field_xy(x, y + h, p)) - field_xy(x, y - h, p)) / (2 * h)])
        worst = max(worst, np.max(np.abs(J - F)) / (np.max(np.abs(J)) + 1e-12))
    return worst < 1e-5, f"max rel err {worst:.1e}"


def _random_params(rng):
    m = rng.uniform(0.05, 5)
    return ModelParams(rng.uniform(0.5, 30), rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0.01, 2),
                       m + rng.uniform(0.05, 10), m, rng.uniform(0.001, 2))


def _prop_residuals(rng):
    worst = 0.0
    for _ in range(100):
        p = _random_params(rng)
        for r in all_equilibria(p):
            x, y = r.location
            worst = max(worst, math.hypot(*field_xy(x, y, p)) / (1 + math.hypot(x, y)))
    return worst < 1e-9, f"max residual {worst:.1e}"


def _prop_positivity(rng):
    p = ModelParams(10.0, 0.2, 1.0, 0.1, 0.96, 0.3, 0.01)
    ok = all(np.all(integrate(tuple(s), p, 20.0, 0.05).states >= 0) for s in rng.uniform(1e-6, 30, (30, 2)))
    n = NoiseParams(2.0, 2.0, -0.9, -0.9, 10.0, 10.0)
    b = simulate_batch((5.0, 5.0), p, n, PathConfig(0.01, 5.0, 1, 0.0), np.arange(20), record=20)
    ok_sde = bool(np.all(b.states[~np.isnan(b.states)] > 0))
    return ok and ok_sde, f"rk4 {ok}, jump-diffusion {ok_sde}"


def _prop_gronwall(rng):
    p = ModelParams(10.0, 0.2, 1.0, 0.1, 0.96, 0.3, 0.01)
    bad = sum(not boundedness_check(integrate(tuple(s), p, 30.0, 0.05, stride=5), p, 0.15).passed
              for s in rng.uniform(0.01, 40, (100, 2)))
    return bad == 0, f"{bad} violations in 100"


def _prop_bang_bang():
    p = ModelParams(10.0, 0.2, 1.0, 0.1, 0.96, 0.3, 0.01)
    pb0 = ControlProblem(p, "quantity", State(5, 2), State(5, 2.5))
    z = simulate_schedule(pb0, [0.0, 1.0, 2.0], [0.0, 2.0])
    sol = solve(ControlProblem(p, "quantity", State(5, 2), State(*z)), 100)
    return sol.converged and sol.sign_agreement >= 0.95, \
        f"converged {sol.converged}, agreement {sol.sign_agreement:.3f}"


def _prop_u_symmetry(rng):
    bad = 0
    for _ in range(1000):
        n1, n2 = rng.integers(1, 30, 2)
        a, b = rng.integers(0, 10, n1).astype(float), rng.integers(0, 10, n2).astype(float)
        bad += mann_whitney_u(a, b).u_statistic + mann_whitney_u(b, a).u_statistic != n1 * n2
    return bad == 0, f"{bad} failures in 1000"


def _prop_rk4_order():
    p = ModelParams(10.0, 0.2, 1.0, 0.1, 0.96, 0.3, 0.01)
    ref = solve_ivp(lambda t, z: field_xy(z[0], z[1], p), (0, 4.0), (5.0, 2.0), method="DOP853",
                    rtol=1e-13, atol=1e-13).y[:, -1]
    e = [np.linalg.norm(integrate((5.0, 2.0), p, 4.0, h).states[-1] - ref) for h in (0.2, 0.1, 0.05)]
    order = min(math.log2(e[0] / e[1]), math.log2(e[1] / e[2]))
    return order >= 3.5, f"order {order:.2f}"


def _prop_zero_noise():
    p = ModelParams(10.0, 1.0, 1.0, 0.1, 11.0, 5.05, 0.1)
    q = NoiseParams(0, 0, 0, 0, 0, 0)
    errs = []
    ref = integrate((50.0, 10.0), p, 1.0, 1e-3).states[-1]
    for dt in (1e-3, 5e-4):
        traj, _ = simulate_path((50.0, 10.0), p, q, PathConfig(dt, 1.0, 0, 0.0))
        errs.append(np.linalg.norm(traj.states[-1] - ref))
    return errs[1] < 0.6 * errs[0], f"errors {errs[0]:.2e} -> {errs[1]:.2e}"


def test_criterion_7_property_suites(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    results = {
        "jacobian vs finite differences": _prop_jacobian(rng),
        "equilibrium residuals": _prop_residuals(rng),
        "positivity": _prop_positivity(rng),
        "Gronwall boundedness": _prop_gronwall(rng),
        "bang-bang sign agreement": _prop_bang_bang(),
        "U symmetry": _prop_u_symmetry(rng),
        "RK4 order": _prop_rk4_order(),
        "zero-noise reduction": _prop_zero_noise(),
    }
    passed = all(ok for ok, _ in results.values())
    detail = "; ".join(f"{k}: {'ok' if ok else 'FAILED'} ({d})" for k, (ok, d) in results.items())
    report(capsys, 7, "property suites", passed, f"{detail} [{time.perf_counter() - t0:.1f} s]")
    assert passed, detail
