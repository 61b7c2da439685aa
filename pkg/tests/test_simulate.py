import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from ecodyn.equilibria import interior_equilibria
from ecodyn.model import ModelParams, field_xy
from ecodyn.simulate import boundedness_check, detect_limit_cycle, integrate, vector_field_grid

P = ModelParams(gamma=10.0, alpha=0.2, xi=1.0, eps=0.1, delta=0.96, m=0.3, omega=0.01)
HOPF = dict(gamma=10.0, alpha=0.1, xi=0.45, delta=0.45, m=0.28, omega=0.01)


def _reference(s0, p, t_end):
    sol = solve_ivp(lambda t, z: field_xy(z[0], z[1], p), (0, t_end), s0, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def test_matches_high_order_reference():
    traj = integrate((5.0, 2.0), P, 5.0, 1e-3)
    assert np.allclose(traj.states[-1], _reference((5.0, 2.0), P, 5.0), rtol=1e-9, atol=1e-10)


def test_rk4_observed_order():
    ref = _reference((5.0, 2.0), P, 4.0)
    errs = [np.linalg.norm(integrate((5.0, 2.0), P, 4.0, h).states[-1] - ref) for h in (0.2, 0.1, 0.05)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 30), st.floats(1e-6, 30))
def test_positivity_preserved(x0, y0):
    traj = integrate((x0, y0), P, 20.0, 0.05)
    assert np.all(traj.states >= 0)


def test_zero_components_stay_zero():
    traj = integrate((0.0, 3.0), P, 5.0, 0.01)
    assert np.all(traj.x == 0.0)
    traj = integrate((3.0, 0.0), P, 5.0, 0.01)
    assert np.all(traj.y == 0.0)


def test_gronwall_bound_on_random_starts():
    rng = np.random.default_rng(11)
    for x0, y0 in rng.uniform(0.01, 40.0, size=(100, 2)):
        traj = integrate((x0, y0), P, 30.0, 0.05, stride=5)
        rep = boundedness_check(traj, P, 0.5 * P.m)
        assert rep.passed, (x0, y0, rep)


def test_boundedness_k_range():
    traj = integrate((1.0, 1.0), P, 1.0, 0.1)
    with pytest.raises(ValueError):
        boundedness_check(traj, P, P.m)


def test_stride_keeps_every_kth_point():
    full = integrate((5.0, 2.0), P, 1.0, 0.01)
    thin = integrate((5.0, 2.0), P, 1.0, 0.01, stride=10)
    assert np.allclose(thin.states, full.states[::10])


def test_limit_cycle_on_harmonic_like_signal():
    from ecodyn.simulate import Trajectory
    t = np.linspace(0, 200, 20001)
    traj = Trajectory(t, np.column_stack([2 + np.sin(t), 2 + np.cos(t)]))
    cyc = detect_limit_cycle(traj)
    assert cyc is not None and cyc.period == pytest.approx(2 * math.pi, rel=1e-3)


def test_no_cycle_on_decaying_signal():
    from ecodyn.simulate import Trajectory
    t = np.linspace(0, 200, 20001)
    r = np.exp(-0.05 * t)
    traj = Trajectory(t, np.column_stack([2 + r * np.sin(t), 2 + r * np.cos(t)]))
    assert detect_limit_cycle(traj) is None


@pytest.mark.parametrize("eps,expect", [(0.35, True), (0.40, False)])
def test_hopf_side_behaviour(eps, expect):
    p = ModelParams(eps=eps, **HOPF)
    E = interior_equilibria(p)[0].location
    traj = integrate((1.05 * E.x, E.y), p, 5000.0, 1e-2)
    assert (detect_limit_cycle(traj) is not None) is expect


def test_vector_field_grid_shape():
    g = vector_field_grid(P, (0, 10), (0, 5), 4, 3)
    assert g.shape == (12, 4)
    assert np.allclose(g[5, 2:], field_xy(g[5, 0], g[5, 1], P))
