import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodyn.model import ModelParams
from ecodyn.sde import NoiseParams, PathConfig, simulate_path
from ecodyn.simulate import integrate
from ecodyn.stochastic_control import (ControlSchedule, StochControlConfig, adjoint_sweep, dH_dalpha,
                                       dH_dx, dH_dxi, dH_dy, ensemble_means, evaluate, forward_costates,
                                       optimize, path_costs, projected_gradient_update, stoch_hamiltonian,
                                       terminal_costate)

P = ModelParams(gamma=10.0, alpha=0.0, xi=0.0, eps=0.1, delta=11.0, m=5.05, omega=0.1)
CFG = StochControlConfig()
pos = st.floats(0.05, 60)
cos = st.floats(-5, 5)
food = st.floats(0, 2)


@settings(max_examples=100, deadline=None)
@given(pos, pos, cos, cos, food, food)
def test_hamiltonian_partials_match_finite_differences(x, y, p1, p2, a, xi):
    H = lambda x_, y_, a_, xi_: stoch_hamiltonian((x_, y_), (p1, p2), a_, xi_, CFG, P)
    h = 1e-6
    fd = [
        (H(x + h, y, a, xi) - H(x - h, y, a, xi)) / (2 * h),
        (H(x, y + h, a, xi) - H(x, y - h, a, xi)) / (2 * h),
        (H(x, y, a + h, xi) - H(x, y, a - h, xi)) / (2 * h),
        (H(x, y, a, xi + h) - H(x, y, a, xi - h)) / (2 * h),
    ]
    an = [dH_dx((x, y), (p1, p2), a, xi, P), dH_dy((x, y), (p1, p2), a, xi, P),
          dH_dalpha((x, y), (p1, p2), a, xi, CFG, P), dH_dxi((x, y), (p1, p2), a, xi, CFG, P)]
    for f, g in zip(fd, an):
        assert abs(f - g) <= 1e-5 * (1 + abs(f))


def test_terminal_costate_gives_zero_hamiltonian():
    s = (1.0, 30.0)
    a, xi = 0.5, 1.5
    p1, p2 = terminal_costate(s, a, xi, CFG, P)
    H = stoch_hamiltonian(s, (float(p1), float(p2)), a, xi, CFG, P)
    assert H + 1.0 == pytest.approx(0.0, abs=1e-12)
    assert p2 == 0.0


def _path(dt=CFG.dt, seed=3):
    sched = ControlSchedule.constant(StochControlConfig(dt=dt), 1.0, 1.0)
    traj, hit = simulate_path((50.0, 10.0), P, NoiseParams(), PathConfig(dt, CFG.t_max, seed, 1.0), sched)
    assert hit is not None
    return traj, sched


def _round_trip_error(dt, seed=3):
    traj, sched = _path(dt, seed)
    back = adjoint_sweep(traj, sched, StochControlConfig(dt=dt), P)
    fwd = forward_costates(traj, sched, P, back.costates[0])
    scale = max(1.0, np.max(np.abs(back.costates)))
    return np.max(np.abs(fwd - back.costates)) / scale


def test_adjoint_round_trip():
    # at the path engine's default step
    for seed in range(3):
        assert _round_trip_error(1e-3, seed) < 1e-6


def test_round_trip_error_is_truncation():
    assert _round_trip_error(1e-3) < 1e-4 * _round_trip_error(1e-2)


def test_zero_terminal_rule_gives_zero_costates():
    traj, sched = _path()
    cfg = StochControlConfig(terminal="zero")
    back = adjoint_sweep(traj, sched, cfg, P)
    assert np.all(back.costates == 0.0)


def test_censored_path_starts_from_zero():
    traj = integrate((50.0, 10.0), P, 0.5, CFG.dt)
    sched = ControlSchedule.constant(CFG, 1.0, 1.0)
    back = adjoint_sweep(traj, sched, CFG, P, hit=False)
    assert np.all(back.costates[-1] == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5), st.lists(st.floats(-50, 50), min_size=5, max_size=5),
       st.floats(0, 4))
def test_projected_update_respects_bounds(ga, gx, scale):
    sched = ControlSchedule(0.1, np.linspace(0, 2, 5), np.linspace(2, 0, 5))
    new = projected_gradient_update(sched, (np.array(ga), np.array(gx)), CFG, scale)
    assert new.within(CFG)


def test_path_costs_constant_schedule():
    cfg = StochControlConfig(t_max=5.0, rho_alpha=0.1, rho_xi=0.2)
    sched = ControlSchedule.constant(cfg, 1.0, 2.0)

    class B:
        hitting_times = np.array([1.234, np.nan])
    costs = path_costs(B, sched, cfg)
    rate = 0.1 * 1.0 + 0.2 * 4.0
    assert costs == pytest.approx([1.234 * (1 + rate), 5.0 * (1 + rate)])


def test_config_defaults_and_round_trip():
    assert CFG.grid_dt == CFG.dt
    assert CFG.baseline == (1.0, 1.0)
    assert StochControlConfig.from_dict(CFG.to_dict()) == CFG
    with pytest.raises(ValueError):
        StochControlConfig(terminal="free")


@pytest.fixture(scope="module")
def small_run():
    cfg = StochControlConfig(max_sweeps=8, n_train_paths=40, n_eval_paths=60)
    noise = NoiseParams().with_sigma(1.0)
    opt = optimize(cfg, P, noise, (50.0, 10.0), 11)
    return cfg, noise, opt


def test_optimizer_descends(small_run):
    cfg, _, opt = small_run
    costs = [h["cost"] for h in opt.history]
    assert costs[-1] < costs[0]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert opt.schedule.within(cfg)


def test_optimizer_is_deterministic(small_run):
    cfg, noise, opt = small_run
    again = optimize(cfg, P, noise, (50.0, 10.0), 11)
    assert np.array_equal(opt.schedule.alpha, again.schedule.alpha)
    assert [h["cost"] for h in opt.history] == [h["cost"] for h in again.history]


def test_evaluation_arms(small_run):
    cfg, noise, opt = small_run
    ev = evaluate(opt.schedule, cfg, P, noise, (50.0, 10.0), 11, record=3)
    assert ev.controlled.n_paths == ev.uncontrolled.n_paths == 60
    assert ev.baseline == (1.0, 1.0)
    assert len(ev.controlled.trajectories) == 3
    rows = ensemble_means(ev.controlled, opt.schedule, cfg.dt)
    assert rows[0][1:3] == (50.0, 10.0)
