import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodyn.model import ModelParams, State, field_xy
from ecodyn.sde import (FLOOR, NoiseParams, PathConfig, em_jump_step, path_rng, simulate_batch,
                        simulate_ensemble, simulate_path)
from ecodyn.simulate import integrate

P = ModelParams(gamma=10.0, alpha=1.0, xi=1.0, eps=0.1, delta=11.0, m=5.05, omega=0.1)
QUIET = NoiseParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_zero_noise_reduces_to_euler():
    cfg = PathConfig(1e-3, 2.0, 0, x_target=0.0)
    traj, hit = simulate_path((50.0, 10.0), P, QUIET, cfg)
    assert hit is None
    x, y = 50.0, 10.0
    for _ in range(cfg.n_steps):
        fx, fy = field_xy(x, y, P)
        x, y = x + 1e-3 * fx, y + 1e-3 * fy
    assert traj.states[-1] == pytest.approx([x, y], rel=1e-12)


def test_zero_noise_converges_to_deterministic_trajectory():
    ref = integrate((50.0, 10.0), P, 1.0, 1e-3).states[-1]
    errs = []
    for dt in (1e-3, 5e-4):
        traj, _ = simulate_path((50.0, 10.0), P, QUIET, PathConfig(dt, 1.0, 0, 0.0))
        errs.append(np.linalg.norm(traj.states[-1] - ref))
    assert errs[1] < 0.6 * errs[0]
    assert errs[1] / np.linalg.norm(ref) < 1e-2


def test_zero_noise_hitting_time_matches_deterministic():
    cfg = PathConfig(1e-4, 20.0, 0, x_target=1.0)
    _, hit = simulate_path((50.0, 10.0), P, QUIET, cfg)
    traj = integrate((50.0, 10.0), P, 20.0, 1e-3)
    k = int(np.argmax(traj.x <= 1.0))
    assert k > 0
    t_det = traj.times[k - 1] + (traj.x[k - 1] - 1.0) / (traj.x[k - 1] - traj.x[k]) * 1e-3
    assert hit == pytest.approx(t_det, abs=5e-3)


def test_compensated_noise_has_zero_mean():
    n = NoiseParams(0.3, 0.3, 0.4, -0.3, 2.0, 3.0)
    dt = 0.01
    x, y = 2.0, 3.0
    fx, fy = field_xy(x, y, P)
    out = np.array([tuple(em_jump_step((x, y), P, n, dt, path_rng(5, i))) for i in range(20000)])
    noise_x = out[:, 0] - x - fx * dt
    noise_y = out[:, 1] - y - fy * dt
    for v in (noise_x, noise_y):
        assert abs(v.mean()) < 4 * v.std() / math.sqrt(v.size)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 3), st.floats(-0.99, 2), st.floats(0, 20), st.integers(0, 2 ** 32))
def test_positivity_under_jump_diffusion(sigma, jump, lam, seed):
    n = NoiseParams(sigma, sigma, jump, jump, lam, lam)
    res = simulate_batch((5.0, 5.0), P, n, PathConfig(0.01, 2.0, seed, 0.0), [0, 1], record=2)
    states = res.states[~np.isnan(res.states)]
    assert np.all(states >= FLOOR * (1 - 1e-12))
    assert np.all(res.final_states > 0)


def test_zero_component_stays_zero():
    n = NoiseParams(1.0, 1.0, 0.5, 0.5, 5.0, 5.0)
    s = State(0.0, 2.0)
    rng = path_rng(1, 0)
    for _ in range(100):
        s = em_jump_step(s, P, n, 0.01, rng)
    assert s.x == 0.0


def test_same_seed_same_paths_and_different_streams_differ():
    cfg = PathConfig(1e-2, 5.0, 42, 1.0)
    a = simulate_ensemble((50.0, 10.0), P, NoiseParams(), cfg, 64)
    b = simulate_ensemble((50.0, 10.0), P, NoiseParams(), cfg, 64)
    c = simulate_ensemble((50.0, 10.0), P, NoiseParams(), PathConfig(1e-2, 5.0, 42, 1.0, stream=1), 64)
    assert np.array_equal(a.hitting_times, b.hitting_times)
    assert not np.array_equal(a.hitting_times, c.hitting_times)


def test_results_independent_of_chunks_and_workers():
    cfg = PathConfig(1e-2, 5.0, 9, 1.0)
    a = simulate_ensemble((50.0, 10.0), P, NoiseParams(), cfg, 40, chunk=256)
    b = simulate_ensemble((50.0, 10.0), P, NoiseParams(), cfg, 40, chunk=7, workers=2)
    assert np.array_equal(a.hitting_times, b.hitting_times)
    assert np.array_equal(a.final_states, b.final_states)


def test_path_streams_uncorrelated():
    z = np.array([path_rng(3, i).standard_normal(2000) for i in range(20)])
    c = np.corrcoef(z)
    off = c[~np.eye(20, dtype=bool)]
    assert np.max(np.abs(off)) < 4 / math.sqrt(2000)


def test_hit_state_is_target_and_censoring_uses_t_max():
    cfg = PathConfig(1e-2, 20.0, 1, 1.0)
    res = simulate_ensemble((50.0, 10.0), P, NoiseParams(), cfg, 20, record=5)
    assert not res.censored.any()
    for tr in res.trajectories:
        assert tr.states[-1, 0] == pytest.approx(1.0)
    short = simulate_ensemble((50.0, 10.0), P, NoiseParams(), PathConfig(1e-2, 0.05, 1, 1.0), 10)
    assert short.censored.all() and np.all(short.hitting_times == 0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        PathConfig(0.0, 1.0, 0, 1.0)
    with pytest.raises(ValueError):
        PathConfig(0.1, 1.0, -1, 1.0)
    with pytest.raises(ValueError):
        NoiseParams(jump1=-1.0)
    with pytest.raises(ValueError):
        simulate_ensemble((1.0, 1.0), P, NoiseParams(), PathConfig(0.1, 1.0, 0, 0.5), 0)
