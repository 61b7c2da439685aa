"""Jump-diffusion paths and first hitting times of the prey.

Each component carries multiplicative Brownian noise and a compensated
compound Poisson jump with a fixed relative size::

    dx = f_x dt + sigma1 x dW1 + jump1 x (dN1 - lambda1 dt)
    dy = f_y dt + sigma2 y dW2 + jump2 y (dN2 - lambda2 dt)

The scheme is Euler-Maruyama with the exact Poisson count per step and a
floor at ``1e-10``. Path ``i`` of a run with base seed ``s`` draws from its
own PCG64 stream keyed on ``(s, stream, i)``, so results do not depend on
how paths are batched or distributed over workers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, State, field_xy
from .parallel import pmap
from .simulate import Trajectory

FLOOR = 1e-10
BLOCK = 1024
CLAMP_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class NoiseParams:
    """Diffusion intensities, relative jump sizes and jump rates."""
    sigma1: float = 0.1
    sigma2: float = 0.1
    jump1: float = 0.05
    jump2: float = 0.05
    lambda1: float = 0.5
    lambda2: float = 0.5

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        for name in ("jump1", "jump2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > -1):
                raise ValueError(f"{name} must exceed -1")

    def with_sigma(self, sigma: float) -> "NoiseParams":
        return NoiseParams(sigma, sigma, self.jump1, self.jump2, self.lambda1, self.lambda2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("sigma1", "sigma2", "jump1", "jump2", "lambda1", "lambda2")}

    @classmethod
    def from_dict(cls, data) -> "NoiseParams":
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class PathConfig:
    dt: float
    t_max: float
    seed: int
    x_target: float
    stream: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))


def path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Generator for path ``index`` of run ``(seed, stream)``."""
    ss = np.random.SeedSequence(entropy=(int(seed), int(stream)), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def _increment(x, y, p, n, dt, z1, z2, k1, k2, alpha, xi):
    fx, fy = field_xy(x, y, p, alpha, xi)
    sq = math.sqrt(dt)
    xn = x + fx * dt + n.sigma1 * x * sq * z1 + n.jump1 * x * (k1 - n.lambda1 * dt)
    yn = y + fy * dt + n.sigma2 * y * sq * z2 + n.jump2 * y * (k2 - n.lambda2 * dt)
    return xn, yn


def em_jump_step(s, p: ModelParams, n: NoiseParams, dt: float, rng: np.random.Generator,
                 alpha=None, xi=None, events: list | None = None) -> State:
    """One Euler-Maruyama step with Poisson jumps.

    Components are floored at ``1e-10``; a floor hit appends ``"clamp"`` to
    ``events`` when a list is given. A component that is exactly zero stays
    zero because every term is proportional to it.
    """
    x, y = (float(v) for v in s)
    if x < 0 or y < 0:
        raise ValueError("state must be nonnegative")
    z = rng.standard_normal(2)
    k = rng.poisson((n.lambda1 * dt, n.lambda2 * dt))
    xn, yn = _increment(x, y, p, n, dt, z[0], z[1], k[0], k[1], alpha, xi)
    out = []
    for old, new in ((x, xn), (y, yn)):
        if old == 0.0:
            out.append(0.0)
        elif new < FLOOR:
            out.append(FLOOR)
            if events is not None:
                events.append("clamp")
        else:
            out.append(float(new))
    return State(*out)


def _controls_at(schedule, t, p):
    if schedule is None:
        return p.alpha, p.xi
    k = min(int(t / schedule.grid_dt + 1e-9), len(schedule.alpha) - 1)
    return float(schedule.alpha[k]), float(schedule.xi[k])


@dataclass
class BatchResult:
    """Raw output of :func:`simulate_batch` for paths ``indices``."""
    indices: np.ndarray
    hitting_times: np.ndarray  # nan where censored
    hit_step: np.ndarray  # index of the step whose end crosses, -1 if censored
    final_states: np.ndarray
    clamp_counts: np.ndarray
    steps_taken: np.ndarray
    states: np.ndarray | None = None  # (n_record, steps + 1, 2), nan after the hit
    dt: float = 0.0


def simulate_batch(s0, p: ModelParams, n: NoiseParams, cfg: PathConfig, indices,
                   schedule=None, record: int = 0) -> BatchResult:
    """Advance paths ``indices`` together until each hits or ``t_max`` passes.

    ``schedule`` is any object with ``grid_dt``, ``alpha`` and ``xi``. The
    first ``record`` paths keep their full state history.
    """
    indices = np.asarray(list(indices), dtype=np.int64)
    P = indices.size
    x0, y0 = (float(v) for v in s0)
    if x0 < 0 or y0 < 0:
        raise ValueError("initial state must be nonnegative")
    n_steps = cfg.n_steps
    dt = cfg.dt
    x = np.full(P, x0)
    y = np.full(P, y0)
    alive = np.full(P, x0 > cfg.x_target)
    hit = np.where(alive, np.nan, 0.0)
    hit_step = np.full(P, -1, dtype=np.int64)
    clamps = np.zeros(P, dtype=np.int64)
    steps = np.zeros(P, dtype=np.int64)
    rec = min(int(record), P)
    history = [np.tile([x0, y0], (rec, 1))] if rec else None
    gens = [path_rng(cfg.seed, i, cfg.stream) for i in indices]
    rates = (n.lambda1 * dt, n.lambda2 * dt)
    k = 0
    while k < n_steps and alive.any():
        B = min(BLOCK, n_steps - k)
        Z = np.stack([g.standard_normal((B, 2)) for g in gens])
        N = np.stack([g.poisson(rates, (B, 2)) for g in gens])
        for j in range(B):
            if not alive.any():
                break
            t = k * dt
            a, xi = _controls_at(schedule, t, p)
            xn, yn = _increment(x, y, p, n, dt, Z[:, j, 0], Z[:, j, 1], N[:, j, 0], N[:, j, 1], a, xi)
            low = alive & ((xn < FLOOR) & (x > 0) | (yn < FLOOR) & (y > 0))
            clamps += low
            xn = np.where(x > 0, np.maximum(xn, FLOOR), 0.0)
            yn = np.where(y > 0, np.maximum(yn, FLOOR), 0.0)
            cross = alive & (xn <= cfg.x_target)
            if cross.any():
                w = (x[cross] - cfg.x_target) / (x[cross] - xn[cross])
                hit[cross] = t + w * dt
                hit_step[cross] = k
                yn_hit = y[cross] + w * (yn[cross] - y[cross])
                xn = xn.copy()
                yn = yn.copy()
                xn[cross] = cfg.x_target
                yn[cross] = yn_hit
            x = np.where(alive, xn, x)
            y = np.where(alive, yn, y)
            steps += alive
            if rec:
                snap = np.full((rec, 2), np.nan)
                live = alive[:rec]
                snap[live, 0] = x[:rec][live]
                snap[live, 1] = y[:rec][live]
                history.append(snap)
            alive = alive & ~cross
            k += 1
    states = np.stack(history, axis=1) if rec else None
    return BatchResult(indices, hit, hit_step, np.column_stack([x, y]), clamps, steps, states, dt)


def _trajectory_from(batch: BatchResult, i: int, cfg: PathConfig) -> Trajectory:
    """Trajectory of recorded path ``i``; the last point sits at the hitting time."""
    st = batch.states[i]
    last = int(batch.steps_taken[i])
    times = np.arange(last + 1) * cfg.dt
    if batch.hit_step[i] >= 0:
        times[-1] = batch.hitting_times[i]
    elif times.size and times[-1] > cfg.t_max:
        times[-1] = cfg.t_max
    events = [(None, "clamp")] * int(batch.clamp_counts[i])
    if last and batch.clamp_counts[i] > CLAMP_WARN_FRACTION * last:
        events.append((None, "warning: clamp fraction above 1% of steps"))
    states = st[:last + 1]
    return Trajectory(times, states.copy(), events, float(np.nanmin(states)))


def simulate_path(s0, p: ModelParams, n: NoiseParams, cfg: PathConfig, schedule=None):
    """Path 0 of the run ``(cfg.seed, cfg.stream)``.

    Returns ``(trajectory, hitting_time)`` with ``hitting_time`` None when
    the prey stays above ``x_target`` up to ``t_max``.
    """
    b = simulate_batch(s0, p, n, cfg, [0], schedule, record=1)
    traj = _trajectory_from(b, 0, cfg)
    if any(e[1].startswith("warning") for e in traj.events):
        warnings.warn("clamp events exceed 1% of steps", RuntimeWarning, stacklevel=2)
    h = b.hitting_times[0]
    return traj, (None if np.isnan(h) else float(h))


@dataclass
class EnsembleResult:
    hitting_times: np.ndarray  # censored entries hold t_max
    censored: np.ndarray
    clamp_counts: np.ndarray
    final_states: np.ndarray
    t_max: float
    trajectories: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return int(self.hitting_times.size)

    @property
    def censored_fraction(self) -> float:
        return float(np.count_nonzero(self.censored)) / self.n_paths

    @property
    def uncensored(self) -> np.ndarray:
        return self.hitting_times[~self.censored]

    def summaries(self) -> list[dict]:
        return [{"path": i, "hitting_time": float(self.hitting_times[i]), "censored": bool(self.censored[i]),
                 "clamps": int(self.clamp_counts[i]), "x_final": float(self.final_states[i, 0]),
                 "y_final": float(self.final_states[i, 1])} for i in range(self.n_paths)]


def _batch_job(args):
    s0, p, n, cfg, idx, schedule, record = args
    return simulate_batch(s0, p, n, cfg, idx, schedule, record)


def simulate_ensemble(s0, p: ModelParams, n: NoiseParams, cfg: PathConfig, n_paths: int,
                      schedule=None, record: int = 0, workers: int = 1,
                      chunk: int = 256) -> EnsembleResult:
    """``n_paths`` independent paths merged in path-index order.

    Censored paths (no hit by ``t_max``) carry ``t_max`` and are flagged.
    ``record`` keeps full trajectories for the first paths.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    chunks = [np.arange(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]
    jobs = [(tuple(s0), p, n, cfg, c, schedule, max(0, min(record - int(c[0]), c.size)))
            for c in chunks]
    parts = pmap(_batch_job, jobs, workers=workers)
    hits = np.concatenate([b.hitting_times for b in parts])
    censored = np.isnan(hits)
    trajs = []
    for b in parts:
        if b.states is not None:
            trajs.extend(_trajectory_from(b, i, cfg) for i in range(b.states.shape[0]))
    res = EnsembleResult(
        hitting_times=np.where(censored, cfg.t_max, hits),
        censored=censored,
        clamp_counts=np.concatenate([b.clamp_counts for b in parts]),
        final_states=np.concatenate([b.final_states for b in parts]),
        t_max=cfg.t_max,
        trajectories=trajs,
    )
    steps = np.concatenate([b.steps_taken for b in parts])
    if np.any(res.clamp_counts > CLAMP_WARN_FRACTION * np.maximum(steps, 1)):
        res.warnings.append("clamp events exceed 1% of steps on some paths")
    return res
