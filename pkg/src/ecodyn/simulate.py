"""Deterministic trajectories, boundedness monitor and limit-cycle detection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, State, field_xy

CLAMP_TOL = 1e-12
MAX_HALVINGS = 8


class IntegrationFailure(RuntimeError):
    def __init__(self, message, last_good_state, time):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.time = time


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n, 2)
    events: list = field(default_factory=list)
    min_component: float = 0.0  # smallest pre-clamp value seen

    @property
    def x(self):
        return self.states[:, 0]

    @property
    def y(self):
        return self.states[:, 1]

    def state(self, i) -> State:
        return State(float(self.states[i, 0]), float(self.states[i, 1]))


def _rk4(x, y, h, p, alpha, xi):
    k1x, k1y = field_xy(x, y, p, alpha, xi)
    k2x, k2y = field_xy(x + 0.5 * h * k1x, y + 0.5 * h * k1y, p, alpha, xi)
    k3x, k3y = field_xy(x + 0.5 * h * k2x, y + 0.5 * h * k2y, p, alpha, xi)
    k4x, k4y = field_xy(x + h * k3x, y + h * k3y, p, alpha, xi)
    return (x + h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0,
            y + h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0)


def _step(x, y, h, p, alpha, xi, depth=0):
    """One RK4 step, split in halves while the relative change exceeds 0.1."""
    nx, ny = _rk4(x, y, h, p, alpha, xi)
    if depth < MAX_HALVINGS and math.isfinite(nx) and math.isfinite(ny):
        change = math.hypot(nx - x, ny - y)
        size = math.hypot(x, y)
        if change > 0.1 * size and change > 1e-12:
            mx, my = _step(x, y, 0.5 * h, p, alpha, xi, depth + 1)
            return _step(mx, my, 0.5 * h, p, alpha, xi, depth + 1)
    return nx, ny


def integrate(s0, p: ModelParams, t_end: float, dt: float,
              alpha: float | None = None, xi: float | None = None,
              stride: int = 1) -> Trajectory:
    """Fixed-step RK4 from ``s0`` to ``t_end``.

    Components that undershoot below ``-1e-12`` are clamped to zero and
    tagged ``"clamp"``; smaller roundoff undershoots are zeroed silently.
    ``stride`` keeps every ``stride``-th state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y = (float(v) for v in s0)
    if x < 0 or y < 0:
        raise ValueError("initial state must be nonnegative")
    alpha = p.alpha if alpha is None else alpha
    xi = p.xi if xi is None else xi
    n = int(math.ceil(t_end / dt - 1e-9))
    times = [0.0]
    xs = [x]
    ys = [y]
    events = []
    lowest = min(x, y)
    t = 0.0
    for i in range(n):
        h = min(dt, t_end - t) if i == n - 1 else dt
        nx, ny = _step(x, y, h, p, alpha, xi)
        t = (i + 1) * dt if i < n - 1 else t_end
        if not (math.isfinite(nx) and math.isfinite(ny)):
            raise IntegrationFailure(f"non-finite state at t={t}", State(x, y), t - h)
        lowest = min(lowest, nx, ny)
        if nx < 0.0 or ny < 0.0:
            if nx < -CLAMP_TOL or ny < -CLAMP_TOL:
                events.append((t, "clamp"))
            nx, ny = max(nx, 0.0), max(ny, 0.0)
        x, y = nx, ny
        if (i + 1) % stride == 0 or i == n - 1:
            times.append(t)
            xs.append(x)
            ys.append(y)
    return Trajectory(np.array(times), np.column_stack([xs, ys]), events, lowest)


def vector_field_grid(p: ModelParams, x_range, y_range, nx: int, ny: int):
    """Rows of ``(x, y, dx, dy)`` on a regular grid."""
    X, Y = np.meshgrid(np.linspace(*x_range, nx), np.linspace(*y_range, ny), indexing="ij")
    dX, dY = field_xy(X, Y, p)
    return np.column_stack([X.ravel(), Y.ravel(), dX.ravel(), dY.ravel()])


@dataclass
class BoundednessReport:
    passed: bool
    bound: float
    max_w: float
    first_violation_time: float | None


def boundedness_check(traj: Trajectory, p: ModelParams, k: float) -> BoundednessReport:
    """Check ``W = x + y/delta`` against its Gronwall bound.

    ``M = gamma (1 + k)^2 / 4 + xi / eps`` and the bound is
    ``max(W(0), M/k)`` with a relative slack of 1e-6.
    """
    if not 0 < k < p.m:
        raise ValueError("k must lie in (0, m)")
    W = traj.x + traj.y / p.delta
    M = p.gamma * (1.0 + k) ** 2 / 4.0 + p.xi / p.eps
    bound = max(float(W[0]), M / k) * (1.0 + 1e-6)
    bad = np.nonzero(W > bound)[0]
    first = float(traj.times[bad[0]]) if bad.size else None
    return BoundednessReport(bad.size == 0, bound, float(W.max()), first)


@dataclass
class LimitCycle:
    period: float
    amplitude: float
    n_returns: int


def detect_limit_cycle(traj: Trajectory, n_returns: int = 10, rtol: float = 1e-4,
                       min_amplitude: float = 1e-3) -> LimitCycle | None:
    """Poincare return map on ``x = mean(x)`` crossed upward.

    The first half of the trajectory is discarded. A cycle needs
    ``n_returns`` consecutive return points agreeing to ``rtol`` and a prey
    amplitude above ``min_amplitude``.
    """
    half = len(traj.times) // 2
    t = traj.times[half:]
    x = traj.x[half:]
    y = traj.y[half:]
    if len(t) < 3:
        return None
    amp = float(x.max() - x.min())
    if amp <= min_amplitude:
        return None
    xbar = float(x.mean())
    up = np.nonzero((x[:-1] < xbar) & (x[1:] >= xbar))[0]
    if up.size < n_returns + 1:
        return None
    w = (xbar - x[up]) / (x[up + 1] - x[up])
    tc = t[up] + w * (t[up + 1] - t[up])
    yc = y[up] + w * (y[up + 1] - y[up])
    last = yc[-n_returns:]
    ref = abs(last[-1]) if last[-1] != 0 else 1.0
    if np.max(np.abs(last - last[-1])) / ref > rtol:
        return None
    period = float(np.mean(np.diff(tc[-(n_returns + 1):])))
    return LimitCycle(period, amp, n_returns)
