"""Stochastic time-optimal control of the prey by food quality and quantity.

The cost is ``J = E[T + int_0^T (rho_alpha alpha^2 + rho_xi xi^2) dt]``
where ``T`` is the first time the prey falls to ``x_target``. Controls are
piecewise constant on a grid. Each sweep simulates a training batch with
common random numbers, integrates the adjoints backward along every
realized path, averages the pointwise Hamiltonian gradients per grid cell
and takes a projected gradient step with halving until the batch cost
decreases.

Terminal costates. With ``terminal="transversality"`` (default) the
free-final-time condition ``H(T) = 0`` on the target line ``x = x_target``
gives ``p1(T) = -(1 + rho_alpha alpha^2 + rho_xi xi^2) / f_x`` and
``p2(T) = 0``. With ``terminal="zero"`` both costates start at zero; the
adjoint system is linear and homogeneous in the costates, so they then
vanish identically and only the penalty terms drive the update.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ModelParams, field_xy
from .parallel import pmap
from .sde import EnsembleResult, NoiseParams, PathConfig, simulate_batch, simulate_ensemble

TRAIN_STREAM = 1
EVAL_CONTROLLED_STREAM = 2
EVAL_UNCONTROLLED_STREAM = 3
UNRELIABLE_CENSORING = 0.2
UPDATE_MODE = "batch forward-backward sweeps with common random numbers"


@dataclass(frozen=True)
class StochControlConfig:
    rho_alpha: float = 0.01
    rho_xi: float = 0.01
    eta1: float = 0.05
    eta2: float = 0.05
    alpha_bounds: tuple = (0.0, 2.0)
    xi_bounds: tuple = (0.0, 2.0)
    x_target: float = 1.0
    t_max: float = 20.0
    dt: float = 1e-2
    grid_dt: float | None = None  # defaults to dt
    max_sweeps: int = 200
    n_train_paths: int = 200
    n_eval_paths: int = 1000
    terminal: str = "transversality"
    baseline_alpha: float | None = None  # defaults to the midpoint of the bounds
    baseline_xi: float | None = None
    rel_tol: float = 1e-4
    patience: int = 5
    max_halvings: int = 10
    max_failures: int = 10

    def __post_init__(self):
        if not (self.rho_alpha > 0 and self.rho_xi > 0):
            raise ValueError("penalties must be positive")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("learning rates must be positive")
        for name in ("alpha_bounds", "xi_bounds"):
            lo, hi = getattr(self, name)
            if not (0 <= lo < hi):
                raise ValueError(f"{name} must satisfy 0 <= lo < hi")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not (self.dt > 0 and self.t_max > 0):
            raise ValueError("dt and t_max must be positive")
        if self.grid_dt is None:
            object.__setattr__(self, "grid_dt", float(self.dt))
        if self.grid_dt < self.dt:
            raise ValueError("grid_dt must not be smaller than dt")
        if self.terminal not in ("transversality", "zero"):
            raise ValueError("terminal must be 'transversality' or 'zero'")
        if self.max_sweeps < 0 or self.n_train_paths < 1 or self.n_eval_paths < 1:
            raise ValueError("sweep and path counts must be positive")

    @property
    def n_cells(self) -> int:
        return int(math.ceil(self.t_max / self.grid_dt - 1e-9))

    @property
    def baseline(self) -> tuple[float, float]:
        a = 0.5 * sum(self.alpha_bounds) if self.baseline_alpha is None else float(self.baseline_alpha)
        x = 0.5 * sum(self.xi_bounds) if self.baseline_xi is None else float(self.baseline_xi)
        return a, x

    def path_config(self, seed: int, stream: int) -> PathConfig:
        return PathConfig(self.dt, self.t_max, seed, self.x_target, stream)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_bounds"] = list(self.alpha_bounds)
        d["xi_bounds"] = list(self.xi_bounds)
        return d

    @classmethod
    def from_dict(cls, data) -> "StochControlConfig":
        data = dict(data)
        for k in ("alpha_bounds", "xi_bounds"):
            if k in data:
                data[k] = tuple(data[k])
        return cls(**data)


@dataclass
class ControlSchedule:
    """Piecewise-constant ``alpha`` and ``xi``; cell ``k`` covers ``[k, k+1) grid_dt``."""
    grid_dt: float
    alpha: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if self.alpha.shape != self.xi.shape or self.alpha.ndim != 1:
            raise ValueError("alpha and xi must be 1-D arrays of equal length")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.alpha.size) * self.grid_dt

    @classmethod
    def constant(cls, cfg: StochControlConfig, alpha: float, xi: float) -> "ControlSchedule":
        return cls(cfg.grid_dt, np.full(cfg.n_cells, float(alpha)), np.full(cfg.n_cells, float(xi)))

    def within(self, cfg: StochControlConfig) -> bool:
        (al, ah), (xl, xh) = cfg.alpha_bounds, cfg.xi_bounds
        return bool(np.all((self.alpha >= al) & (self.alpha <= ah) & (self.xi >= xl) & (self.xi <= xh)))

    def to_dict(self) -> dict:
        return {"grid_dt": self.grid_dt, "alpha": self.alpha.tolist(), "xi": self.xi.tolist()}


# --- Hamiltonian ----------------------------------------------------------------------------

def _D(x, y, alpha, xi, p: ModelParams):
    return (1.0 + alpha * xi + p.eps * y) * (p.omega * x * x + 1.0) + x


def stoch_hamiltonian(s, costate, alpha, xi, cfg: StochControlConfig, p: ModelParams):
    """``rho_alpha alpha^2 + rho_xi xi^2 + p1 f_x + p2 f_y``."""
    x, y = s
    p1, p2 = costate
    fx, fy = field_xy(x, y, p, alpha, xi)
    return cfg.rho_alpha * alpha ** 2 + cfg.rho_xi * xi ** 2 + p1 * fx + p2 * fy


def dH_dx(s, costate, alpha, xi, p: ModelParams):
    x, y = s
    p1, p2 = costate
    B = 1.0 + alpha * xi + p.eps * y
    D2 = _D(x, y, alpha, xi, p) ** 2
    w = 1.0 - p.omega * x * x
    return (p1 * (1.0 - 2.0 * x / p.gamma - w * B * y / D2)
            + p.delta * p2 * y * w * (B - xi) / D2)


def dH_dy(s, costate, alpha, xi, p: ModelParams):
    x, y = s
    p1, p2 = costate
    u = p.omega * x * x + 1.0
    D2 = _D(x, y, alpha, xi, p) ** 2
    rest = (1.0 + alpha * xi) * u + x
    return -p1 * x * rest / D2 + p2 * (p.delta * (x + xi * u) * rest / D2 - p.m)


def dH_dalpha(s, costate, alpha, xi, cfg: StochControlConfig, p: ModelParams):
    x, y = s
    p1, p2 = costate
    u = p.omega * x * x + 1.0
    D2 = _D(x, y, alpha, xi, p) ** 2
    return 2.0 * cfg.rho_alpha * alpha - xi * u / D2 * (p.delta * p2 * y * (x + xi * u) - p1 * x * y)


def dH_dxi(s, costate, alpha, xi, cfg: StochControlConfig, p: ModelParams):
    x, y = s
    p1, p2 = costate
    u = p.omega * x * x + 1.0
    D2 = _D(x, y, alpha, xi, p) ** 2
    return 2.0 * cfg.rho_xi * xi + y * u / D2 * (
        alpha * p1 * x + p.delta * p2 * ((1.0 - alpha) * x + (1.0 + p.eps * y) * u))


def terminal_costate(s, alpha, xi, cfg: StochControlConfig, p: ModelParams):
    """Costates at the hitting time for the configured terminal rule."""
    x, y = s
    if cfg.terminal == "zero":
        return np.zeros_like(np.asarray(x, float)), np.zeros_like(np.asarray(x, float))
    fx, _ = field_xy(x, y, p, alpha, xi)
    L = 1.0 + cfg.rho_alpha * alpha ** 2 + cfg.rho_xi * xi ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = np.where(fx < 0, -L / fx, 0.0)
    return p1, np.zeros_like(p1)


def _adjoint_rhs(z, pp, alpha, xi, p):
    return -dH_dx(z, pp, alpha, xi, p), -dH_dy(z, pp, alpha, xi, p)


def _rk4_back(z_left, z_right, pp, alpha, xi, h, p):
    """One backward RK4 step of the adjoint over a linear state segment."""
    zm = (0.5 * (z_left[0] + z_right[0]), 0.5 * (z_left[1] + z_right[1]))
    k1 = _adjoint_rhs(z_right, pp, alpha, xi, p)
    k2 = _adjoint_rhs(zm, (pp[0] - 0.5 * h * k1[0], pp[1] - 0.5 * h * k1[1]), alpha, xi, p)
    k3 = _adjoint_rhs(zm, (pp[0] - 0.5 * h * k2[0], pp[1] - 0.5 * h * k2[1]), alpha, xi, p)
    k4 = _adjoint_rhs(z_left, (pp[0] - h * k3[0], pp[1] - h * k3[1]), alpha, xi, p)
    return (pp[0] - h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0,
            pp[1] - h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0)


def _rk4_fwd(z_left, z_right, pp, alpha, xi, h, p):
    zm = (0.5 * (z_left[0] + z_right[0]), 0.5 * (z_left[1] + z_right[1]))
    k1 = _adjoint_rhs(z_left, pp, alpha, xi, p)
    k2 = _adjoint_rhs(zm, (pp[0] + 0.5 * h * k1[0], pp[1] + 0.5 * h * k1[1]), alpha, xi, p)
    k3 = _adjoint_rhs(zm, (pp[0] + 0.5 * h * k2[0], pp[1] + 0.5 * h * k2[1]), alpha, xi, p)
    k4 = _adjoint_rhs(z_right, (pp[0] + h * k3[0], pp[1] + h * k3[1]), alpha, xi, p)
    return (pp[0] + h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0,
            pp[1] + h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0)


def _cell_controls(schedule: ControlSchedule, times):
    k = np.minimum((np.asarray(times) / schedule.grid_dt + 1e-9).astype(int), schedule.alpha.size - 1)
    return schedule.alpha[k], schedule.xi[k]


@dataclass
class CostatePath:
    times: np.ndarray
    costates: np.ndarray  # (n, 2)


def adjoint_sweep(path, schedule: ControlSchedule, cfg: StochControlConfig, p: ModelParams,
                  hit: bool = True) -> CostatePath:
    """Backward RK4 of the adjoints along a realized trajectory.

    ``path`` has ``times`` and ``states``; the last point is the terminal
    time (hit or censored). Censored paths (``hit=False``) start from zero.
    """
    t = np.asarray(path.times, float)
    z = np.asarray(path.states, float)
    n = t.size
    a, x = _cell_controls(schedule, t[:-1]) if n > 1 else (np.zeros(0), np.zeros(0))
    P = np.zeros((n, 2))
    if hit and n > 1:
        P[-1] = [float(v) for v in terminal_costate(z[-1], a[-1], x[-1], cfg, p)]
    for j in range(n - 2, -1, -1):
        P[j] = _rk4_back(z[j], z[j + 1], P[j + 1], a[j], x[j], t[j + 1] - t[j], p)
    return CostatePath(t, P)


def forward_costates(path, schedule: ControlSchedule, p: ModelParams, p0) -> np.ndarray:
    """Forward RK4 of the adjoint from ``p0``; used for round-trip checks."""
    t = np.asarray(path.times, float)
    z = np.asarray(path.states, float)
    a, x = _cell_controls(schedule, t[:-1])
    P = np.zeros((t.size, 2))
    P[0] = p0
    for j in range(t.size - 1):
        P[j + 1] = _rk4_fwd(z[j], z[j + 1], P[j], a[j], x[j], t[j + 1] - t[j], p)
    return P


def projected_gradient_update(schedule: ControlSchedule, gradients, cfg: StochControlConfig,
                              scale: float = 1.0) -> ControlSchedule:
    """``Proj(u - scale * eta * dH/du)`` cell by cell for both controls."""
    ga, gx = gradients
    (al, ah), (xl, xh) = cfg.alpha_bounds, cfg.xi_bounds
    alpha = np.clip(schedule.alpha - scale * cfg.eta1 * np.asarray(ga), al, ah)
    xi = np.clip(schedule.xi - scale * cfg.eta2 * np.asarray(gx), xl, xh)
    return ControlSchedule(schedule.grid_dt, alpha, xi)


# --- batch machinery ------------------------------------------------------------------------

def _path_lengths(batch, cfg):
    T = np.where(np.isnan(batch.hitting_times), cfg.t_max, batch.hitting_times)
    return T


def path_costs(batch, schedule: ControlSchedule, cfg: StochControlConfig) -> np.ndarray:
    """``T_i + int_0^{T_i} (rho_alpha alpha^2 + rho_xi xi^2) dt`` per path."""
    T = _path_lengths(batch, cfg)
    rate = cfg.rho_alpha * schedule.alpha ** 2 + cfg.rho_xi * schedule.xi ** 2
    edges = np.concatenate([[0.0], np.cumsum(rate * schedule.grid_dt)])
    k = np.minimum((T / schedule.grid_dt).astype(int), rate.size - 1)
    partial = edges[k] + rate[k] * (T - k * schedule.grid_dt)
    return T + partial


def _batch_gradients(batch, schedule: ControlSchedule, cfg: StochControlConfig, p: ModelParams):
    """Batch-mean ``dH/dalpha`` and ``dH/dxi`` per cell, weighted by covered time."""
    last = batch.steps_taken.astype(int)  # index of the terminal point
    K = batch.states.shape[1] - 1
    P_n = batch.states.shape[0]
    ga = np.zeros(schedule.alpha.size)
    gx = np.zeros(schedule.xi.size)
    if K == 0:
        return ga, gx
    # hold every path at its terminal state after it stops
    fill = np.minimum(np.arange(K + 1)[None, :], last[:, None])
    S = np.take_along_axis(batch.states, fill[..., None], axis=1)
    X, Y = S[..., 0], S[..., 1]
    dt = cfg.dt
    hit = ~np.isnan(batch.hitting_times)
    T = _path_lengths(batch, cfg)
    tj = np.arange(K) * dt
    a_j, x_j = _cell_controls(schedule, tj)
    cells = np.minimum((tj / schedule.grid_dt + 1e-9).astype(int), schedule.alpha.size - 1)
    kt = np.maximum(last - 1, 0)
    q1, q2 = terminal_costate((X[np.arange(P_n), last], Y[np.arange(P_n), last]), a_j[kt], x_j[kt], cfg, p)
    q1 = np.where(hit & (last > 0), q1, 0.0)
    q2 = np.where(hit & (last > 0), q2, 0.0)
    p1 = np.zeros(P_n)
    p2 = np.zeros(P_n)
    inv = 1.0 / schedule.grid_dt
    for j in range(K - 1, -1, -1):
        start = last == j + 1
        p1 = np.where(start, q1, p1)
        p2 = np.where(start, q2, p2)
        h = np.where(start, T - j * dt, dt) * (last >= j + 1)
        zl = (X[:, j], Y[:, j])
        zr = (X[:, j + 1], Y[:, j + 1])
        pr = (p1, p2)
        # gradient at the left state with the costate at the right end of the step
        w = h * inv
        ga[cells[j]] += w @ dH_dalpha(zl, pr, a_j[j], x_j[j], cfg, p)
        gx[cells[j]] += w @ dH_dxi(zl, pr, a_j[j], x_j[j], cfg, p)
        p1, p2 = _rk4_back(zl, zr, pr, a_j[j], x_j[j], h, p)
    return ga / P_n, gx / P_n


def _train_batch(s0, p, n, cfg, seed, schedule, workers=1, chunk=256):
    pc = cfg.path_config(seed, TRAIN_STREAM)
    idx = np.arange(cfg.n_train_paths)
    jobs = [(tuple(s0), p, n, pc, idx[a:a + chunk], schedule) for a in range(0, idx.size, chunk)]
    parts = pmap(_train_job, jobs, workers=workers)
    return parts


def _train_job(args):
    s0, p, n, pc, idx, schedule = args
    return simulate_batch(s0, p, n, pc, idx, schedule, record=idx.size)


def _batch_cost(parts, schedule, cfg):
    return float(np.mean(np.concatenate([path_costs(b, schedule, cfg) for b in parts])))


def _batch_grad(parts, schedule, cfg, p):
    ga = np.zeros(schedule.alpha.size)
    gx = np.zeros(schedule.xi.size)
    total = 0
    for b in parts:
        a, x = _batch_gradients(b, schedule, cfg, p)
        m = b.states.shape[0]
        ga += a * m
        gx += x * m
        total += m
    return ga / total, gx / total


@dataclass
class OptimizeResult:
    schedule: ControlSchedule
    history: list
    status: str
    metadata: dict = field(default_factory=dict)


def optimize(cfg: StochControlConfig, p: ModelParams, n: NoiseParams, s0, seed: int,
             schedule: ControlSchedule | None = None, workers: int = 1) -> OptimizeResult:
    """Projected-gradient forward-backward sweeps on a common-random-number batch.

    Stops when the batch cost changes by less than ``rel_tol`` (relative)
    over ``patience`` sweeps, after ``max_sweeps``, or with status
    ``"stalled"`` after ``max_failures`` consecutive sweeps in which no
    halving of the step lowers the cost.
    """
    if schedule is None:
        schedule = ControlSchedule.constant(cfg, *cfg.baseline)
    parts = _train_batch(s0, p, n, cfg, seed, schedule, workers)
    J = _batch_cost(parts, schedule, cfg)
    history = [{"sweep": 0, "cost": J, "step": 0.0, "halvings": 0, "accepted": True,
                "mean_hitting_time": float(np.mean(np.concatenate([_path_lengths(b, cfg) for b in parts])))}]
    status = "max_sweeps"
    failures = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        grads = _batch_grad(parts, schedule, cfg, p)
        scale = 1.0
        accepted = False
        for halvings in range(cfg.max_halvings + 1):
            trial = projected_gradient_update(schedule, grads, cfg, scale)
            if np.array_equal(trial.alpha, schedule.alpha) and np.array_equal(trial.xi, schedule.xi):
                break
            tparts = _train_batch(s0, p, n, cfg, seed, trial, workers)
            Jt = _batch_cost(tparts, trial, cfg)
            if Jt < J:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            schedule, parts, J = trial, tparts, Jt
            failures = 0
        else:
            failures += 1
        history.append({"sweep": sweep, "cost": J, "step": scale if accepted else 0.0,
                        "halvings": halvings, "accepted": accepted,
                        "mean_hitting_time": float(np.mean(np.concatenate([_path_lengths(b, cfg) for b in parts])))})
        if failures >= cfg.max_failures:
            status = "stalled"
            break
        if not accepted and halvings == 0:
            status = "stationary"
            break
        if sweep >= cfg.patience:
            ref = history[-1 - cfg.patience]["cost"]
            if abs(ref - J) <= cfg.rel_tol * abs(ref):
                status = "converged"
                break
    meta = {"update_mode": UPDATE_MODE, "terminal": cfg.terminal, "train_stream": TRAIN_STREAM,
            "seed": int(seed)}
    return OptimizeResult(schedule, history, status, meta)


@dataclass
class Evaluation:
    controlled: EnsembleResult
    uncontrolled: EnsembleResult
    cost_controlled: float
    cost_uncontrolled: float
    unreliable: bool
    baseline: tuple


def _ensemble_costs(res: EnsembleResult, schedule: ControlSchedule, cfg: StochControlConfig):
    class _B:
        hitting_times = np.where(res.censored, np.nan, res.hitting_times)
    return float(np.mean(path_costs(_B, schedule, cfg)))


def evaluate(schedule: ControlSchedule, cfg: StochControlConfig, p: ModelParams, n: NoiseParams,
             s0, seed: int, workers: int = 1, record: int = 10) -> Evaluation:
    """Fresh ensembles for the schedule and for the constant baseline schedule."""
    base = ControlSchedule.constant(cfg, *cfg.baseline)
    ctl = simulate_ensemble(s0, p, n, cfg.path_config(seed, EVAL_CONTROLLED_STREAM), cfg.n_eval_paths,
                            schedule, record=record, workers=workers)
    unc = simulate_ensemble(s0, p, n, cfg.path_config(seed, EVAL_UNCONTROLLED_STREAM), cfg.n_eval_paths,
                            base, record=record, workers=workers)
    unreliable = max(ctl.censored_fraction, unc.censored_fraction) > UNRELIABLE_CENSORING
    return Evaluation(ctl, unc, _ensemble_costs(ctl, schedule, cfg), _ensemble_costs(unc, base, cfg),
                      unreliable, cfg.baseline)


def uncontrolled_mean(sigma: float, cfg: StochControlConfig, p: ModelParams, n: NoiseParams, s0,
                      seed: int, workers: int = 1) -> float:
    """Mean hitting time of the baseline arm on its evaluation stream."""
    base = ControlSchedule.constant(cfg, *cfg.baseline)
    res = simulate_ensemble(s0, p, n.with_sigma(sigma), cfg.path_config(seed, EVAL_UNCONTROLLED_STREAM),
                            cfg.n_eval_paths, base, workers=workers)
    return float(np.mean(res.hitting_times))


def calibrate_sigma(cfg: StochControlConfig, p: ModelParams, n: NoiseParams, s0, seed: int,
                    target: float, lo: float = 0.0, hi: float = 3.0, tol: float = 0.01,
                    max_iter: int = 30, workers: int = 1):
    """Common ``sigma1 = sigma2`` placing the baseline mean hitting time at ``target``.

    Bisection on the baseline arm's own evaluation stream; the mean is
    decreasing in ``sigma`` over the bracket. Returns ``(sigma, mean, trace)``.
    """
    f_lo = uncontrolled_mean(lo, cfg, p, n, s0, seed, workers) - target
    f_hi = uncontrolled_mean(hi, cfg, p, n, s0, seed, workers) - target
    trace = [(lo, f_lo + target), (hi, f_hi + target)]
    if f_lo * f_hi > 0:
        raise ValueError("target mean is not bracketed by the sigma interval")
    mid, fm = lo, f_lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = uncontrolled_mean(mid, cfg, p, n, s0, seed, workers) - target
        trace.append((mid, fm + target))
        if abs(fm) <= tol:
            break
        if (fm > 0) == (f_lo > 0):
            lo, f_lo = mid, fm
        else:
            hi, f_hi = mid, fm
    return mid, fm + target, trace


def ensemble_means(res: EnsembleResult, schedule: ControlSchedule, dt: float):
    """Mean prey, predator and controls over recorded paths still running at each time."""
    rows = []
    if not res.trajectories:
        return rows
    K = max(len(t.times) for t in res.trajectories)
    for k in range(K):
        xs = [t.states[k] for t in res.trajectories if k < len(t.times)]
        tk = k * dt
        a, x = _cell_controls(schedule, [tk])
        arr = np.array(xs)
        rows.append((tk, float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(a[0]), float(x[0])))
    return rows
