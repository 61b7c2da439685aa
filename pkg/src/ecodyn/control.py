"""Time-optimal control of the prey by food quality or food quantity.

The time change ``dt = D ds`` turns the system into one that is polynomial
in the state::

    x' = x (1 - x/gamma) D - x y
    y' = delta (x + xi (omega x^2 + 1)) y - D m y
    t' = D

and the elapsed time ``T = int D ds`` is the objective. The problem is
transcribed by direct multiple shooting. Node states, one constant control
per interval and the transformed horizon ``S`` are the unknowns. Each
interval is propagated by RK4 with exact forward sensitivities. Continuity
and boundary conditions are equality constraints handled by an
augmented-Lagrangian outer loop around L-BFGS-B; once the iterate is
nearly feasible an active-set SQP step (SLSQP) finishes the solve.

Two Hamiltonians are exposed. ``time_weight=0`` gives the Hamiltonian of
the transformed problem without the running cost ``D``, along with its
adjoint and switching function. ``time_weight=1`` adds ``D`` and matches
the objective ``T``; the costates recovered from the transcription satisfy
this second adjoint system.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import ModelParams, State
from .simulate import integrate

SINGULAR_TOL = 1e-6
DEFECT_TOL = 1e-8
KKT_TOL = 1e-6
POLISH_START = 1e-3


class ControlKind(str, enum.Enum):
    QUALITY = "quality"
    QUANTITY = "quantity"


@dataclass(frozen=True)
class ControlProblem:
    """Steer ``start`` to ``target`` in minimum time.

    ``params`` supplies every model constant; its field for the controlled
    quantity (``alpha`` for quality, ``xi`` for quantity) is ignored.
    """

    params: ModelParams
    control: ControlKind
    start: State
    target: State
    bounds: tuple = (0.0, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "control", ControlKind(self.control))
        lo, hi = (float(b) for b in self.bounds)
        if not lo < hi:
            raise ValueError("bounds must satisfy u_min < u_max")
        if lo < 0:
            raise ValueError("food controls must be nonnegative")
        object.__setattr__(self, "bounds", (lo, hi))
        for s in (self.start, self.target):
            if s.x <= 0 or s.y <= 0:
                raise ValueError("start and target must be strictly positive")


def _alpha_xi(p: ModelParams, kind: ControlKind, u):
    if kind is ControlKind.QUALITY:
        return u, p.xi
    return p.alpha, u


def transform_dynamics(p: ModelParams, kind: ControlKind):
    """Return ``F(x, y, u) -> (dx/ds, dy/ds, dt/ds)``; broadcasts over arrays."""
    kind = ControlKind(kind)

    def F(x, y, u):
        a, xi = _alpha_xi(p, kind, u)
        q = p.omega * x * x + 1.0
        D = (1.0 + a * xi + p.eps * y) * q + x
        return (x * (1.0 - x / p.gamma) * D - x * y,
                p.delta * (x + xi * q) * y - D * p.m * y,
                D)
    return F


def _partials(p: ModelParams, kind: ControlKind, x, y, u):
    """Transformed field ``F`` (n,3), state Jacobian (n,3,2) and ``dF/du`` (n,3)."""
    a, xi = _alpha_xi(p, kind, u)
    g, e, d, m, w = p.gamma, p.eps, p.delta, p.m, p.omega
    q = w * x * x + 1.0
    B = 1.0 + a * xi + e * y
    D = B * q + x
    Dx = 2.0 * w * x * B + 1.0
    Dy = q * e
    Du = q * xi if kind is ControlKind.QUALITY else q * a
    s = 1.0 - x / g
    F = np.stack([x * s * D - x * y, d * (x + xi * q) * y - D * m * y, D], axis=-1)
    J = np.empty(x.shape + (3, 2))
    J[..., 0, 0] = (1.0 - 2.0 * x / g) * D + x * s * Dx - y
    J[..., 0, 1] = x * s * Dy - x
    J[..., 1, 0] = d * (1.0 + 2.0 * xi * w * x) * y - Dx * m * y
    J[..., 1, 1] = d * (x + xi * q) - Dy * m * y - D * m
    J[..., 2, 0] = Dx
    J[..., 2, 1] = Dy
    Fu = np.empty(x.shape + (3,))
    Fu[..., 0] = x * s * Du
    Fu[..., 1] = (d * q * y if kind is ControlKind.QUANTITY else 0.0) - Du * m * y
    Fu[..., 2] = Du
    return F, J, Fu


def hamiltonian(s, costate, u, kind, p: ModelParams, time_weight: float = 0.0):
    """``H = p x' + q y' + time_weight D`` in the transformed variable."""
    x, y = s
    pc, qc = costate
    fx, fy, D = transform_dynamics(p, kind)(x, y, u)
    return pc * fx + qc * fy + time_weight * D


def adjoint_rhs(s, costate, u, kind, p: ModelParams, time_weight: float = 0.0):
    """``(dp/ds, dq/ds) = -dH/d(x, y)`` written out in closed form."""
    kind = ControlKind(kind)
    x, y = s
    pc, qc = costate
    a, xi = _alpha_xi(p, kind, u)
    g, e, d, m, w = p.gamma, p.eps, p.delta, p.m, p.omega
    B = 1.0 + a * xi + e * y
    q = w * x * x + 1.0
    dp = (pc * (y - x * (2.0 - 3.0 * x / g) - B * (1.0 - 2.0 * x / g + 3.0 * w * x * x - 4.0 * w * x ** 3 / g))
          + qc * y * (m * (2.0 * w * x * B + 1.0) - d * (1.0 + 2.0 * xi * w * x)))
    dq = (pc * x * (1.0 - e * q * (1.0 - x / g))
          + qc * ((m - d) * x + q * (m * (1.0 + a * xi + 2.0 * e * y) - d * xi)))
    if time_weight:
        dp = dp - time_weight * (2.0 * w * x * B + 1.0)
        dq = dq - time_weight * q * e
    return dp, dq


def switching_function(s, costate, u, kind, p: ModelParams, time_weight: float = 0.0):
    """``dH/du``; independent of ``u`` because ``H`` is affine in the control."""
    kind = ControlKind(kind)
    x, y = s
    pc, qc = costate
    q = p.omega * x * x + 1.0
    if kind is ControlKind.QUALITY:
        xi = p.xi
        val = pc * x * xi * (1.0 - x / p.gamma) * q - qc * xi * p.m * y * q
        Du = q * xi
    else:
        a = p.alpha
        val = pc * x * a * (1.0 - x / p.gamma) * q + qc * p.delta * y * q - qc * a * p.m * y * q
        Du = q * a
    return val + time_weight * Du


class Bang(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    SINGULAR = "singular"


def bang_bang_law(switching_value: float, bounds, tol: float = SINGULAR_TOL):
    """Minimizing control for a switching value: ``(u, flag)``.

    Negative switching selects the upper bound, positive the lower one;
    ``|switching| < tol`` is flagged singular and returns the midpoint.
    """
    lo, hi = bounds
    if abs(switching_value) < tol:
        return 0.5 * (lo + hi), Bang.SINGULAR
    if switching_value < 0:
        return hi, Bang.UPPER
    return lo, Bang.LOWER


# --- shooting ------------------------------------------------------------------------------

def _propagate(p, kind, Z, U, h, M, sens=True):
    """RK4 over ``M`` substeps of each interval, vectorized over intervals.

    Returns end states (n,2), elapsed times (n,), and when ``sens`` the
    tangents of both with respect to ``(x0, y0, u, h)``: (n,2,4), (n,4).
    """
    n = Z.shape[0]
    z = Z.copy()
    tau = np.zeros(n)
    eta = h / M
    if sens:
        Zt = np.zeros((n, 2, 4))
        Zt[:, 0, 0] = 1.0
        Zt[:, 1, 1] = 1.0
        taut = np.zeros((n, 4))
        eu = np.array([0.0, 0.0, 1.0, 0.0])
        eh = np.array([0.0, 0.0, 0.0, 1.0 / M])
    for _ in range(M):
        ks, kts = [], []
        zs, zts = z, (Zt if sens else None)
        for c in (0.0, 0.5, 0.5, 1.0):
            if c:
                zs = z + c * eta * ks[-1][:, :2]
                if sens:
                    zts = Zt + c * eta * kts[-1][:, :2, :] + c * ks[-1][:, :2, None] * eh
            F, J, Fu = _partials(p, kind, zs[:, 0], zs[:, 1], U)
            ks.append(F)
            if sens:
                kts.append(np.einsum("nij,njk->nik", J, zts) + Fu[:, :, None] * eu)
        comb = (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]) / 6.0
        z = z + eta * comb[:, :2]
        tau = tau + eta * comb[:, 2]
        if sens:
            combt = (kts[0] + 2.0 * kts[1] + 2.0 * kts[2] + kts[3]) / 6.0
            Zt = Zt + eta * combt[:, :2, :] + comb[:, :2, None] * eh
            taut = taut + eta * combt[:, 2, :] + comb[:, 2, None] * eh
    if sens:
        return z, tau, Zt, taut
    return z, tau


class _Transcription:
    def __init__(self, problem: ControlProblem, N: int, M: int):
        self.pb = problem
        self.p = problem.params
        self.kind = problem.control
        self.N = N
        self.M = M
        self.start = np.array(tuple(problem.start))
        self.target = np.array(tuple(problem.target))
        self.n = 2 * (N + 1) + N + 1
        lo, hi = problem.bounds
        self.lb = np.concatenate([np.full(2 * (N + 1), 1e-8), np.full(N, lo), [1e-8]])
        self.ub = np.concatenate([np.full(2 * (N + 1), np.inf), np.full(N, hi), [np.inf]])

    def unpack(self, v):
        N = self.N
        return v[:2 * (N + 1)].reshape(N + 1, 2), v[2 * (N + 1):2 * (N + 1) + N], v[-1]

    def pack(self, Z, U, S):
        return np.concatenate([np.ravel(Z), U, [S]])

    def evaluate(self, v):
        Z, U, S = self.unpack(v)
        h = S / self.N
        Phi, tau, Zt, taut = _propagate(self.p, self.kind, Z[:-1], U, h, self.M)
        c = np.concatenate([Z[0] - self.start, (Z[1:] - Phi).ravel(), Z[-1] - self.target])
        return tau.sum(), c, (Zt, taut)

    def grad_T(self, sens):
        Zt, taut = sens
        N = self.N
        g = np.zeros(self.n)
        gZ = g[:2 * (N + 1)].reshape(N + 1, 2)
        gZ[:-1] = taut[:, :2]
        g[2 * (N + 1):2 * (N + 1) + N] = taut[:, 2]
        g[-1] = taut[:, 3].sum() / N
        return g

    def jac_T_vec(self, sens, w):
        """``J_c^T w`` for the stacked constraint vector."""
        Zt, _ = sens
        N = self.N
        w0 = w[:2]
        W = w[2:2 + 2 * N].reshape(N, 2)
        wT = w[-2:]
        g = np.zeros(self.n)
        gZ = g[:2 * (N + 1)].reshape(N + 1, 2)
        gZ[0] += w0
        gZ[1:] += W
        gZ[-1] += wT
        proj = np.einsum("nik,ni->nk", Zt, W)
        gZ[:-1] -= proj[:, :2]
        g[2 * (N + 1):2 * (N + 1) + N] -= proj[:, 2]
        g[-1] -= proj[:, 3].sum() / N
        return g

    def jacobian(self, sens):
        """Dense constraint Jacobian, rows ordered as in :meth:`evaluate`."""
        Zt, _ = sens
        N = self.N
        A = np.zeros((4 + 2 * N, self.n))
        A[0:2, 0:2] = np.eye(2)
        iu = 2 * (N + 1)
        for k in range(N):
            r = 2 + 2 * k
            A[r:r + 2, 2 * (k + 1):2 * (k + 1) + 2] = np.eye(2)
            A[r:r + 2, 2 * k:2 * k + 2] = -Zt[k, :, :2]
            A[r:r + 2, iu + k] = -Zt[k, :, 2]
            A[r:r + 2, -1] = -Zt[k, :, 3] / N
        A[-2:, 2 * N:2 * N + 2] = np.eye(2)
        return A

    def lagrangian_grad(self, v, lam):
        T, c, sens = self.evaluate(v)
        return self.grad_T(sens) + self.jac_T_vec(sens, lam)

    def projected_gradient(self, v, g):
        return v - np.clip(v - g, self.lb, self.ub)


@dataclass
class ControlSolution:
    n_intervals: int
    s_grid: np.ndarray
    t_grid: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    costates: np.ndarray
    optimal_time: float
    switching: np.ndarray
    singular: np.ndarray
    kkt_residual: float
    max_defect: float
    endpoint_error: float
    costate_residual: float
    sign_agreement: float
    converged: bool
    iterations: int
    message: str = ""
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_intervals": self.n_intervals,
            "optimal_time": self.optimal_time,
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
            "max_defect": self.max_defect,
            "endpoint_error": self.endpoint_error,
            "costate_residual": self.costate_residual,
            "sign_agreement": self.sign_agreement,
            "iterations": self.iterations,
            "message": self.message,
            "s_grid": self.s_grid.tolist(),
            "t_grid": self.t_grid.tolist(),
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "costates": self.costates.tolist(),
            "switching": self.switching.tolist(),
            "singular": self.singular.tolist(),
        }


def _initial_time(problem: ControlProblem, u0: float, t_max: float = 50.0) -> float:
    """Time of closest approach to the target under the constant initial control."""
    a, xi = _alpha_xi(problem.params, problem.control, u0)
    traj = integrate(tuple(problem.start), problem.params, t_max, 0.01, alpha=a, xi=xi, stride=5)
    d = np.hypot(traj.x - problem.target.x, traj.y - problem.target.y)
    return max(float(traj.times[int(np.argmin(d))]), 0.1)


def solve(problem: ControlProblem, n_intervals: int = 100, substeps: int = 4,
          max_outer: int = 30, inner_maxiter: int = 500,
          initial_time: float | None = None) -> ControlSolution:
    """Minimum-time control by multiple shooting and an augmented Lagrangian.

    Converged when every defect is below 1e-8 and the projected gradient of
    the Lagrangian is below 1e-6. Otherwise the least-infeasible iterate
    is returned with ``converged=False``.
    """
    if n_intervals < 10:
        raise ValueError("n_intervals must be at least 10")
    start = np.array(tuple(problem.start))
    target = np.array(tuple(problem.target))
    if np.allclose(start, target, rtol=0, atol=1e-12):
        empty = np.zeros(0)
        return ControlSolution(0, np.zeros(1), np.zeros(1), start[None, :], empty,
                               np.zeros((1, 2)), 0.0, empty, np.zeros(0, bool), 0.0, 0.0, 0.0,
                               0.0, 1.0, True, 0, "target equals start")
    N = n_intervals
    tr = _Transcription(problem, N, substeps)
    lo, hi = problem.bounds
    u0 = 0.5 * (lo + hi)
    T0 = _initial_time(problem, u0) if initial_time is None else initial_time
    Z0 = np.linspace(start, target, N + 1)
    a0, xi0 = _alpha_xi(problem.params, problem.control, u0)
    Dbar = np.mean(((1.0 + a0 * xi0 + problem.params.eps * Z0[:, 1]) * (problem.params.omega * Z0[:, 0] ** 2 + 1.0)
                    + Z0[:, 0]))
    v = tr.pack(Z0, np.full(N, u0), T0 / Dbar)
    out = _al_solve(tr, v, max_outer, inner_maxiter)
    if not out[5] and out[1] > 1e-6:
        # linear interpolation stalled away from feasibility: restart on the simulated orbit
        Zs, Ss = _simulated_nodes(tr, u0)
        alt = _al_solve(tr, tr.pack(Zs, np.full(N, u0), Ss), max_outer, inner_maxiter)
        alt[7][:0] = [dict(h, restart="linear") for h in out[7]]
        if (alt[5], -alt[1]) > (out[5], -out[1]):
            out = alt
        else:
            out[7].extend(dict(h, restart="simulated") for h in alt[7])
    v, viol, T, lam, kkt, converged, it, history = out
    return _finish(tr, problem, v, lam, viol, kkt, converged, it, history)


def _simulated_nodes(tr: _Transcription, u0: float, ds: float = 0.01, t_max: float = 50.0):
    """Nodes on the constant-control orbit up to its closest approach to the target."""
    z = tr.start[None, :].copy()
    zs, ts = [z[0]], [0.0]
    t = 0.0
    U = np.array([u0])
    while t < t_max:
        z, tau = _propagate(tr.p, tr.kind, z, U, ds, 1, sens=False)
        t += float(tau[0])
        zs.append(z[0])
        ts.append(t)
    zs = np.array(zs)
    k = max(int(np.argmin(np.hypot(*(zs - tr.target).T))), 1)
    S = k * ds
    sg = np.arange(k + 1) * ds
    nodes = np.linspace(0.0, S, tr.N + 1)
    Z = np.column_stack([np.interp(nodes, sg, zs[:k + 1, 0]), np.interp(nodes, sg, zs[:k + 1, 1])])
    return Z, S


def _al_solve(tr: _Transcription, v, max_outer: int, inner_maxiter: int):
    """Augmented-Lagrangian outer loop with L-BFGS-B inner solves and an SQP finish."""
    N = tr.N
    m_c = 4 + 2 * N
    lam = np.zeros(m_c)
    mu = 10.0
    prev_viol = np.inf
    best = None
    history = []
    converged = False
    inner_tol = 1e-5
    polish_tries = 0
    it = 0
    for it in range(1, max_outer + 1):
        def merit(vv, lam=lam, mu=mu):
            T, c, sens = tr.evaluate(vv)
            w = lam + mu * c
            val = T + lam @ c + 0.5 * mu * (c @ c)
            return val, tr.grad_T(sens) + tr.jac_T_vec(sens, w)

        res = minimize(merit, v, jac=True, method="L-BFGS-B", bounds=list(zip(tr.lb, tr.ub)),
                       options={"maxiter": inner_maxiter, "maxcor": 30, "ftol": 1e-16,
                                "gtol": inner_tol, "maxfun": 4 * inner_maxiter})
        v = res.x
        T, c, sens = tr.evaluate(v)
        lam = lam + mu * c
        viol = float(np.max(np.abs(c)))
        gL = tr.grad_T(sens) + tr.jac_T_vec(sens, lam)
        kkt = float(np.max(np.abs(tr.projected_gradient(v, gL))))
        history.append({"outer": it, "T": float(T), "violation": viol, "kkt": kkt, "mu": mu,
                        "inner_iterations": int(res.nit)})
        if best is None or (viol, T) < (best[1], best[2]) or (viol < DEFECT_TOL and T < best[2]):
            best = (v.copy(), viol, float(T), lam.copy(), kkt)
        if viol < DEFECT_TOL and kkt < KKT_TOL:
            converged = True
            best = (v.copy(), viol, float(T), lam.copy(), kkt)
            break
        if viol < POLISH_START and polish_tries < 2:
            polish_tries += 1
            v2, lam2, viol2, kkt2, ok = _sqp_polish(tr, v, lam, history)
            if ok:
                converged = True
                best = (v2, viol2, float(tr.evaluate(v2)[0]), lam2, kkt2)
                break
            if viol2 < viol:
                v, lam = v2, lam2
        if viol > DEFECT_TOL and viol > 0.25 * prev_viol:
            mu = min(mu * 10.0, 1e8)
        prev_viol = viol
        inner_tol = max(min(inner_tol, kkt) * 0.1, 1e-9)
    v, viol, T, lam, kkt = best
    if not converged and viol < 1e-3 and polish_tries < 3:
        v2, lam2, viol2, kkt2, ok = _sqp_polish(tr, v, lam, history)
        if ok or viol2 < viol:
            v, lam, viol, kkt, converged = v2, lam2, viol2, kkt2, ok
    return v, viol, T, lam, kkt, converged, it, history


def _sqp_polish(tr: _Transcription, v, lam, history, maxiter: int = 200):
    """Finish with an active-set SQP (SLSQP) from the augmented-Lagrangian iterate.

    Multipliers are recovered by least squares on the variables strictly
    inside their bounds.
    """
    cache = {}

    def ev(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = tr.evaluate(x)
        return cache[key]

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Values in x were outside bounds")
        res = minimize(lambda x: ev(x)[0], v, jac=lambda x: tr.grad_T(ev(x)[2]), method="SLSQP",
                       bounds=list(zip(tr.lb, tr.ub)),
                       constraints=[{"type": "eq", "fun": lambda x: ev(x)[1],
                                     "jac": lambda x: tr.jacobian(ev(x)[2])}],
                       options={"maxiter": maxiter, "ftol": 1e-14})
    x = np.clip(res.x, tr.lb, tr.ub)
    T, c, sens = tr.evaluate(x)
    A = tr.jacobian(sens)
    gT = tr.grad_T(sens)
    span = tr.ub - tr.lb
    inner = (x > tr.lb + 1e-9 * np.minimum(span, 1.0)) & (x < tr.ub - 1e-9 * np.minimum(span, 1.0))
    lam2 = np.linalg.lstsq(A[:, inner].T, -gT[inner], rcond=None)[0]
    gL = gT + A.T @ lam2
    viol = float(np.max(np.abs(c)))
    kkt = float(np.max(np.abs(tr.projected_gradient(x, gL))))
    history.append({"polish": int(res.nit), "T": float(T), "violation": viol, "kkt": kkt,
                    "message": str(res.message)})
    return x, lam2, viol, kkt, bool(viol < DEFECT_TOL and kkt < KKT_TOL)


def _costates(tr: _Transcription, lam):
    N = tr.N
    P = np.zeros((N + 1, 2))
    P[1:] = -lam[2:2 + 2 * N].reshape(N, 2)
    return P


def _adjoint_back(tr, z_left, u, h, p_right):
    """Backward RK4 of the ``time_weight=1`` adjoint across one interval per row."""
    M = tr.M
    eta = h / M
    # states at half substeps from a forward pass with twice the resolution
    zs = [z_left]
    z = z_left
    for _ in range(2 * M):
        z, _ = _propagate(tr.p, tr.kind, z, u, eta / 2.0, 1, sens=False)
        zs.append(z)
    pc = p_right.copy()

    def rhs(zz, pp):
        dp, dq = adjoint_rhs((zz[:, 0], zz[:, 1]), (pp[:, 0], pp[:, 1]), u, tr.kind, tr.p, 1.0)
        return np.column_stack([dp, dq])

    for j in range(M, 0, -1):
        z1, zm, z0 = zs[2 * j], zs[2 * j - 1], zs[2 * j - 2]
        k1 = rhs(z1, pc)
        k2 = rhs(zm, pc - 0.5 * eta * k1)
        k3 = rhs(zm, pc - 0.5 * eta * k2)
        k4 = rhs(z0, pc - eta * k3)
        pc = pc - eta * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return pc, zs[M]


def _finish(tr, problem, v, lam, viol, kkt, converged, iterations, history):
    Z, U, S = tr.unpack(v)
    N = tr.N
    h = S / N
    _, tau = _propagate(tr.p, tr.kind, Z[:-1], U, h, tr.M, sens=False)
    t_grid = np.concatenate([[0.0], np.cumsum(tau)])
    P = _costates(tr, lam)
    # p_0 from stationarity in the first node
    _, _, Zt, taut = _propagate(tr.p, tr.kind, Z[:1], U[:1], h, tr.M)
    P[0] = taut[0, :2] + Zt[0, :, :2].T @ P[1]
    p_back, _ = _adjoint_back(tr, Z[:-1], U, h, P[1:])
    scale = max(1.0, float(np.max(np.abs(P))))
    cres = float(np.max(np.abs(p_back - P[:-1]))) / scale
    # switching function at interval midpoints
    z_mid = _propagate(tr.p, tr.kind, Z[:-1], U, h / 2.0, tr.M, sens=False)[0]
    p_mid = _adjoint_half(tr, Z[:-1], U, h, P[1:])
    sw = switching_function((z_mid[:, 0], z_mid[:, 1]), (p_mid[:, 0], p_mid[:, 1]), U, tr.kind, tr.p, 1.0)
    lo, hi = problem.bounds
    sw_scale = max(1.0, float(np.max(np.abs(sw))))
    singular = np.abs(sw) < SINGULAR_TOL * sw_scale
    tol_u = 1e-6 * (hi - lo)
    agree = ((sw < 0) & (U >= hi - tol_u)) | ((sw > 0) & (U <= lo + tol_u))
    decided = ~singular
    frac = float(np.mean(agree[decided])) if decided.any() else 1.0
    return ControlSolution(
        n_intervals=N,
        s_grid=np.linspace(0.0, S, N + 1),
        t_grid=t_grid,
        states=Z,
        controls=U,
        costates=P,
        optimal_time=float(t_grid[-1]),
        switching=sw,
        singular=singular,
        kkt_residual=kkt,
        max_defect=viol,
        endpoint_error=float(np.hypot(*(Z[-1] - tr.target))),
        costate_residual=cres,
        sign_agreement=frac,
        converged=converged,
        iterations=iterations,
        message="converged" if converged else "outer iteration limit reached",
        history=history,
    )


def _adjoint_half(tr, z_left, u, h, p_right):
    """Costate at interval midpoints by integrating back over the right half."""
    z_mid = _propagate(tr.p, tr.kind, z_left, u, h / 2.0, tr.M, sens=False)[0]
    p_mid, _ = _adjoint_back(tr, z_mid, u, h / 2.0, p_right)
    return p_mid


def simulate_schedule(problem: ControlProblem, t_grid, controls, dt: float = 1e-3):
    """Integrate the original dynamics under a piecewise-constant schedule."""
    z = np.array(tuple(problem.start), dtype=float)
    p = problem.params
    for k, u in enumerate(controls):
        a, xi = _alpha_xi(p, problem.control, float(u))
        span = float(t_grid[k + 1] - t_grid[k])
        if span <= 0:
            continue
        n = max(1, int(math.ceil(span / dt)))
        traj = integrate(tuple(z), p, span, span / n, alpha=a, xi=xi, stride=n)
        z = traj.states[-1]
    return z
