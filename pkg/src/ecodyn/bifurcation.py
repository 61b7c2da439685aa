"""Bifurcation points in the food quantity, parameter scans and food regions.

Transversality is checked with Sotomayor's quantities ``W^T H_xi``,
``W^T [DH_xi V]`` and ``W^T [D^2 H (V, V)]``. Each is evaluated twice: by
the closed-form displays and by finite differences of the vector field with
numerically computed null vectors. ``valid`` follows the numeric values.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial

import numpy as np
from scipy.optimize import brentq

from .equilibria import (Kind, axial_equilibria,
                         classify_matrix, det_quadratic, interior_roots, ystar_from_prey)
from .model import ModelParams, State, field_xy, jacobian
from .parallel import pmap

ZERO_TOL = 1e-9


class NotApplicable(ValueError):
    """The theorem's hypotheses fail for these parameters."""


class NoHopf(RuntimeError):
    """No admissible zero of the interior trace was found."""


class BifKind(str, enum.Enum):
    TRANSCRITICAL = "Transcritical"
    SADDLE_NODE = "SaddleNode"
    HOPF = "Hopf"


@dataclass
class BifurcationPoint:
    kind: BifKind
    parameter: str
    value: float
    equilibrium: State
    transversality: dict
    valid: bool
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "parameter": self.parameter,
            "value": self.value,
            "equilibrium": [self.equilibrium.x, self.equilibrium.y],
            "transversality": {k: float(v) for k, v in self.transversality.items()},
            "valid": self.valid,
            "notes": self.notes,
        }


# --- Sotomayor quantities by finite differences --------------------------------

def _H(z, p, xi):
    return np.array(field_xy(z[0], z[1], p, xi=xi))


def _J(z, p, xi):
    return jacobian((z[0], z[1]), p.with_(xi=xi))


def numeric_sotomayor(p: ModelParams, E, V, W, h: float = 1e-5) -> dict:
    E = np.asarray(tuple(E), float)
    V = np.asarray(V, float)
    W = np.asarray(W, float)
    xi = p.xi
    H_xi = (_H(E, p, xi + h) - _H(E, p, xi - h)) / (2 * h)
    DH_xi = (_J(E, p, xi + h) - _J(E, p, xi - h)) / (2 * h)
    d2 = (_J(E + h * V, p, xi) - _J(E - h * V, p, xi)) / (2 * h) @ V
    return {
        "WT_H_xi": float(W @ H_xi),
        "WT_DH_xi_V": float(W @ DH_xi @ V),
        "WT_D2H_VV": float(W @ d2),
    }


def _null_vectors(J):
    """Right and left null vectors (unit norm) of a rank-one 2x2 matrix."""
    U, s, Vt = np.linalg.svd(J)
    return Vt[-1], U[:, -1]


def _sotomayor_pattern(q: dict) -> str:
    a = abs(q["WT_H_xi"]) > ZERO_TOL
    b = abs(q["WT_DH_xi_V"]) > ZERO_TOL
    c = abs(q["WT_D2H_VV"]) > ZERO_TOL
    if a and c:
        return "saddle-node"
    if not a and b and c:
        return "transcritical"
    return "degenerate"


# --- transcritical at E1 --------------------------------------------------------

def transcritical_xi(p: ModelParams) -> BifurcationPoint:
    """Food quantity at which the interior branch crosses ``E1 = (gamma, 0)``."""
    g, a, e, d, m, w = p.gamma, p.alpha, p.eps, p.delta, p.m, p.omega
    u = w * g * g + 1.0
    if abs(d - m * a) < 1e-14 or abs((1.0 - a) * g + u) < 1e-14:
        raise NotApplicable("transcritical theorem requires delta != m alpha and (1-alpha) gamma + omega gamma^2 + 1 != 0")
    xs = (m * (u + g) - d * g) / ((d - m * a) * u)
    q = p.with_(xi=max(xs, 0.0)) if xs >= 0 else None
    disp_V = np.array([1.0, -(g + (1.0 + a * xs) * u) / g])
    disp = {
        "display_WT_H_xi": 0.0,
        "display_WT_DH_xi_V": -a * u * (1.0 + w * g * g + (1.0 - a) * g) / (g * (g + (1.0 + a * xs) * u)),
        "display_WT_D2H_VV": (1.0 + a * xs - xs) * (1.0 - w * g * g) / (g + (1.0 + a * xs) * u)
        + e * (g + xs * u) * u / g,
    }
    notes = {"admissible": xs >= 0}
    if q is None:
        return BifurcationPoint(BifKind.TRANSCRITICAL, "xi", xs, State(g, 0.0), disp, False, notes)
    J = jacobian((g, 0.0), q)
    lam2 = J[1, 1]
    num = numeric_sotomayor(q, (g, 0.0), disp_V, (0.0, 1.0))
    trans = {**disp, **num, "eigenvalue": float(lam2)}
    valid = (abs(num["WT_H_xi"]) < ZERO_TOL and abs(num["WT_DH_xi_V"]) > ZERO_TOL
             and abs(num["WT_D2H_VV"]) > ZERO_TOL and abs(lam2) < 1e-7)
    notes["numeric_pattern"] = _sotomayor_pattern(num)
    return BifurcationPoint(BifKind.TRANSCRITICAL, "xi", xs, State(g, 0.0), trans, bool(valid), notes)


def _frac(v) -> Fraction:
    return Fraction(str(v)) if isinstance(v, float) else Fraction(v)


def transcritical_xi_exact(p: ModelParams) -> Fraction:
    """The transcritical critical value in exact rational arithmetic."""
    g, a, d, m, w = (_frac(v) for v in (p.gamma, p.alpha, p.delta, p.m, p.omega))
    u = w * g * g + 1
    return (m * (u + g) - d * g) / ((d - m * a) * u)


def saddle_node_xi_exact(p: ModelParams) -> Fraction:
    """``m / (delta - m alpha)`` in exact rational arithmetic."""
    a, d, m = (_frac(v) for v in (p.alpha, p.delta, p.m))
    return m / (d - m * a)


# --- collision of E2 with E0 --------------------------------------------------------

def _div(a, b):
    if b == 0.0:
        return math.copysign(math.inf, a) if a != 0 else math.nan
    return a / b


def saddle_node_xi(p: ModelParams) -> BifurcationPoint:
    """Food quantity ``m / (delta - m alpha)`` at which E2 meets E0.

    The displayed left null vector divides by ``phi``, which vanishes at the
    critical value, so its quantities are reported as they evaluate there.
    With unit null vectors of the Jacobian, ``W^T H_xi`` is zero because E0
    is an equilibrium for every ``xi``; ``notes["numeric_pattern"]`` records
    which Sotomayor pattern the numeric values fit.
    """
    a, e, d, m = p.alpha, p.eps, p.delta, p.m
    if abs(d - m * a) < 1e-14:
        raise NotApplicable("saddle-node theorem requires delta != m alpha")
    xs = m / (d - m * a)
    notes = {"admissible": xs > 0}
    if xs < 0:
        return BifurcationPoint(BifKind.SADDLE_NODE, "xi", xs, State(0.0, 0.0), {}, False, notes)
    q = p.with_(xi=xs)
    phi = q.phi
    if abs(e * d * xs - phi) < 1e-14:
        raise NotApplicable("theorem requires eps delta xi != phi at the critical value")
    factor = 1.0 - _div(e * d * xs, phi) if phi != 0 else -math.copysign(math.inf, e * d * xs)
    disp = {
        "display_WT_H_xi": ((1.0 - e) * d * xs - m * (1.0 + a * xs)) * (d - m * a) / (e * d * xs * (d - m)),
        "display_WT_DH_xi_V": m * m * (d * a * xs + (1.0 + a * xs) * (d - 2.0 * m * a))
        / (d * d * xs * xs * (d - m)) * factor,
        "display_WT_D2H_VV": -2.0 * m ** 3 * e * (1.0 + a * xs) / (d * d * xs * xs * (d - m)) * factor,
    }
    E = State(0.0, max(phi / (m * e), 0.0))
    J = jacobian(E, q)
    V, W = _null_vectors(J)
    num = numeric_sotomayor(q, E, V, W)
    eig, _ = classify_matrix(J)
    trans = {**disp, **num, "min_abs_eigenvalue": float(min(abs(l) for l in eig))}
    notes["numeric_pattern"] = _sotomayor_pattern(num)
    valid = all(abs(num[k]) > ZERO_TOL for k in ("WT_H_xi", "WT_DH_xi_V", "WT_D2H_VV"))
    return BifurcationPoint(BifKind.SADDLE_NODE, "xi", xs, E, trans, bool(valid), notes)


# --- Hopf in xi along an interior branch ---------------------------------------------

def _nearest_root(p: ModelParams, x_prev: float, max_jump: float):
    roots = interior_roots(p)
    if not roots:
        return None
    r = min(roots, key=lambda r: abs(r - x_prev))
    return r if abs(r - x_prev) <= max_jump else None


def _trace_det(p: ModelParams, x: float):
    y = ystar_from_prey(x, p)
    J = jacobian((x, y), p)
    return J[0, 0] + J[1, 1], np.linalg.det(J), y


def hopf_xi(p: ModelParams, eq: State, xi_max: float | None = None,
            steps: int = 400) -> BifurcationPoint:
    """Follow the interior branch through ``eq`` in ``xi`` and locate ``Tr J = 0``.

    Returns the crossing nearest the starting ``xi`` at which the
    determinant is positive. The displayed closed-form for the critical
    quantity is a fixed-point relation in ``xi``; its value at the located
    equilibrium is reported as ``display_xi``.
    """
    x0 = float(eq.x)
    if det_quadratic(x0, p) <= 0:
        raise NoHopf("determinant quadratic is nonpositive at the starting equilibrium")
    xi_max = max(10.0, 4.0 * p.xi) if xi_max is None else xi_max
    jump = 0.05 * p.gamma
    best = None
    for direction in (+1, -1):
        end = xi_max if direction > 0 else 0.0
        grid = np.linspace(p.xi, end, steps + 1)
        x_prev = x0
        tr_prev, det_prev, _ = _trace_det(p, x0)
        xi_prev = p.xi
        for xi in grid[1:]:
            r = _nearest_root(p.with_(xi=xi), x_prev, jump)
            if r is None:
                break
            tr, det, _ = _trace_det(p.with_(xi=xi), r)
            if tr_prev * tr < 0 and det > 0 and det_prev > 0:
                cand = (abs(xi_prev - p.xi), xi_prev, xi, x_prev)
                if best is None or cand[0] < best[0]:
                    best = cand
                break
            x_prev, tr_prev, det_prev, xi_prev = r, tr, det, xi
    if best is None:
        raise NoHopf("trace does not change sign along the tracked branch")
    _, a, b, xa = best
    state = {"x": xa}

    def tr_of(xi):
        r = _nearest_root(p.with_(xi=xi), state["x"], jump)
        if r is None:
            raise NoHopf("branch lost during refinement")
        return _trace_det(p.with_(xi=xi), r)[0]

    xs = brentq(tr_of, min(a, b), max(a, b), xtol=1e-13, rtol=1e-14, maxiter=200)
    q = p.with_(xi=xs)
    xstar = _nearest_root(q, xa, jump)
    tr, det, ystar = _trace_det(q, xstar)
    hq = 1e-6
    dtr = (tr_of(xs + hq) - tr_of(xs - hq)) / (2 * hq)
    u = q.omega * xstar ** 2 + 1.0
    hx = det_quadratic(xstar, q)
    if q.alpha > 0:
        disp = ((1.0 - 2.0 * xstar / q.gamma) * xstar - q.m * q.eps * ystar * u) / (q.alpha * xstar * hx) \
            - (1.0 + q.eps * ystar) / q.alpha
    else:
        disp = math.nan
    trans = {"trace": float(tr), "det": float(det), "dtrace_dxi": float(dtr),
             "display_xi": float(disp), "h_at_xstar": float(hx)}
    valid = abs(tr) < 1e-8 and det > 0 and abs(dtr) > ZERO_TOL and hx > 0
    return BifurcationPoint(BifKind.HOPF, "xi", float(xs), State(xstar, ystar), trans, bool(valid),
                            {"display_gap": float(abs(disp - xs)) if math.isfinite(disp) else None})


# --- scans ---------------------------------------------------------------------------------

def _n_unstable(eigs) -> int:
    return sum(1 for l in eigs if l.real > 0)


def _equilibria_at(p: ModelParams, name: str, value: float):
    q = p.with_(**{name: value})
    out = []
    for rep in axial_equilibria(q):
        label = {Kind.TRIVIAL: "E0", Kind.PREDATOR_FREE: "E1", Kind.PREY_FREE: "E2"}[rep.kind]
        out.append((label, rep.location.x, rep.location.y, rep.stability.value, _n_unstable(rep.eigenvalues)))
    for x in interior_roots(q):
        y = ystar_from_prey(x, q)
        eig, stab = classify_matrix(jacobian((x, y), q))
        out.append(("E*", x, y, stab.value, _n_unstable(eig)))
    return out


def _signature(eqs, label, x_ref=None, jump=None):
    """(exists, n_unstable, x) for a labelled equilibrium."""
    cands = [e for e in eqs if e[0] == label]
    if label == "E*":
        if x_ref is None or not cands:
            return (False, None, None)
        e = min(cands, key=lambda e: abs(e[1] - x_ref))
        if abs(e[1] - x_ref) > jump:
            return (False, None, None)
        return (True, e[4], e[1])
    if not cands:
        return (False, None, None)
    return (True, cands[0][4], cands[0][1])


@dataclass
class ScanResult:
    parameter: str
    values: np.ndarray
    branches: list  # rows (param, label, x, y, stability)
    events: list

    def to_dict(self):
        return {"parameter": self.parameter, "events": self.events}


def _bisect_event(p, name, lo, hi, predicate, tol):
    """Shrink ``[lo, hi]`` keeping ``predicate(lo) != predicate(hi)``."""
    plo = predicate(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid) == plo:
            lo = mid
        else:
            hi = mid
    return lo, hi


def scan_parameter(p: ModelParams, name: str, lo: float, hi: float, steps: int,
                   tol: float = 1e-4, workers: int | None = 1) -> ScanResult:
    """Re-solve all equilibria on a grid of ``name`` and bracket changes.

    Events are stability changes (number of eigenvalues with positive real
    part) of a tracked equilibrium and appearances or disappearances.
    Interior equilibria are tracked by nearest prey coordinate.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    values = np.linspace(lo, hi, steps)
    per_value = pmap(partial(_equilibria_at, p, name), list(values), workers)
    rows = [(float(v), *e[:4]) for v, eqs in zip(values, per_value) for e in eqs]
    g = p.gamma
    jump = 0.05 * g if name != "gamma" else 0.05 * max(abs(lo), abs(hi))
    events = []
    for i in range(steps - 1):
        a, b = values[i], values[i + 1]
        ea, eb = per_value[i], per_value[i + 1]
        for label in ("E0", "E1", "E2"):
            sa, sb = _signature(ea, label), _signature(eb, label)
            if sa[:2] != sb[:2]:
                pred = (lambda lab: (lambda v: _signature(_equilibria_at(p, name, v), lab)[:2]))(label)
                l, h = _bisect_event(p, name, a, b, pred, tol)
                events.append(_event(label, sa, sb, l, h))
        # interior branches, matched by nearest prey coordinate
        for e in [e for e in ea if e[0] == "E*"]:
            sb = _signature(eb, "E*", e[1], jump)
            sa = (True, e[4], e[1])
            if sa[:2] != sb[:2]:
                x_ref = e[1]

                def pred(v, x_ref=x_ref):
                    return _signature(_equilibria_at(p, name, v), "E*", x_ref, jump)[:2]
                l, h = _bisect_event(p, name, a, b, pred, tol)
                events.append(_event("E*", sa, sb, l, h))
        for e in [e for e in eb if e[0] == "E*"]:
            if not _signature(ea, "E*", e[1], jump)[0]:
                x_ref = e[1]

                def pred(v, x_ref=x_ref):
                    return _signature(_equilibria_at(p, name, v), "E*", x_ref, jump)[0]
                l, h = _bisect_event(p, name, a, b, pred, tol)
                events.append(_event("E*", (False, None, None), (True, e[4], e[1]), l, h))
    return ScanResult(name, values, rows, events)


def _event(label, sa, sb, l, h):
    if sa[0] and sb[0]:
        kind = "stability_change"
    elif sb[0]:
        kind = "appearance"
    else:
        kind = "disappearance"
    return {"equilibrium": label, "type": kind, "value": float(0.5 * (l + h)), "bracket": [float(l), float(h)],
            "n_unstable_before": sa[1], "n_unstable_after": sb[1]}


# --- food regions --------------------------------------------------------------------------

class BaseRegion(str, enum.Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


class FoodRegion(str, enum.Enum):
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"
    A4 = "A4"
    A5 = "A5"


@dataclass
class RegionLabel:
    base_region: BaseRegion
    food_region: FoodRegion
    curve_values: tuple  # (phi1, phi2, phi3, phi4)
    boundary: bool
    n_stable_interior: int | None = None


def curve_values(p: ModelParams, alpha: float, xi: float):
    d, m, g, w, e = p.delta, p.m, p.gamma, p.omega, p.eps
    phi1 = d * xi - m * (1.0 + alpha * xi)
    phi2 = phi1 + (d - m) * g / (w * g * g + 1.0)
    phi3 = phi1 - d * e * xi
    phi4 = phi1 + (d - m) / (2.0 * math.sqrt(w))
    return phi1, phi2, phi3, phi4


def n_stable_interior(p: ModelParams) -> int:
    n = 0
    for x in interior_roots(p):
        y = ystar_from_prey(x, p)
        _, stab = classify_matrix(jacobian((x, y), p))
        n += stab.is_stable
    return n


def base_region(p: ModelParams) -> BaseRegion:
    """Base region from the interior equilibria without additional food."""
    n = n_stable_interior(p.with_(xi=0.0))
    return BaseRegion.R1 if n == 0 else BaseRegion.R2 if n == 1 else BaseRegion.R3


def classify_region(p: ModelParams, alpha: float, xi: float,
                    base: BaseRegion | None = None) -> RegionLabel:
    """Label the food pair ``(alpha, xi)``.

    A1 when ``phi3 > 0``; A2 or A3 when ``phi1 > 0 >= phi3``, A3 meaning at
    least two stable interior equilibria; A4 when ``phi2 > 0 >= phi1`` and
    ``phi4 > 0``; A5 otherwise.
    """
    if alpha < 0 or xi < 0:
        raise ValueError("alpha and xi must be nonnegative")
    base = base_region(p) if base is None else base
    phis = curve_values(p, alpha, xi)
    phi1, phi2, phi3, phi4 = phis
    boundary = any(abs(v) < 1e-9 for v in phis)
    n_st = None
    if phi3 > 0:
        food = FoodRegion.A1
    elif phi1 > 0:
        n_st = n_stable_interior(p.with_(alpha=alpha, xi=xi))
        food = FoodRegion.A3 if n_st >= 2 else FoodRegion.A2
    elif phi2 > 0 and phi4 > 0:
        food = FoodRegion.A4
    else:
        food = FoodRegion.A5
    return RegionLabel(base, food, phis, boundary, n_st)


def label_consistent(label: RegionLabel) -> bool:
    """Whether a label's food region agrees with the signs of its curves."""
    phi1, phi2, phi3, phi4 = label.curve_values
    f = label.food_region
    if f is FoodRegion.A1:
        return phi3 > 0
    if f in (FoodRegion.A2, FoodRegion.A3):
        return phi1 > 0 >= phi3
    if f is FoodRegion.A4:
        return phi2 > 0 >= phi1 and phi4 > 0
    return phi1 <= 0 and (phi2 <= 0 or phi4 <= 0)


def _region_row(args):
    p, base, alpha, xis = args
    out = []
    for xi in xis:
        lab = classify_region(p, alpha, xi, base)
        e2 = any(r.kind is Kind.PREY_FREE for r in axial_equilibria(p.with_(alpha=alpha, xi=xi)))
        out.append((alpha, xi, lab, e2))
    return out


def region_grid(p: ModelParams, alpha_max: float, xi_max: float, resolution: int,
                workers: int | None = 1):
    """Classify a ``resolution x resolution`` grid on ``[0, alpha_max] x [0, xi_max]``.

    Returns rows ``(alpha, xi, RegionLabel, e2_exists)`` in row-major order.
    """
    base = base_region(p)
    alphas = np.linspace(0.0, alpha_max, resolution)
    xis = np.linspace(0.0, xi_max, resolution)
    rows = pmap(_region_row, [(p, base, float(a), xis) for a in alphas], workers)
    return [cell for row in rows for cell in row]
