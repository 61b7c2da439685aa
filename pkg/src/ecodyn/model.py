"""Additional-food prey-predator model with Holling type-IV response.

Nondimensional system::

    dx/dt = x (1 - x/gamma) - x y / D
    dy/dt = delta (x + xi (omega x^2 + 1)) y / D - m y
    D     = (omega x^2 + 1)(1 + alpha xi + eps y) + x

``alpha`` is the quality and ``xi`` the quantity of additional food, ``eps``
the strength of mutual interference among predators and ``omega`` the prey's
group defence.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

import numpy as np

PARAM_NAMES = ("gamma", "alpha", "xi", "eps", "delta", "m", "omega")


class DomainError(ValueError):
    """Raised when a parameter set violates the model's positivity constraints."""


def _require_positive(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value)):
            raise DomainError(f"{name} must be a finite number, got {value!r}")
        if value <= 0:
            raise DomainError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class DerivationParams:
    """Behavioural constants used to derive the functional responses.

    Handling times ``h_*``, search/encounter rates ``e_*``, conversion
    efficiencies ``eps_N``/``eps_A``, prey group defence ``b`` and the
    density of additional food ``A``.
    """

    h_N: float = 1.0
    h_A: float = 1.0
    h_P: float = 1.0
    e_N: float = 1.0
    e_A: float = 1.0
    e_P: float = 1.0
    eps_N: float = 1.0
    eps_A: float = 1.0
    b: float = 1.0
    A: float = 1.0

    def __post_init__(self):
        _require_positive(self, [f.name for f in fields(self)])


@dataclass(frozen=True)
class Scales:
    """Scale factors of the map ``t = r T``, ``N = a x``, ``P = a r y / c``."""

    r: float
    a: float
    c: float

    def to_dimensional(self, t, x, y):
        """Map nondimensional ``(t, x, y)`` back to ``(T, N, P)``."""
        return (np.asarray(t) / self.r, self.a * np.asarray(x),
                self.a * self.r * np.asarray(y) / self.c)


@dataclass(frozen=True)
class ModelParams:
    """The nondimensional parameters of the model.

    ``alpha`` and ``xi`` may be zero (no additional food); every other field
    must be strictly positive and ``delta > m``.
    """

    gamma: float
    alpha: float
    xi: float
    eps: float
    delta: float
    m: float
    omega: float
    scales: Scales | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating)) or not math.isfinite(value):
                raise DomainError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        _require_positive(self, ("gamma", "eps", "delta", "m", "omega"))
        if self.alpha < 0 or self.xi < 0:
            raise DomainError("alpha and xi must be nonnegative")
        if not self.delta > self.m:
            raise DomainError(f"delta ({self.delta}) must exceed m ({self.m})")

    # food-dependent combination that appears in every existence condition
    @property
    def phi(self) -> float:
        return self.delta * self.xi - self.m * (1.0 + self.alpha * self.xi)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelParams":
        missing = [n for n in PARAM_NAMES if n not in data]
        if missing:
            raise DomainError(f"missing parameters: {', '.join(missing)}")
        return cls(**{n: data[n] for n in PARAM_NAMES})


@dataclass(frozen=True)
class DimensionalParams:
    r: float
    K: float
    c: float
    a: float
    b: float
    delta1: float
    m1: float
    eps1: float
    alpha: float
    eta: float
    A: float

    def __post_init__(self):
        _require_positive(self, [f.name for f in fields(self)])
        if not self.delta1 > self.m1:
            raise DomainError("delta1 must exceed m1")


@dataclass(frozen=True)
class State:
    x: float
    y: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise DomainError(f"state must be nonnegative, got ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def derive_composite(d: DerivationParams):
    """Collapse behavioural constants into ``(c, a, alpha, eta, eps1)``."""
    c = 1.0 / d.h_N
    a = 1.0 / (d.h_N * d.e_N)
    alpha = (d.eps_N / d.h_N) / (d.eps_A / d.h_A)
    eta = (d.e_A * d.eps_A) / (d.e_N * d.eps_N)
    eps1 = d.h_P * d.e_P
    return c, a, alpha, eta, eps1


def functional_responses(N, P, A, d: DerivationParams):
    """Per-predator intake rates of prey (g) and additional food (h)."""
    group = d.b * N * N + 1.0
    denom = group * (1.0 / (d.e_N * d.h_N)
                     + d.h_A * d.e_A * A / (d.h_N * d.e_N)
                     + d.h_P * d.e_P * P / (d.h_N * d.e_N)) + N
    g = (N / d.h_N) / denom
    h = (d.e_A / d.e_N) * (1.0 / d.h_N) * A * group / denom
    return g, h


def nondimensionalize(p: DimensionalParams) -> ModelParams:
    """Map dimensional parameters to :class:`ModelParams`.

    ``delta = delta1 / r`` and ``m = m1 / r`` so that ``delta / m`` equals
    ``delta1 / m1``. The scale factors travel along in ``result.scales``.
    """
    return ModelParams(
        gamma=p.K / p.a,
        alpha=p.alpha,
        xi=p.eta * p.A / p.a,
        eps=p.eps1 * p.a * p.r / p.c,
        delta=p.delta1 / p.r,
        m=p.m1 / p.r,
        omega=p.b * p.a ** 2,
        scales=Scales(r=p.r, a=p.a, c=p.c),
    )


def dimensional_rhs(N, P, p: DimensionalParams):
    """Right-hand side of the dimensional system in ``(N, P)``."""
    denom = (p.b * N * N + 1.0) * (p.a + p.alpha * p.eta * p.A + p.eps1 * p.a * P) + N
    dN = p.r * N * (1.0 - N / p.K) - p.c * N * P / denom
    dP = p.delta1 * (N + p.eta * p.A * (p.b * N * N + 1.0)) * P / denom - p.m1 * P
    return dN, dP


def denominator(x, y, p: ModelParams, alpha=None, xi=None):
    alpha = p.alpha if alpha is None else alpha
    xi = p.xi if xi is None else xi
    return (p.omega * x * x + 1.0) * (1.0 + alpha * xi + p.eps * y) + x


def field_xy(x, y, p: ModelParams, alpha=None, xi=None):
    """Vector field on scalars or broadcastable arrays, returns ``(dx, dy)``."""
    alpha = p.alpha if alpha is None else alpha
    xi = p.xi if xi is None else xi
    u = p.omega * x * x + 1.0
    D = u * (1.0 + alpha * xi + p.eps * y) + x
    dx = x * (1.0 - x / p.gamma) - x * y / D
    dy = p.delta * (x + xi * u) * y / D - p.m * y
    return dx, dy


def rhs(s, p: ModelParams) -> np.ndarray:
    """Vector field at state ``s`` (a :class:`State` or ``(x, y)`` pair)."""
    x, y = s
    return np.array(field_xy(float(x), float(y), p))


def jacobian_xy(x, y, p: ModelParams, alpha=None, xi=None):
    """The four partial derivatives ``(fx, fy, gx, gy)``; broadcasts."""
    alpha = p.alpha if alpha is None else alpha
    xi = p.xi if xi is None else xi
    wx2 = p.omega * x * x
    u = wx2 + 1.0
    B = 1.0 + alpha * xi + p.eps * y
    D = u * B + x
    D2 = D * D
    base = u * (1.0 + alpha * xi) + x
    fx = 1.0 - 2.0 * x / p.gamma - y * (1.0 - wx2) * B / D2
    fy = -x * base / D2
    gx = p.delta * y * (1.0 + (alpha - 1.0) * xi + p.eps * y) * (1.0 - wx2) / D2
    gy = p.delta * (x + xi * u) * base / D2 - p.m
    return fx, fy, gx, gy


def jacobian(s, p: ModelParams) -> np.ndarray:
    x, y = s
    fx, fy, gx, gy = jacobian_xy(float(x), float(y), p)
    return np.array([[fx, fy], [gx, gy]])


def params_dict(p: ModelParams) -> dict:
    """Flat JSON-ready mapping plus scale metadata when present."""
    out = p.to_dict()
    if p.scales is not None:
        out["_scales"] = asdict(p.scales)
    return out
