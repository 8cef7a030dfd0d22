"""
Market parameters, power utility, discount measures and Merton closed forms.

Black-Scholes market with one stock, a constant interest rate and an income
stream paying at rate ``a`` until an independent exponential time with
intensity ``eta``.  Utility is power utility ``U(x) = x**p / p``.

Notation used throughout the package:

    q     = -p / (1 - p)                          conjugate exponent
    K     = (delta - r p + q lambda^2 / 2) / (1 - p)   Merton consumption rate
    alpha = eta + delta                           pre-termination discount
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ValidationError, WellPosednessError

__all__ = [
    "MarketParams",
    "Constants",
    "PowerUtility",
    "HorizonVariant",
    "DiscountMeasure",
    "derive_constants",
    "merton_value",
    "merton_marginal",
    "merton_curvature",
    "perpetual_value",
    "merton_feedback",
    "merton_wealth_closed_form",
]


@dataclass(frozen=True)
class MarketParams:
    """Scalar coefficients of the market and the agent.

    ``lam`` is the market price of risk (``lambda`` is a keyword).  Defaults
    are the figure parameters with ``r = 0.05``.
    """

    r: float = 0.05
    sigma: float = 0.1
    lam: float = 1.0
    delta: float = 0.6
    eta: float = 0.1
    a: float = 0.2
    p: float = 0.5

    def __post_init__(self):
        for name in ("r", "sigma", "lam", "delta", "eta", "a", "p"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.r <= 0:
            raise ValidationError(f"r must be > 0, got {self.r}")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if self.delta <= 0:
            raise ValidationError(f"delta must be > 0, got {self.delta}")
        if self.eta < 0:
            raise ValidationError(f"eta must be >= 0, got {self.eta}")
        if self.a < 0:
            raise ValidationError(f"a must be >= 0, got {self.a}")
        if not 0.0 < self.p < 1.0:
            raise ValidationError(f"p must lie in (0, 1), got {self.p}")

    def replace(self, **changes) -> "MarketParams":
        fields = {k: getattr(self, k) for k in ("r", "sigma", "lam", "delta", "eta", "a", "p")}
        fields.update(changes)
        return MarketParams(**fields)

    @property
    def q(self) -> float:
        return -self.p / (1.0 - self.p)

    @property
    def K(self) -> float:
        return (self.delta - self.r * self.p + 0.5 * self.q * self.lam**2) / (1.0 - self.p)

    @property
    def alpha(self) -> float:
        return self.eta + self.delta

    @property
    def merton_proportion(self) -> float:
        """Fraction of (shifted) wealth held in the stock, lambda / (sigma (1 - p))."""
        return self.lam / (self.sigma * (1.0 - self.p))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("r", "sigma", "lam", "delta", "eta", "a", "p")}


class Constants(NamedTuple):
    q: float
    K: float
    alpha: float


def derive_constants(params: MarketParams) -> Constants:
    """Return ``(q, K, alpha)``; raise :class:`WellPosednessError` unless K > 0."""
    K = params.K
    if not K > 0:
        raise WellPosednessError(
            f"K = {K:.6g} <= 0: no-income Merton problem is ill-posed "
            f"(delta={params.delta}, r={params.r}, lambda={params.lam}, p={params.p})"
        )
    return Constants(params.q, K, params.alpha)


@dataclass(frozen=True)
class PowerUtility:
    """``U(x) = x**p / p`` together with its inverse marginal and conjugate."""

    p: float

    @property
    def q(self) -> float:
        return -self.p / (1.0 - self.p)

    def U(self, x):
        return np.power(x, self.p) / self.p

    def dU(self, x):
        with np.errstate(divide="ignore"):
            return np.power(x, self.p - 1.0)

    def I(self, y):
        """Inverse marginal utility; ``I(inf) = 0``."""
        with np.errstate(divide="ignore"):
            return np.power(y, -1.0 / (1.0 - self.p))

    def V(self, y):
        """Convex conjugate ``sup_x [U(x) - x y] = -y**q / q``."""
        q = self.q
        return -np.power(y, q) / q

    def dV(self, y):
        return -np.power(y, self.q - 1.0)


class HorizonVariant(str, Enum):
    INFINITE = "infinite"
    FINITE_CONSUMPTION = "finite_consumption"
    TERMINAL_WEALTH = "terminal_wealth"


@dataclass(frozen=True)
class DiscountMeasure:
    """Discounting measure ``kappa`` with density reciprocal ``zeta``.

    All three variants share the density ``exp(-delta t)`` on ``[0, T)``;
    the terminal-wealth variant adds a unit atom at ``T``.
    """

    delta: float
    variant: HorizonVariant = HorizonVariant.INFINITE
    horizon: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "variant", HorizonVariant(self.variant))
        if self.delta <= 0:
            raise ValidationError("delta must be > 0")
        if self.variant is HorizonVariant.INFINITE:
            object.__setattr__(self, "horizon", math.inf)
        elif not (0.0 < self.horizon < math.inf):
            raise ValidationError(f"{self.variant.value} needs a finite horizon T > 0")

    @classmethod
    def infinite(cls, delta: float) -> "DiscountMeasure":
        return cls(delta)

    @classmethod
    def finite_consumption(cls, delta: float, T: float) -> "DiscountMeasure":
        return cls(delta, HorizonVariant.FINITE_CONSUMPTION, T)

    @classmethod
    def terminal_wealth(cls, delta: float, T: float) -> "DiscountMeasure":
        return cls(delta, HorizonVariant.TERMINAL_WEALTH, T)

    @property
    def has_terminal_atom(self) -> bool:
        return self.variant is HorizonVariant.TERMINAL_WEALTH

    def kappa(self, t):
        t = np.asarray(t, dtype=float)
        d = self.delta
        running = (1.0 - np.exp(-d * np.minimum(t, self.horizon))) / d
        if self.has_terminal_atom:
            running = running + (t >= self.horizon)
        return running

    def density(self, t):
        """Absolutely continuous part ``d kappa / dt``."""
        t = np.asarray(t, dtype=float)
        return np.where(t < self.horizon, np.exp(-self.delta * t), 0.0)

    def zeta(self, t):
        t = np.asarray(t, dtype=float)
        z = np.exp(self.delta * np.minimum(t, self.horizon))
        if self.has_terminal_atom:
            z = np.where(t >= self.horizon, 1.0, z)
        return z

    def income_cutoff(self, t):
        t = np.asarray(t, dtype=float)
        return (t < self.horizon).astype(float)

    def total_mass(self) -> float:
        return float(self.kappa(self.horizon)) if math.isfinite(self.horizon) else 1.0 / self.delta


def _merton_scale(params: MarketParams) -> float:
    K = derive_constants(params).K
    return K ** (-(1.0 - params.p))


def merton_value(x, params: MarketParams):
    """No-income Merton value ``u0(x) = K**-(1-p) x**p / p`` (``u0(0) = 0``)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("merton_value needs x >= 0")
    out = _merton_scale(params) * np.power(x, params.p) / params.p
    return out[()] if out.ndim == 0 else out


def merton_marginal(x, params: MarketParams):
    """First derivative of :func:`merton_value`; infinite at zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = _merton_scale(params) * np.power(x, params.p - 1.0)
    return out[()] if out.ndim == 0 else out


def merton_curvature(x, params: MarketParams):
    """Second derivative of :func:`merton_value`; ``-inf`` at zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = _merton_scale(params) * (params.p - 1.0) * np.power(x, params.p - 2.0)
    return out[()] if out.ndim == 0 else out


def perpetual_value(x, params: MarketParams):
    """Perpetual-income value ``u_inf(x) = u0(x + a/r)`` on ``x > -a/r``."""
    x = np.asarray(x, dtype=float)
    shifted = x + params.a / params.r
    if np.any(shifted <= 0):
        raise DomainError(f"perpetual_value needs x > -a/r = {-params.a / params.r}")
    return merton_value(shifted, params)


def merton_feedback(x, params: MarketParams, income_shift: float = 0.0):
    """Linear Merton feedback ``(c, pi)`` on shifted wealth ``x + income_shift``.

    ``income_shift = 0`` is the no-income policy, ``a / r`` the perpetual one.
    """
    K = derive_constants(params).K
    w = np.asarray(x, dtype=float) + income_shift
    if np.any(w < 0):
        raise DomainError("merton_feedback needs x + income_shift >= 0")
    c = K * w
    pi = params.merton_proportion * w
    if c.ndim == 0:
        return c[()], pi[()]
    return c, pi


def merton_wealth_closed_form(t, z0, x: float, params: MarketParams):
    """Optimal perpetual-income wealth as a function of the Brownian deflator.

    ``X_t + a/r = (x + a/r) exp((r - delta)(1 - q) t) * Z0_t ** -(1 - q)``.
    With ``a = 0`` this is the no-income Merton wealth.
    """
    z0 = np.asarray(z0, dtype=float)
    if np.any(z0 <= 0):
        raise DomainError("deflator value must be positive")
    shift = params.a / params.r
    if x + shift <= 0:
        raise DomainError("x + a/r must be positive")
    one_minus_q = 1.0 - params.q
    t = np.asarray(t, dtype=float)
    out = (x + shift) * np.exp((params.r - params.delta) * one_minus_q * t) * z0 ** (-one_minus_q) - shift
    return out[()] if out.ndim == 0 else out
