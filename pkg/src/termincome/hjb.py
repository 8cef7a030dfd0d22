"""
Backward Runge-Kutta solve of the pre-termination HJB ODE.

The value function ``u1`` of the random-horizon problem solves

    V(u') + eta u0(x) + (r x + a) u' - lambda^2 u'^2 / (2 u'') - alpha u = 0

on ``x >= 0``.  Solving for the curvature gives ``u'' = lambda^2 u'^2 / (2 D)``
with ``D = V(u') + eta u0(x) + (r x + a) u' - alpha u``; ``D < 0`` on the
concave branch.

Integration starts at a large wealth ``x_max`` where ``u1`` is close to
``u0(x + a/(r + eta))`` and runs classical RK4 with a fixed step down to
``x = 0``.  The stepped state is the deviation of ``(u1, u1')`` from that
shifted Merton reference; the reference is an exact solution when ``a = 0``
or ``eta = 0``, so both limits are reproduced to rounding.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateMarket,
    EmptyRange,
    InvariantViolation,
    SingularDenominator,
    SolverBlowup,
    ValidationError,
)
from .model import (
    MarketParams,
    PowerUtility,
    derive_constants,
    merton_marginal,
    merton_value,
    perpetual_value,
)

__all__ = [
    "WealthGrid",
    "ValueSolution",
    "FeedbackPolicy",
    "DualTransform",
    "hjb_curvature",
    "boundary_condition",
    "choose_x_max",
    "solve_hjb",
    "extract_feedback",
    "conjugate_transform",
    "linear_fit_r2",
    "write_solution_csv",
]

log = logging.getLogger(__name__)

OVERFLOW_GUARD = 1e15
CURVATURE_FLOOR = 1e-14


@dataclass(frozen=True)
class WealthGrid:
    """Uniform grid ``x_max = x_0 > x_1 > ... > x_{n-1} = 0``."""

    x_max: float = 20.0
    n: int = 4001

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 3):
            raise ValidationError(f"grid needs n >= 3 nodes, got {self.n!r}")
        if not (math.isfinite(self.x_max) and self.x_max > 0):
            raise ValidationError(f"x_max must be positive, got {self.x_max!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def h(self) -> float:
        return self.x_max / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_max - self.h * np.arange(self.n)
        x[-1] = 0.0
        x.flags.writeable = False
        return x

    def refine(self) -> "WealthGrid":
        """Halve the spacing; every node of ``self`` is a node of the result."""
        return WealthGrid(self.x_max, 2 * self.n - 1)


@dataclass(frozen=True)
class ValueSolution:
    grid: WealthGrid
    params: MarketParams
    u1: np.ndarray
    du1: np.ndarray
    ddu1: np.ndarray
    y_star: float
    residual_max: float
    residuals: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def u0(self) -> np.ndarray:
        return merton_value(self.x, self.params)

    def u_inf(self) -> np.ndarray:
        # u0(x + a/r) directly: with a = 0 the node x = 0 is on the closed domain.
        return merton_value(self.x + self.params.a / self.params.r, self.params)

    def value_at(self, x: float) -> float:
        """Linear interpolation of ``u1`` (nodes are stored in descending order)."""
        return float(np.interp(x, self.x[::-1], self.u1[::-1]))

    def marginal_at(self, x: float) -> float:
        return float(np.interp(x, self.x[::-1], self.du1[::-1]))


@dataclass(frozen=True)
class FeedbackPolicy:
    """Optimal pre-termination controls on the solver grid.

    ``theta1`` is ``pi1 / x``; at ``x = 0`` it stores ``pi1(0)`` itself.
    """

    grid: WealthGrid
    c1: np.ndarray
    pi1: np.ndarray
    theta1: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes


@dataclass(frozen=True)
class DualTransform:
    y: np.ndarray
    v: np.ndarray
    argmax_x: np.ndarray
    u_roundtrip: np.ndarray


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def hjb_curvature(x: float, u: float, du: float, params: MarketParams) -> float:
    """Second derivative implied by the HJB ODE at ``(x, u, u')``.

    Raises
    ------
    DegenerateMarket
        if ``lambda == 0``.
    SingularDenominator
        if ``|D| < 1e-12 (1 + |alpha u|)``.
    """
    if params.lam == 0.0:
        raise DegenerateMarket("lambda = 0: the HJB ODE has no second-order term")
    if not du > 0:
        raise ValidationError(f"u' must be positive, got {du!r}")
    q = params.q
    p = params.p
    alpha = params.eta + params.delta
    K = params.K
    u0 = K ** (p - 1.0) * max(x, 0.0) ** p / p
    D = -(du**q) / q + params.eta * u0 + (params.r * x + params.a) * du - alpha * u
    if abs(D) < 1e-12 * (1.0 + abs(alpha * u)):
        raise SingularDenominator(f"HJB denominator {D:.3e} vanishes at x={x:.6g}, u={u:.6g}, u'={du:.6g}")
    return 0.5 * params.lam**2 * du * du / D


def boundary_condition(x_bar: float, params: MarketParams) -> tuple[float, float]:
    """Large-wealth data ``(u1, u1')`` from the shifted Merton value.

    Uses ``u0(x_bar + a/(r + eta))`` and its derivative.  Logs a warning when
    the perpetual and no-income values still differ by more than 1% at
    ``x_bar``, which means ``x_bar`` is too small for the approximation.
    """
    shift = params.a / (params.r + params.eta)
    u0_bar = float(merton_value(x_bar, params))
    spread = float(perpetual_value(x_bar, params)) - u0_bar
    if spread > 0.01 * u0_bar:
        log.warning(
            "x_bar=%g: u_inf - u0 = %.3g exceeds 1%% of u0; boundary approximation is loose",
            x_bar,
            spread,
        )
    return float(merton_value(x_bar + shift, params)), float(merton_marginal(x_bar + shift, params))


def choose_x_max(params: MarketParams, start: float = 1.0, tol: float = 1e-2) -> float:
    """Smallest ``x`` (to 1e-6) with ``u_inf(x) - u0(x) < tol * u0(x)``."""
    derive_constants(params)
    if params.a == 0:
        return start

    def gap(x):
        return float(perpetual_value(x, params) - merton_value(x, params)) - tol * float(merton_value(x, params))

    lo, hi = start, start
    while gap(hi) >= 0:
        lo, hi = hi, 2.0 * hi
    if gap(lo) < 0:
        return lo
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            hi = mid
        else:
            lo = mid
    return hi


def _residuals(x, u, du, params: MarketParams, h: float) -> np.ndarray:
    """HJB residual at interior nodes using a centered second difference of ``u``."""
    q = params.q
    ddu_fd = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / (h * h)
    xi, ui, dui = x[1:-1], u[1:-1], du[1:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        res = (
            -(dui**q) / q
            + params.eta * merton_value(xi, params)
            + (params.r * xi + params.a) * dui
            - 0.5 * params.lam**2 * dui**2 / ddu_fd
            - params.alpha * ui
        )
    return res


def solve_hjb(params: MarketParams, grid: WealthGrid | None = None, check: bool = True) -> ValueSolution:
    """Integrate the HJB ODE from ``grid.x_max`` down to zero with RK4.

    Parameters
    ----------
    params : market parameters; needs ``K > 0`` and ``lambda != 0``.
    grid : wealth grid, default ``WealthGrid(20, 4001)``.
    check : verify monotonicity, concavity and the ``u0 <= u1 <= u_inf``
        sandwich at every node, raising :class:`InvariantViolation`.

    Returns
    -------
    ValueSolution
    """
    derive_constants(params)
    if params.lam == 0.0:
        raise DegenerateMarket("lambda = 0: the HJB ODE has no second-order term")
    grid = grid or WealthGrid()
    x = grid.nodes
    n, h = grid.n, grid.h
    shift = params.a / (params.r + params.eta)

    scale = params.K ** (params.p - 1.0)
    p = params.p

    def rhs(xx, w, dw):
        s = xx + shift
        return hjb_curvature(xx, scale * s**p / p + w, scale * s ** (p - 1.0) + dw, params) - scale * (
            p - 1.0
        ) * s ** (p - 2.0)

    # Reference values use the same expressions as merton_value/merton_marginal
    # so that a zero deviation reproduces u0 bit for bit.
    u_ref = np.asarray(merton_value(x + shift, params), dtype=float)
    with np.errstate(divide="ignore"):
        du_ref = np.asarray(merton_marginal(x + shift, params), dtype=float)
    u = np.empty(n)
    du = np.empty(n)
    ddu = np.empty(n)
    u[0], du[0] = boundary_condition(x[0], params)
    ddu[0] = hjb_curvature(x[0], u[0], du[0], params)

    exact_reference = params.a == 0.0 or params.eta == 0.0
    w = dw = 0.0
    step = -h
    half = 0.5 * step
    for k in range(n - 1):
        xk = x[k]
        if k == n - 2 and shift == 0.0:
            # No income: u0 <= u1 <= u_inf collapses to u1 = u0, and the
            # reference is singular at zero, so the last node is pinned.
            u[-1], du[-1], ddu[-1] = 0.0, math.inf, -math.inf
            break
        if exact_reference:
            # Without income, or with income that never stops, the reference
            # solves the ODE exactly; integrating a zero deviation would only
            # accumulate rounding error.
            u[k + 1], du[k + 1] = u_ref[k + 1], du_ref[k + 1]
            ddu[k + 1] = hjb_curvature(x[k + 1], u[k + 1], du[k + 1], params)
            continue
        k1w, k1v = dw, rhs(xk, w, dw)
        k2w, k2v = dw + half * k1v, rhs(xk + half, w + half * k1w, dw + half * k1v)
        k3w, k3v = dw + half * k2v, rhs(xk + half, w + half * k2w, dw + half * k2v)
        k4w, k4v = dw + step * k3v, rhs(max(xk + step, 0.0), w + step * k3w, dw + step * k3v)
        w += step / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        dw += step / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)

        u[k + 1] = u_ref[k + 1] + w
        du[k + 1] = du_ref[k + 1] + dw
        if not (math.isfinite(du[k + 1]) and du[k + 1] < OVERFLOW_GUARD):
            raise SolverBlowup(f"u' overflowed below x={xk:.6g}", last_x=float(xk))
        ddu[k + 1] = hjb_curvature(x[k + 1], u[k + 1], du[k + 1], params)
        if not (math.isfinite(ddu[k + 1]) and abs(ddu[k + 1]) < OVERFLOW_GUARD):
            raise SolverBlowup(f"|u''| overflowed at x={x[k + 1]:.6g}", last_x=float(x[k + 1]))

    res = _residuals(x, u, du, params, h)
    finite = np.isfinite(res)
    residual_max = float(np.max(np.abs(res[finite]))) if finite.any() else math.nan
    sol = ValueSolution(
        grid=grid,
        params=params,
        u1=_freeze(u),
        du1=_freeze(du),
        ddu1=_freeze(ddu),
        y_star=float(du[-1]),
        residual_max=residual_max,
        residuals=_freeze(res),
    )
    if check:
        _check_invariants(sol)
    return sol


def _check_invariants(sol: ValueSolution) -> None:
    bad = np.flatnonzero(~(sol.du1 > 0))
    if bad.size:
        raise InvariantViolation(f"u1' <= 0 at x={sol.x[bad[0]]:.6g}", node=int(bad[0]))
    bad = np.flatnonzero(~(sol.ddu1 < 0))
    if bad.size:
        raise InvariantViolation(f"u1'' >= 0 at x={sol.x[bad[0]]:.6g}", node=int(bad[0]))
    bad = np.flatnonzero(np.diff(sol.u1) >= 0)
    if bad.size:
        raise InvariantViolation(f"u1 not increasing near x={sol.x[bad[0]]:.6g}", node=int(bad[0]))
    lower, upper = sol.u0(), sol.u_inf()
    bad = np.flatnonzero((sol.u1 < lower) | (sol.u1 > upper))
    if bad.size:
        i = int(bad[0])
        raise InvariantViolation(
            f"bound sandwich fails at x={sol.x[i]:.6g}: u0={lower[i]:.17g} u1={sol.u1[i]:.17g} u_inf={upper[i]:.17g}",
            node=i,
        )


def extract_feedback(sol: ValueSolution, params: MarketParams | None = None) -> FeedbackPolicy:
    """Consumption ``I(u1')`` and investment ``-(lambda/sigma) u1'/u1''`` per node."""
    params = params or sol.params
    util = PowerUtility(params.p)
    du, ddu, x = sol.du1, sol.ddu1, sol.x
    if np.any(np.abs(ddu) < CURVATURE_FLOOR):
        i = int(np.argmin(np.abs(ddu)))
        raise SingularDenominator(f"|u1''| < {CURVATURE_FLOOR} at x={x[i]:.6g}")
    c1 = util.I(du)
    with np.errstate(invalid="ignore"):
        pi1 = -(params.lam / params.sigma) * du / ddu
    # du = inf only at x = 0 without income; the Merton limit invests nothing there.
    pi1 = np.where(np.isinf(du), 0.0, pi1)
    theta1 = np.empty_like(pi1)
    pos = x > 0
    theta1[pos] = pi1[pos] / x[pos]
    theta1[~pos] = pi1[~pos]
    return FeedbackPolicy(sol.grid, _freeze(c1), _freeze(pi1), _freeze(theta1))


def conjugate_transform(sol: ValueSolution, y_grid) -> DualTransform:
    """Discrete Legendre-Fenchel transform of ``u1`` and its round trip.

    ``v(y) = max_k [u1(x_k) - x_k y]`` with ties resolved to the smallest
    ``x_k``; ``u_roundtrip(x_k) = min_j [v(y_j) + x_k y_j]``.
    """
    y = np.asarray(y_grid, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise EmptyRange("y_grid must be a non-empty 1-d array")
    if np.any(y <= 0) or np.any(y >= sol.y_star):
        raise EmptyRange(f"y_grid must lie inside (0, y*={sol.y_star:.6g})")
    xs = sol.x[::-1]
    us = sol.u1[::-1]
    # argmax returns the first hit, i.e. the smallest x on an ascending grid.
    obj = us[None, :] - y[:, None] * xs[None, :]
    idx = np.argmax(obj, axis=1)
    v = obj[np.arange(y.size), idx]
    roundtrip = np.min(v[None, :] + sol.x[:, None] * y[None, :], axis=1)
    return DualTransform(y=_freeze(y), v=_freeze(v), argmax_x=_freeze(xs[idx]), u_roundtrip=_freeze(roundtrip))


def linear_fit_r2(x, values) -> float:
    """Coefficient of determination of a least-squares line through ``values``."""
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    coeffs = np.polyfit(x, values, 1)
    fitted = np.polyval(coeffs, x)
    ss_res = float(np.sum((values - fitted) ** 2))
    ss_tot = float(np.sum((values - values.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


SOLUTION_COLUMNS = ("x", "u1", "du1", "ddu1", "u0", "u_inf", "c1", "theta1")


def write_solution_csv(path, sol: ValueSolution, policy: FeedbackPolicy) -> Path:
    """Write one row per node, ``x`` descending, full ``repr`` precision."""
    path = Path(path)
    cols = (sol.x, sol.u1, sol.du1, sol.ddu1, sol.u0(), sol.u_inf(), policy.c1, policy.theta1)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SOLUTION_COLUMNS)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])
    return path
