"""
Monte Carlo engine for controlled wealth, the income clock and deflators.

Wealth follows the Euler scheme

    X_{t+dt} = X_t + (r X_t - c_t + a N_t) dt + sigma pi_t (lambda dt + dW)

with ``N_t = 1{t < tau}``, ``tau ~ Exp(eta)``.  The Brownian deflator
``Z0 = E(-lambda W)`` is stepped exactly with log-normal increments and the
jump deflator ``Gamma = E(-gamma . M)`` is evaluated in closed form for a
constant ``gamma``:

    Gamma_t = exp(-eta gamma (t ^ tau)) (1 + gamma)^{1{t >= tau}}

Paths whose wealth would cross below zero are absorbed: wealth is held at 0
and consumption and investment are zero from then on.

Every Brownian pair (or path, without antithetics) draws from its own
``SeedSequence(seed, spawn_key=(0, j))`` stream and every exponential clock
from ``spawn_key=(1, i)``, so an ensemble does not depend on the chunking.

Path functionals are trapezoid integrals accumulated at the full ``dt``
resolution; paths are recorded only every ``record_dt`` to bound memory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ValidationError
from .hjb import FeedbackPolicy
from .model import DiscountMeasure, MarketParams, PowerUtility, derive_constants, merton_value, merton_wealth_closed_form

__all__ = [
    "PathConfig",
    "DeflatorSpec",
    "MertonNoIncome",
    "MertonPerpetual",
    "SolvedPolicy",
    "ConstantConsumption",
    "IncomePlusInterest",
    "RegimeSwitch",
    "PathEnsemble",
    "Estimate",
    "DeflatedCurves",
    "simulate_ensemble",
    "strong_error",
    "estimate_primal",
    "estimate_dual",
    "deflated_wealth_curves",
    "write_curves_csv",
    "dump_raw_paths",
]


def _is_multiple(value: float, unit: float) -> bool:
    ratio = value / unit
    return abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio)


@dataclass(frozen=True)
class PathConfig:
    dt: float = 0.01
    t_max: float = 25.0
    n_paths: int = 20_000
    seed: int = 42
    antithetic: bool = True
    record_dt: float = 0.25
    chunk_size: int = 4000

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (self.t_max > 0 and _is_multiple(self.t_max, self.dt)):
            raise ConfigError(f"t_max={self.t_max} must be a positive multiple of dt={self.dt}")
        if not _is_multiple(self.record_dt, self.dt) or self.record_dt < self.dt:
            raise ConfigError(f"record_dt={self.record_dt} must be a multiple of dt={self.dt}")
        if not _is_multiple(self.t_max, self.record_dt):
            raise ConfigError(f"t_max={self.t_max} must be a multiple of record_dt={self.record_dt}")
        if self.n_paths < 2:
            raise ConfigError("n_paths must be >= 2")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic sampling needs an even n_paths")
        if self.chunk_size < 2 or self.chunk_size % 2:
            raise ConfigError("chunk_size must be an even integer >= 2")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def record_every(self) -> int:
        return int(round(self.record_dt / self.dt))

    def replace(self, **changes) -> "PathConfig":
        fields = dict(
            dt=self.dt,
            t_max=self.t_max,
            n_paths=self.n_paths,
            seed=self.seed,
            antithetic=self.antithetic,
            record_dt=self.record_dt,
            chunk_size=self.chunk_size,
        )
        fields.update(changes)
        return PathConfig(**fields)

    def truncation_ratio(self, params: MarketParams, x_ref: float) -> float:
        """``exp(-delta t_max) u_inf(x_ref + a/r) / u0(x_ref)``."""
        shift = params.a / params.r
        return math.exp(-params.delta * self.t_max) * float(
            merton_value(x_ref + 2.0 * shift, params)
        ) / float(merton_value(x_ref, params))


@dataclass(frozen=True)
class DeflatorSpec:
    """Constant dual control ``gamma > -1`` and initial dual value ``y > 0``."""

    gamma: float = 0.0
    y: float = 1.0

    def __post_init__(self):
        if not self.gamma > -1.0 or not math.isfinite(self.gamma):
            raise ValidationError(f"gamma must be finite and > -1, got {self.gamma}")
        if not self.y > 0 or not math.isfinite(self.y):
            raise ValidationError(f"y must be positive, got {self.y}")

    def with_y(self, y: float) -> "DeflatorSpec":
        return DeflatorSpec(self.gamma, y)


# Controls ---------------------------------------------------------------
#
# ``rates(x, income_on, params)`` returns arrays ``(c, pi)`` for the wealth
# array ``x`` and the boolean income indicator array ``income_on``.  Paths
# are absorbed below ``wealth_floor(params)`` when a control defines it,
# otherwise below zero.


@dataclass(frozen=True)
class MertonNoIncome:
    name: str = field(default="merton_no_income", init=False)

    def rates(self, x, income_on, params):
        return params.K * x, params.merton_proportion * x


@dataclass(frozen=True)
class MertonPerpetual:
    name: str = field(default="merton_perpetual", init=False)

    def rates(self, x, income_on, params):
        w = x + params.a / params.r
        return params.K * w, params.merton_proportion * w

    def wealth_floor(self, params):
        return -params.a / params.r


@dataclass(frozen=True)
class SolvedPolicy:
    """Gridded pre-termination policy, linearly interpolated.

    Investment is interpolated in the amount ``pi1`` rather than the
    proportion, which is singular at zero wealth.  Above the grid the
    perpetual-income policy on ``x + a/(r + eta)`` takes over.
    """

    policy: FeedbackPolicy
    name: str = field(default="solved_policy", init=False)

    def rates(self, x, income_on, params):
        xs = self.policy.x[::-1]
        inside = x <= xs[-1]
        shifted = x + params.a / (params.r + params.eta)
        c = np.where(inside, np.interp(x, xs, self.policy.c1[::-1]), params.K * shifted)
        pi = np.where(inside, np.interp(x, xs, self.policy.pi1[::-1]), params.merton_proportion * shifted)
        return c, pi


@dataclass(frozen=True)
class ConstantConsumption:
    level: float = 0.0
    name: str = field(default="constant_consumption", init=False)

    def __post_init__(self):
        if not self.level >= 0:
            raise ValidationError("consumption level must be >= 0")

    def rates(self, x, income_on, params):
        return np.full_like(x, self.level), np.zeros_like(x)


@dataclass(frozen=True)
class IncomePlusInterest:
    """Consume income plus interest, hold no stock: wealth stays at ``x``."""

    name: str = field(default="income_plus_interest", init=False)

    def rates(self, x, income_on, params):
        return params.a * income_on + params.r * x, np.zeros_like(x)


@dataclass(frozen=True)
class RegimeSwitch:
    """``pre`` while income flows, ``post`` after it terminates."""

    pre: object
    post: object = MertonNoIncome()
    name: str = field(default="regime_switch", init=False)

    def rates(self, x, income_on, params):
        c_pre, pi_pre = self.pre.rates(x, income_on, params)
        c_post, pi_post = self.post.rates(x, income_on, params)
        return np.where(income_on, c_pre, c_post), np.where(income_on, pi_pre, pi_post)


# Ensemble ---------------------------------------------------------------


@dataclass(frozen=True)
class PathEnsemble:
    """Recorded paths and running integrals, all at unit dual value ``y = 1``.

    Arrays are ``(n_paths, n_times)`` on ``times``.  Cumulative integrals:

    ``cum_U``    int U(c) e^{-delta s} ds
    ``cum_dU``   int U'(c)(c - f) e^{-delta s} ds (alive paths with c > 0)
    ``cum_cY``   int c Y ds
    ``cum_fY``   int f Y ds
    ``cum_Vq``   int (e^{delta s} Y)^q e^{-delta s} ds

    with ``Y = e^{-r s} Z0 Gamma`` and ``f = a N``.
    """

    params: MarketParams
    cfg: PathConfig
    x0: float
    gamma: float
    control_name: str
    times: np.ndarray
    tau: np.ndarray
    X: np.ndarray
    Z0: np.ndarray
    c: np.ndarray
    cum_U: np.ndarray
    cum_dU: np.ndarray
    cum_cY: np.ndarray
    cum_fY: np.ndarray
    cum_Vq: np.ndarray
    absorbed: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def time_index(self, t: float) -> int:
        i = int(round(t / self.cfg.record_dt))
        if not (0 <= i < self.times.size) or abs(self.times[i] - t) > 1e-9 * max(1.0, t):
            raise ValidationError(f"t={t} is not a recorded time")
        return i

    def income_indicator(self) -> np.ndarray:
        return self.times[None, :] < self.tau[:, None]

    def jump_deflator(self) -> np.ndarray:
        return _gamma_factor(self.times[None, :], self.tau[:, None], self.gamma, self.params.eta)

    def unit_deflator(self) -> np.ndarray:
        return np.exp(-self.params.r * self.times)[None, :] * self.Z0 * self.jump_deflator()

    @property
    def absorbed_fraction(self) -> float:
        return float(self.absorbed.mean())

    def mean_se(self, values: np.ndarray) -> tuple[float, float]:
        """Sample mean and standard error over paths (antithetic pairs averaged first)."""
        return _mean_se(values, self.cfg.antithetic)


def _mean_se(values: np.ndarray, antithetic: bool) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    units = 0.5 * (values[0::2] + values[1::2]) if antithetic else values
    m = units.shape[0]
    mean = units.mean(axis=0)
    se = units.std(axis=0, ddof=1) / math.sqrt(m)
    return mean, se


def _gamma_factor(t, tau, gamma: float, eta: float):
    jumped = t >= tau
    return np.exp(-eta * gamma * np.minimum(t, tau)) * np.where(jumped, 1.0 + gamma, 1.0)


def _brownian_normals(seed: int, start: int, stop: int, n_steps: int, antithetic: bool) -> np.ndarray:
    """Standard normals for paths ``start:stop``, one stream per pair or path."""
    out = np.empty((stop - start, n_steps))
    if antithetic:
        for j in range(start // 2, stop // 2):
            z = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, j)))).standard_normal(
                n_steps
            )
            out[2 * j - start] = z
            out[2 * j + 1 - start] = -z
    else:
        for i in range(start, stop):
            out[i - start] = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, i)))
            ).standard_normal(n_steps)
    return out


def _exponential_clocks(seed: int, n_paths: int, eta: float) -> np.ndarray:
    if eta == 0.0:
        return np.full(n_paths, np.inf)
    u = np.array(
        [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, i)))).random()
            for i in range(n_paths)
        ]
    )
    return -np.log1p(-u) / eta


def simulate_ensemble(
    x0: float,
    control,
    deflator: DeflatorSpec,
    params: MarketParams,
    cfg: PathConfig | None = None,
    *,
    check_truncation: bool = True,
) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` controlled wealth paths from ``x0``.

    Identical arguments give a bit-identical ensemble.  With
    ``check_truncation`` (the default) a horizon that drops 0.5% or more of
    the utility mass raises :class:`ConfigError`; pass ``False`` for
    short-horizon diagnostics that do not estimate value functions.
    """
    cfg = cfg or PathConfig()
    derive_constants(params)
    if not (x0 >= 0 and math.isfinite(x0)):
        raise ConfigError(f"x0 must be a non-negative number, got {x0}")
    x_ref = x0 if x0 > 0 else 1.0
    ratio = cfg.truncation_ratio(params, x_ref)
    if check_truncation and ratio >= 5e-3:
        raise ConfigError(f"t_max={cfg.t_max} truncates too early: tail ratio {ratio:.3g} >= 0.5%")

    p, q = params.p, params.q
    r, a, sigma, lam, delta = params.r, params.a, params.sigma, params.lam, params.delta
    dt = cfg.dt
    n_steps, every = cfg.n_steps, cfg.record_every
    n_rec = n_steps // every + 1
    times = np.arange(n_rec) * cfg.record_dt
    n = cfg.n_paths
    sqdt = math.sqrt(dt)

    floor = control.wealth_floor(params) if hasattr(control, "wealth_floor") else 0.0
    tau = _exponential_clocks(cfg.seed, n, params.eta)
    names = ("X", "Z0", "c", "cum_U", "cum_dU", "cum_cY", "cum_fY", "cum_Vq")
    rec = {k: np.empty((n, n_rec)) for k in names}
    absorbed = np.zeros(n, dtype=bool)

    for start in range(0, n, cfg.chunk_size):
        stop = min(n, start + cfg.chunk_size)
        m = stop - start
        normals = _brownian_normals(cfg.seed, start, stop, n_steps, cfg.antithetic)
        tau_c = tau[start:stop]
        X = np.full(m, float(x0))
        Z = np.ones(m)
        alive = np.ones(m, dtype=bool)
        cums = np.zeros((5, m))
        prev = None
        for k in range(n_steps + 1):
            t = k * dt
            on = t < tau_c
            c, pi = control.rates(X, on, params)
            c = np.where(alive, c, 0.0)
            pi = np.where(alive, pi, 0.0)
            f = a * on
            disc = math.exp(-delta * t)
            Y = math.exp(-r * t) * Z * _gamma_factor(t, tau_c, deflator.gamma, params.eta)
            pos = c > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                dU = np.where(pos, np.power(c, p - 1.0) * (c - f), 0.0)
            cur = np.stack(
                (
                    disc * np.power(c, p) / p,
                    disc * dU,
                    c * Y,
                    f * Y,
                    disc * np.power(Y / disc, q),
                )
            )
            if prev is not None:
                cums += 0.5 * dt * (prev + cur)
            prev = cur
            if k % every == 0:
                j = k // every
                rec["X"][start:stop, j] = X
                rec["Z0"][start:stop, j] = Z
                rec["c"][start:stop, j] = c
                for name, row in zip(names[3:], cums):
                    rec[name][start:stop, j] = row
            if k == n_steps:
                break
            dW = sqdt * normals[:, k]
            X = X + (r * X - c + f) * dt + sigma * pi * (lam * dt + dW)
            Z = Z * np.exp(-lam * dW - 0.5 * lam * lam * dt)
            crossed = alive & (X < floor)
            alive &= ~crossed
            X = np.where(alive, X, floor)
        absorbed[start:stop] = ~alive

    for arr in rec.values():
        arr.flags.writeable = False
    return PathEnsemble(
        params=params,
        cfg=cfg,
        x0=float(x0),
        gamma=deflator.gamma,
        control_name=getattr(control, "name", type(control).__name__),
        times=times,
        tau=tau,
        absorbed=absorbed,
        **rec,
    )


def strong_error(params: MarketParams, dt: float, x0: float = 1.0, t: float = 1.0,
                 n_paths: int = 4000, seed: int = 42) -> float:
    """RMS relative pathwise error of Euler wealth against the closed form.

    Simulates the perpetual-income Merton plan with income that never stops
    and compares ``X_t`` with the closed form driven by the same simulated
    ``Z0_t``, relative to the shifted wealth ``X_t + a/r``.
    """
    p_on = params.replace(eta=0.0)
    cfg = PathConfig(dt=dt, t_max=t, n_paths=n_paths, seed=seed, record_dt=t, chunk_size=n_paths)
    ens = simulate_ensemble(x0, MertonPerpetual(), DeflatorSpec(), p_on, cfg, check_truncation=False)
    exact = merton_wealth_closed_form(t, ens.Z0[:, -1], x0, p_on)
    shift = p_on.a / p_on.r
    rel = (ens.X[:, -1] - exact) / (exact + shift)
    return float(np.sqrt(np.mean(rel**2)))


class Estimate(NamedTuple):
    mean: float
    se: float
    tail: float = math.nan


def _horizon_index(ens: PathEnsemble, measure: DiscountMeasure) -> int:
    if abs(measure.delta - ens.params.delta) > 1e-12:
        raise ValidationError("measure delta differs from the market delta")
    if math.isinf(measure.horizon):
        return ens.times.size - 1
    if measure.horizon > ens.cfg.t_max + 1e-12:
        raise ValidationError("measure horizon exceeds the simulated t_max")
    return ens.time_index(measure.horizon)


def estimate_primal(ens: PathEnsemble, measure: DiscountMeasure) -> Estimate:
    """Mean and standard error of ``int U(c) d kappa`` over the ensemble.

    For the infinite-horizon measure ``tail`` is the truncation bound
    ``exp(-delta t_max) E[u_inf(X_{t_max})]``; finite horizons report 0.
    """
    j = _horizon_index(ens, measure)
    values = ens.cum_U[:, j].copy()
    if measure.has_terminal_atom:
        values += PowerUtility(ens.params.p).U(ens.X[:, j])
    mean, se = ens.mean_se(values)
    if math.isinf(measure.horizon):
        params = ens.params
        u_inf = merton_value(ens.X[:, -1] + params.a / params.r, params)
        tail = math.exp(-params.delta * ens.cfg.t_max) * float(np.mean(u_inf))
    else:
        tail = 0.0
    return Estimate(float(mean), float(se), tail)


def estimate_dual(
    ens: PathEnsemble,
    deflator: DeflatorSpec,
    measure: DiscountMeasure,
    params: MarketParams | None = None,
) -> Estimate:
    """Mean and standard error of the dual objective at ``deflator.y``.

    ``int (V(zeta Y) + f zeta Y) d kappa`` with ``Y = y e^{-rt} Z0 Gamma``;
    the terminal-wealth measure adds ``V(Y_T)``.  ``tail`` is not estimated.
    """
    params = params or ens.params
    if abs(deflator.gamma - ens.gamma) > 0:
        raise ValidationError(f"ensemble was simulated with gamma={ens.gamma}, not {deflator.gamma}")
    j = _horizon_index(ens, measure)
    y, q = deflator.y, params.q
    values = -(y**q) / q * ens.cum_Vq[:, j] + y * ens.cum_fY[:, j]
    if measure.has_terminal_atom:
        Y_T = y * ens.unit_deflator()[:, j]
        values = values + PowerUtility(params.p).V(Y_T)
    mean, se = ens.mean_se(values)
    return Estimate(float(mean), float(se))


@dataclass(frozen=True)
class DeflatedCurves:
    times: np.ndarray
    mean_XY: np.ndarray
    se_XY: np.ndarray
    mean_Lambda: np.ndarray
    se_Lambda: np.ndarray


def deflated_wealth_curves(ens: PathEnsemble, deflator: DeflatorSpec) -> DeflatedCurves:
    """Time curves of ``E[X_t Y_t]`` and ``E[X_t Y_t + int_0^t (c - f) Y ds]``."""
    if abs(deflator.gamma - ens.gamma) > 0:
        raise ValidationError(f"ensemble was simulated with gamma={ens.gamma}, not {deflator.gamma}")
    XY = deflator.y * ens.X * ens.unit_deflator()
    Lam = XY + deflator.y * (ens.cum_cY - ens.cum_fY)
    m_xy, se_xy = ens.mean_se(XY)
    m_l, se_l = ens.mean_se(Lam)
    return DeflatedCurves(ens.times, m_xy, se_xy, m_l, se_l)


CURVE_COLUMNS = ("t", "mean_XY", "se_XY", "mean_Lambda", "se_Lambda")


def write_curves_csv(path, curves: DeflatedCurves) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in zip(curves.times, curves.mean_XY, curves.se_XY, curves.mean_Lambda, curves.se_Lambda):
            writer.writerow([repr(float(v)) for v in row])
    return path


def dump_raw_paths(directory, ens: PathEnsemble) -> list[Path]:
    """One CSV per recorded quantity, one row per path (path-major)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("X", "Z0", "c"):
        path = directory / f"paths_{name}.csv"
        np.savetxt(path, getattr(ens, name), delimiter=",", fmt="%.17g", header=",".join(f"{t:g}" for t in ens.times))
        written.append(path)
    path = directory / "paths_tau.csv"
    np.savetxt(path, ens.tau, fmt="%.17g")
    written.append(path)
    return written
