"""
Numerical checks of the duality conclusions on solver and simulator output.

Each check returns one or more :class:`CheckResult` rows.  ``kind`` is one of

* ``hard``        an inequality or identity that must hold (after standard
                  error slack where it is estimated); failures set a nonzero
                  exit status.
* ``statistical`` a tolerance-gated agreement between an estimate and its
                  oracle; reported pass/fail.
* ``soft``        a reported statistic; ``passed`` is informational only.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hjb import FeedbackPolicy, ValueSolution, WealthGrid, conjugate_transform, extract_feedback, solve_hjb
from .model import DiscountMeasure, MarketParams, merton_value
from .simulation import (
    ConstantConsumption,
    DeflatorSpec,
    IncomePlusInterest,
    MertonNoIncome,
    PathConfig,
    RegimeSwitch,
    SolvedPolicy,
    deflated_wealth_curves,
    estimate_dual,
    estimate_primal,
    simulate_ensemble,
)

__all__ = [
    "CheckResult",
    "DualityReport",
    "SweepTable",
    "check_sandwich",
    "check_budget_constraint",
    "check_income_value",
    "check_primal_consistency",
    "check_deflator_normalization",
    "check_weak_duality",
    "check_weak_duality_exact",
    "constant_dual_value",
    "constant_dual_minimum",
    "check_conjugacy",
    "check_derivative_formula",
    "check_potential_and_martingale",
    "check_sensitivity",
    "sweep_sensitivity",
    "run_verification",
]

HARD, STATISTICAL, SOFT = "hard", "statistical", "soft"


@dataclass(frozen=True)
class CheckResult:
    name: str
    property: str
    kind: str
    statistic: float
    scale: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class DualityReport:
    checks: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def extend(self, results) -> None:
        if isinstance(results, CheckResult):
            results = [results]
        self.checks.extend(results)

    @property
    def hard_failures(self) -> list:
        return [c for c in self.checks if c.kind == HARD and not c.passed]

    @property
    def exit_code(self) -> int:
        return 1 if self.hard_failures else 0

    def to_text(self) -> str:
        """Key-value document with a stable key order."""
        lines = []
        for key in sorted(self.metadata):
            lines.append(f"meta.{key} = {_fmt(self.metadata[key])}")
        for i, chk in enumerate(self.checks):
            prefix = f"check.{i:03d}"
            for key, value in asdict(chk).items():
                lines.append(f"{prefix}.{key} = {_fmt(value)}")
        lines.append(f"summary.hard_failures = {len(self.hard_failures)}")
        lines.append(f"summary.checks = {len(self.checks)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "property", "kind", "statistic", "scale", "threshold", "passed", "detail"])
        for c in self.checks:
            writer.writerow([c.name, c.property, c.kind, repr(c.statistic), repr(c.scale), repr(c.threshold), c.passed, c.detail])
        return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(value, sort_keys=True, default=str)
    return str(value)


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _infinite(params: MarketParams) -> DiscountMeasure:
    return DiscountMeasure.infinite(params.delta)


def _node_index(sol: ValueSolution, x: float) -> int:
    i = int(np.argmin(np.abs(sol.x - x)))
    if abs(sol.x[i] - x) > 1e-9 * max(1.0, x):
        raise ValueError(f"x={x} is not a grid node")
    return i


def _centered_marginal(sol: ValueSolution, x: float) -> float:
    i = _node_index(sol, x)
    return float((sol.u1[i - 1] - sol.u1[i + 1]) / (2.0 * sol.grid.h))


# Solver-side checks -----------------------------------------------------------


def check_sandwich(sol: ValueSolution) -> CheckResult:
    """``u0 <= u1 <= u_inf`` at every node, zero tolerance."""
    lo = sol.u1 - sol.u0()
    hi = sol.u_inf() - sol.u1
    worst = float(min(lo.min(), hi.min()))
    return CheckResult(
        "bound_sandwich", "no-income / perpetual-income bounds", HARD, worst, 0.0, 0.0, bool(worst >= 0.0),
        f"min(u1-u0)={lo.min():.3e} min(u_inf-u1)={hi.min():.3e}",
    )


def check_conjugacy(sol: ValueSolution, y_grid=None, n_y: int = 2000) -> list:
    """Round trip through the discrete conjugate, and shape of ``v`` on ``(0, y*)``."""
    y_hi = sol.y_star if math.isfinite(sol.y_star) else float(sol.du1[-2])
    if y_grid is None:
        y_lo = float(sol.du1[0])
        y_grid = np.linspace(y_lo, y_hi, n_y + 1)[:-1]
    y_grid = np.asarray(y_grid, dtype=float)
    dual = conjugate_transform(sol, y_grid)
    dy = float(np.max(np.diff(y_grid))) if y_grid.size > 1 else 0.0
    h = sol.grid.h
    finite = np.isfinite(sol.du1)
    bound = 5.0 * (h + dy) * float(np.max(np.abs(sol.du1[finite])))
    err = float(np.max(np.abs(dual.u_roundtrip - sol.u1)))
    out = [
        CheckResult("conjugacy_roundtrip", "primal and dual value functions are conjugate", STATISTICAL, err, bound, bound,
                    err <= bound, f"h={h:.3g} dy={dy:.3g}"),
    ]
    dv = np.diff(dual.v)
    d2v = np.diff(dual.v, 2)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(dual.v))))
    out.append(CheckResult("dual_decreasing", "dual value decreasing on (0, y*)", STATISTICAL, float(dv.max()), tol, tol,
                           bool(dv.max() <= tol)))
    out.append(CheckResult("dual_convex", "dual value convex on (0, y*)", STATISTICAL, float(d2v.min()), tol, -tol,
                           bool(d2v.min() >= -tol)))
    slope = float(dv[-1] / (y_grid[-1] - y_grid[-2]))
    curv0 = abs(float(sol.ddu1[-1])) if math.isfinite(sol.ddu1[-1]) else math.inf
    slope_tol = 2.0 * h + 2.0 * dy / curv0
    out.append(CheckResult("dual_slope_at_ystar", "v'(y) -> 0 as y -> y*", STATISTICAL, abs(slope), slope_tol, slope_tol,
                           abs(slope) <= slope_tol, f"y*={sol.y_star:.6g}"))
    return out


@dataclass(frozen=True)
class SweepTable:
    a_values: tuple
    eta_values: tuple
    u1_zero: np.ndarray
    y_star: np.ndarray
    c1_zero: np.ndarray

    def rows(self):
        for i, a in enumerate(self.a_values):
            for j, eta in enumerate(self.eta_values):
                yield a, eta, float(self.u1_zero[i, j]), float(self.y_star[i, j]), float(self.c1_zero[i, j])


def sweep_sensitivity(params: MarketParams, a_values, eta_values, grid: WealthGrid | None = None) -> SweepTable:
    """Zero-wealth value ``u1(0)`` over the ``(a, eta)`` product."""
    a_values, eta_values = tuple(a_values), tuple(eta_values)
    shape = (len(a_values), len(eta_values))
    u = np.empty(shape)
    ys = np.empty(shape)
    c0 = np.empty(shape)
    for i, a in enumerate(a_values):
        for j, eta in enumerate(eta_values):
            sol = solve_hjb(params.replace(a=a, eta=eta), grid)
            u[i, j] = sol.u1[-1]
            ys[i, j] = sol.y_star
            c0[i, j] = extract_feedback(sol).c1[-1]
    return SweepTable(a_values, eta_values, u, ys, c0)


def check_sensitivity(table: SweepTable) -> list:
    u = table.u1_zero
    inc_a = np.diff(u, axis=0) if u.shape[0] > 1 else np.ones((1, 1))
    # without income u1(0) = 0 for every eta, so only income rows can decrease
    rows = [i for i, a in enumerate(table.a_values) if a > 0]
    dec_eta = -np.diff(u[rows], axis=1) if rows and u.shape[1] > 1 else np.ones((1, 1))
    out = [
        CheckResult("u1_zero_increasing_in_a", "value at zero wealth rises with income", HARD,
                    float(inc_a.min()), 0.0, 0.0, bool(inc_a.min() > 0)),
        CheckResult("u1_zero_decreasing_in_eta", "value at zero wealth falls with termination intensity", HARD,
                    float(dec_eta.min()), 0.0, 0.0, bool(dec_eta.min() > 0)),
    ]
    if 0.0 in table.a_values:
        row = u[table.a_values.index(0.0)]
        out.append(CheckResult("u1_zero_without_income", "u1(0) = 0 when a = 0", HARD,
                               float(np.max(np.abs(row))), 0.0, 0.0, bool(np.all(row == 0.0))))
    c = table.c1_zero
    positive = [(a, c[i]) for i, a in enumerate(table.a_values) if a > 0]
    if len(positive) > 1:
        dc = np.diff(np.array([row for _, row in positive]), axis=0)
        out.append(CheckResult("c1_zero_increasing_in_a", "consumption at zero wealth rises with income", STATISTICAL,
                               float(dc.min()), 0.0, 0.0, bool(dc.min() > 0)))
    return out


# Exact dual values for constant gamma ----------------------------------------------


def _dual_coefficients(gamma: float, params: MarketParams):
    """``v_gamma(y) = A y**q / (-q) + B y`` on the infinite horizon.

    With ``k = eta (1 + gamma q)`` and ``b`` the decay rate of
    ``e^{-delta t} E[(zeta Y)^q] / y^q`` before the jump factor,

        A = (b + eta (1 + gamma)^q) / (b (b + k)),   B = a / (r + eta (1 + gamma)).

    Returns ``(A, B)``; ``A`` is infinite when ``b + k <= 0``.
    """
    if not gamma > -1.0:
        raise ValueError("gamma must be > -1")
    q, lam, delta, r, eta = params.q, params.lam, params.delta, params.r, params.eta
    b = delta - q * (delta - r) - 0.5 * q * (q - 1.0) * lam**2
    k = eta * (1.0 + gamma * q)
    A = (b + eta * (1.0 + gamma) ** q) / (b * (b + k)) if b + k > 0 else math.inf
    B = params.a / (r + eta * (1.0 + gamma))
    return A, B


def constant_dual_value(y, gamma: float, params: MarketParams):
    """Exact dual value ``E int e^{-delta t} V(zeta Y) dt + y E int f Y dt``."""
    A, B = _dual_coefficients(gamma, params)
    y = np.asarray(y, dtype=float)
    out = A * np.power(y, params.q) / (-params.q) + B * y
    return out[()] if out.ndim == 0 else out


def constant_dual_minimum(x: float, gamma: float, params: MarketParams):
    """``min_y [v_gamma(y) + x y]`` and its minimizer, in closed form."""
    A, B = _dual_coefficients(gamma, params)
    slope = B + x
    if not math.isfinite(A):
        return math.inf, math.nan
    if slope <= 0:
        return -math.inf if A == 0 else 0.0, math.inf
    y = (slope / A) ** (1.0 / (params.q - 1.0))
    return A * y**params.q / (-params.q) + slope * y, y


def check_weak_duality_exact(sol: ValueSolution, params: MarketParams, gamma_grid=(0.0, 0.5, 2.0),
                             xs=(0.0, 0.5, 1.0, 2.0, 5.0)) -> list:
    """``u1(x) <= min_y [v_gamma(y) + x y]`` with exact dual values.

    Any constant ``gamma`` gives an upper bound on the value of the
    problem with nonnegative wealth, so a violation means ``u1`` exceeds
    that value.
    """
    from scipy.optimize import minimize_scalar

    out = []
    worst, detail = math.inf, ""
    for x in xs:
        u = sol.value_at(x)
        for gamma in gamma_grid:
            bound, y = constant_dual_minimum(x, gamma, params)
            if bound - u < worst:
                worst = bound - u
                detail = f"gamma={gamma:g} x={x:g} y={y:.6g} min(v+xy)={bound:.8g} u1={u:.8g}"
    out.append(CheckResult("weak_duality_exact", "weak duality u <= v + xy (exact dual values)", HARD,
                           float(worst), 0.0, 0.0, bool(worst >= 0), detail))
    q = params.q
    g_hi = math.inf if q >= 0 else -1.0 / q
    for x in xs:
        u = sol.value_at(x)
        upper = 50.0 if not math.isfinite(g_hi) else g_hi * (1.0 - 1e-9)
        # the bound is finite on [0, upper) and blows up at the right end
        res = minimize_scalar(lambda g: constant_dual_minimum(x, g, params)[0], bounds=(0.0, min(upper, 50.0)),
                              method="bounded", options={"xatol": 1e-10})
        best = min(float(res.fun), constant_dual_minimum(x, 0.0, params)[0])
        out.append(CheckResult(f"duality_gap_exact[x={x:g}]", "gap left by constant dual controls", SOFT,
                               best - u, 0.0, math.nan, True, f"gamma*={float(res.x):.6g} bound={best:.8g}"))
    return out


# Simulation-side checks ----------------------------------------------------------


def check_budget_constraint(control, deflator: DeflatorSpec, params: MarketParams, cfg: PathConfig,
                            x: float = 1.0, label: str | None = None) -> CheckResult:
    """``E[int (c - f) Y dt] <= x y + 3 se``."""
    ens = simulate_ensemble(x, control, deflator, params, cfg)
    values = deflator.y * (ens.cum_cY[:, -1] - ens.cum_fY[:, -1])
    mean, se = ens.mean_se(values)
    stat = float(mean - x * deflator.y)
    name = label or f"budget[{ens.control_name},gamma={deflator.gamma:g}]"
    return CheckResult(name, "budget constraint", HARD, stat, float(se), 3.0 * float(se), bool(stat <= 3.0 * se),
                       f"estimate={float(mean):.6g} xy={x * deflator.y:.6g} absorbed={ens.absorbed_fraction:.4f}")


def check_budget_saturation(params: MarketParams, cfg: PathConfig, x: float = 1.0, y: float = 1.0) -> CheckResult:
    """No-income Merton optimum spends exactly ``x y`` in deflated terms."""
    p0 = params.replace(a=0.0)
    deflator = DeflatorSpec(0.0, y)
    ens = simulate_ensemble(x, MertonNoIncome(), deflator, p0, cfg)
    mean, se = ens.mean_se(y * ens.cum_cY[:, -1])
    tail = x * y * math.exp(-p0.K * cfg.t_max)
    stat = float(mean - x * y)
    return CheckResult("budget_saturation_merton", "optimal plan saturates the budget", STATISTICAL, stat, float(se),
                       3.0 * float(se), bool(abs(stat) <= 3.0 * se),
                       f"estimate={float(mean):.6g} xy={x * y:.6g} truncated_mass={tail:.3g}")


def check_income_value(params: MarketParams, cfg: PathConfig) -> CheckResult:
    """``E[int e^{-rt} a N Z0 dt] = a / (r + eta)`` with ``gamma = 0``."""
    ens = simulate_ensemble(0.0, ConstantConsumption(0.0), DeflatorSpec(0.0, 1.0), params, cfg)
    mean, se = ens.mean_se(ens.cum_fY[:, -1])
    exact = params.a / (params.r + params.eta) * (1.0 - math.exp(-(params.r + params.eta) * cfg.t_max))
    stat = float(mean - exact)
    return CheckResult("income_value", "deflated income value a/(r+eta)", STATISTICAL, stat, float(se),
                       3.0 * float(se), bool(abs(stat) <= 3.0 * se),
                       f"estimate={float(mean):.6g} exact={params.a / (params.r + params.eta):.6g}")


def check_primal_consistency(sol: ValueSolution, policy: FeedbackPolicy, params: MarketParams, cfg: PathConfig,
                             x: float = 1.0) -> CheckResult:
    """Regime-switch simulation of the solved policy against ``u1(x)``."""
    ens = simulate_ensemble(x, RegimeSwitch(SolvedPolicy(policy), MertonNoIncome()), DeflatorSpec(), params, cfg)
    est = estimate_primal(ens, _infinite(params))
    target = sol.value_at(x)
    diff = est.mean - target
    tol = max(2.0 * est.se, 0.02 * abs(target))
    return CheckResult("primal_mc_consistency", "simulated optimal utility matches u1", STATISTICAL, float(diff),
                       float(est.se), tol, bool(abs(diff) <= tol),
                       f"estimate={est.mean:.6g} u1={target:.6g} tail_bound={est.tail:.3g} "
                       f"absorbed={ens.absorbed_fraction:.4f}")


def check_deflator_normalization(params: MarketParams, cfg: PathConfig, gamma: float = 0.5,
                                 times=(1.0, 5.0, 12.5)) -> list:
    """``E[Gamma_t] = E[Z0_t] = 1`` within three standard errors."""
    ens = simulate_ensemble(0.0, ConstantConsumption(0.0), DeflatorSpec(gamma, 1.0), params, cfg)
    G = ens.jump_deflator()
    out = []
    for t in times:
        j = ens.time_index(t)
        for label, arr in (("Gamma", G[:, j]), ("Z0", ens.Z0[:, j])):
            mean, se = ens.mean_se(arr)
            stat = float(mean - 1.0)
            out.append(CheckResult(f"normalization[{label},t={t:g}]", "deflators are martingales", STATISTICAL, stat,
                                   float(se), 3.0 * float(se), bool(abs(stat) <= 3.0 * se)))
    return out


def check_weak_duality(sol: ValueSolution, gamma_grid, y_grid, params: MarketParams, cfg: PathConfig,
                       xs=(0.5, 1.0, 2.0, 5.0)):
    """``u1(x) <= v_gamma(y) + x y + 3 se`` for every ``(gamma, y, x)``.

    Returns ``(results, gap)`` where ``gap[x] = min_{gamma,y}[v_gamma(y) + x y] - u1(x)``
    is the duality gap left by constant dual controls.
    """
    measure = _infinite(params)
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(y_grid <= 0) or (math.isfinite(sol.y_star) and np.any(y_grid >= sol.y_star)):
        raise ValueError("y_grid must lie inside (0, y*)")
    results = []
    best = {x: math.inf for x in xs}
    best_se = {x: 0.0 for x in xs}
    worst_margin = math.inf
    worst_detail = ""
    for gamma in gamma_grid:
        # common random numbers across gamma
        ens = simulate_ensemble(0.0, ConstantConsumption(0.0), DeflatorSpec(gamma, 1.0), params, cfg)
        for y in y_grid:
            est = estimate_dual(ens, DeflatorSpec(gamma, float(y)), measure, params)
            for x in xs:
                u = sol.value_at(x)
                upper = est.mean + x * y
                margin = upper + 3.0 * est.se - u
                if margin < worst_margin:
                    worst_margin = margin
                    worst_detail = f"gamma={gamma:g} y={y:.4g} x={x:g} v+xy={upper:.6g} u1={u:.6g} se={est.se:.3g}"
                if upper < best[x]:
                    best[x] = upper
                    best_se[x] = est.se
    results.append(CheckResult("weak_duality", "weak duality u <= v + xy", HARD, float(worst_margin), 0.0, 0.0,
                               bool(worst_margin >= 0), worst_detail))
    gap = {}
    for x in xs:
        g = best[x] - sol.value_at(x)
        gap[x] = (float(g), float(best_se[x]))
        results.append(CheckResult(f"duality_gap[x={x:g}]", "gap left by constant dual controls", SOFT, float(g),
                                   float(best_se[x]), math.nan, True))
    return results, gap


def check_derivative_formula(sol: ValueSolution, policy: FeedbackPolicy, params: MarketParams, cfg: PathConfig,
                             x: float = 1.0) -> CheckResult:
    """``x u'(x) = E[int U'(c)(c - f) d kappa]`` under the optimal plan."""
    ens = simulate_ensemble(x, RegimeSwitch(SolvedPolicy(policy), MertonNoIncome()), DeflatorSpec(), params, cfg)
    mean, se = ens.mean_se(ens.cum_dU[:, -1])
    target = x * _centered_marginal(sol, x)
    diff = float(mean - target)
    tol = max(3.0 * float(se), 0.02 * abs(target))
    return CheckResult("derivative_formula", "marginal value identity", STATISTICAL, diff, float(se), tol,
                       bool(abs(diff) <= tol),
                       f"estimate={float(mean):.6g} x*u1'(x)={target:.6g} absorbed={ens.absorbed_fraction:.4f}")


def check_potential_and_martingale(control, deflator: DeflatorSpec, params: MarketParams, cfg: PathConfig,
                                   x: float = 1.0, label: str = "", expect_martingale: bool = False) -> list:
    """Supermartingale property of ``Lambda`` and decay of ``E[X Y]``.

    With ``expect_martingale`` the curve must also stay at ``x y`` within
    three standard errors at every recorded time.
    """
    ens = simulate_ensemble(x, control, deflator, params, cfg)
    curves = deflated_wealth_curves(ens, deflator)
    xy = x * deflator.y
    tag = label or ens.control_name
    out = []
    Y = ens.unit_deflator()
    Lam = deflator.y * (ens.X * Y + ens.cum_cY - ens.cum_fY)
    dev0 = float(np.max(np.abs(Lam[:, 0] - xy)))
    out.append(CheckResult(f"lambda_initial[{tag}]", "E[Lambda_0] = xy", HARD, dev0, 0.0, 0.0, dev0 == 0.0))

    incr = np.diff(Lam, axis=1)
    m_inc, se_inc = ens.mean_se(incr)
    excess = m_inc - 3.0 * se_inc
    j = int(np.argmax(excess))
    out.append(CheckResult(f"supermartingale[{tag}]", "E[Lambda_t] nonincreasing", HARD, float(m_inc[j]),
                           float(se_inc[j]), 3.0 * float(se_inc[j]), bool(excess.max() <= 0),
                           f"worst step ends at t={curves.times[j + 1]:g}"))
    if expect_martingale:
        dev = np.abs(curves.mean_Lambda - xy) - 3.0 * curves.se_Lambda
        dev[0] = -math.inf
        k = int(np.argmax(dev))
        out.append(CheckResult(f"martingale[{tag}]", "E[Lambda_t] = xy for the no-income optimum", STATISTICAL,
                               float(curves.mean_Lambda[k] - xy), float(curves.se_Lambda[k]),
                               3.0 * float(curves.se_Lambda[k]), bool(dev[1:].max() <= 0), f"worst at t={curves.times[k]:g}"))
    terminal = float(curves.mean_XY[-1])
    decreasing = bool(np.all(np.diff(curves.mean_XY) <= 3.0 * curves.se_XY[1:]))
    out.append(CheckResult(f"potential_terminal[{tag}]", "E[X_T Y_T] small at the horizon", SOFT, terminal / xy,
                           float(curves.se_XY[-1]) / xy, 0.05, bool(terminal < 0.05 * xy and decreasing),
                           f"monotone_trend={decreasing}; exact flatness needs a stochastic dual control"))
    return out


def run_verification(params: MarketParams, grid: WealthGrid | None = None, cfg: PathConfig | None = None,
                     x: float = 1.0, gamma_grid=(0.0, 0.5, 2.0)) -> DualityReport:
    """Full report at ``params``; dual values default to ``y = u1'(x)``."""
    grid = grid or WealthGrid()
    cfg = cfg or PathConfig()
    sol = solve_hjb(params, grid)
    policy = extract_feedback(sol)
    y = sol.marginal_at(x)
    report = DualityReport(metadata={
        "params": params.as_dict(),
        "grid": {"x_max": grid.x_max, "n": grid.n},
        "sim": {"dt": cfg.dt, "t_max": cfg.t_max, "n_paths": cfg.n_paths, "antithetic": cfg.antithetic,
                "record_dt": cfg.record_dt},
        "seed": cfg.seed,
        "fingerprint": fingerprint([params.as_dict(), grid.x_max, grid.n, cfg.dt, cfg.t_max, cfg.n_paths, cfg.seed]),
        "x": x,
        "y": y,
        "y_star": sol.y_star,
        "thresholds": "3 se and 2% relative, sized for n_paths=2e4, dt=0.01, t_max=25",
        "theory_only": "existence/uniqueness of dual optimizer and density of local martingale deflators "
                       "are not numerically checkable; see duality_gap rows as indirect evidence",
    })
    report.extend(check_sandwich(sol))
    report.extend(check_conjugacy(sol))

    seed = cfg.seed
    plans = [
        RegimeSwitch(SolvedPolicy(policy), MertonNoIncome()),
        ConstantConsumption(0.0),
        IncomePlusInterest(),
    ]
    for i, plan in enumerate(plans):
        for k, gamma in enumerate(gamma_grid):
            report.extend(check_budget_constraint(plan, DeflatorSpec(gamma, y), params,
                                                  cfg.replace(seed=seed + 10 * i + k + 1), x))
    report.extend(check_income_value(params, cfg.replace(seed=seed + 50)))
    report.extend(check_deflator_normalization(params, cfg.replace(seed=seed + 60)))
    report.extend(check_primal_consistency(sol, policy, params, cfg.replace(seed=seed + 70), x))
    report.extend(check_derivative_formula(sol, policy, params, cfg.replace(seed=seed + 80), x))

    y_grid = sorted({sol.marginal_at(xx) for xx in (0.5, 1.0, 2.0, 5.0)})
    results, _ = check_weak_duality(sol, gamma_grid, y_grid, params, cfg.replace(seed=seed + 90))
    report.extend(results)
    report.extend(check_weak_duality_exact(sol, params, gamma_grid))

    report.extend(check_potential_and_martingale(RegimeSwitch(SolvedPolicy(policy), MertonNoIncome()),
                                                 DeflatorSpec(0.0, y), params, cfg.replace(seed=seed + 200), x,
                                                 label="solved"))
    p0 = params.replace(a=0.0)
    sol0 = solve_hjb(p0, grid)
    y0 = float(merton_value(x, p0)) * p0.p / x
    report.extend(check_potential_and_martingale(MertonNoIncome(), DeflatorSpec(0.0, y0), p0,
                                                 cfg.replace(seed=seed + 210), x, label="merton_a0",
                                                 expect_martingale=True))
    report.extend(check_sandwich(sol0))
    table = sweep_sensitivity(params, (0.0, 0.05, 0.1, 0.2, 0.4), (0.05, 0.1, 0.2, 0.5), grid)
    report.extend(check_sensitivity(table))
    return report
