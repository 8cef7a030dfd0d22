"""
Command-line entry point.

    termincome [--config FILE] [--seed N] [--out DIR] [--svg] SUBCOMMAND [overrides]

Subcommands: ``solve``, ``simulate``, ``verify``, ``sweep``, ``figures``.
Every emitted file is listed with its SHA-256 in ``DIR/MANIFEST``; on
failure the manifest records the stage that failed and the partial
artifacts are kept.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, TermIncomeError, ValidationError
from .hjb import WealthGrid, extract_feedback, linear_fit_r2, solve_hjb, write_solution_csv
from .model import DiscountMeasure, MarketParams, derive_constants
from .simulation import (
    DeflatorSpec,
    MertonNoIncome,
    PathConfig,
    RegimeSwitch,
    SolvedPolicy,
    deflated_wealth_curves,
    estimate_primal,
    simulate_ensemble,
    write_curves_csv,
)
from .verify import run_verification, sweep_sensitivity

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("termincome")

DEFAULT_A_VALUES = (0.0, 0.05, 0.1, 0.2, 0.4)
DEFAULT_ETA_VALUES = (0.05, 0.1, 0.2, 0.5)

_SECTIONS = {
    "params": ("r", "sigma", "lam", "delta", "eta", "a", "p"),
    "grid": ("x_max", "n"),
    "sim": ("dt", "t_max", "n_paths", "seed", "antithetic", "record_dt", "chunk_size"),
    "sweep": ("a_values", "eta_values"),
}
_TOP_LEVEL = ("output_dir", "emit_svg")


@dataclass(frozen=True)
class RunConfig:
    params: MarketParams = field(default_factory=MarketParams)
    grid: WealthGrid = field(default_factory=WealthGrid)
    sim: PathConfig = field(default_factory=PathConfig)
    a_values: tuple = DEFAULT_A_VALUES
    eta_values: tuple = DEFAULT_ETA_VALUES
    output_dir: Path = Path("out")
    emit_svg: bool = False


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*\[\s*{re.escape(key)}\s*\]")
    for i, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return i
    return None


def _where(text: str, key: str, name: str) -> str:
    line = _line_of(text, key)
    return f"line {line}, key '{name}'" if line else f"key '{name}'"


def parse_config_text(text: str) -> RunConfig:
    """Parse TOML text into a validated :class:`RunConfig`.

    Missing keys take their defaults, so an empty document gives the
    default configuration.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed config: {exc}") from exc

    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ParseError(f"{_where(text, key, key)}: expected a [{key}] table")
            for sub in value:
                if sub not in _SECTIONS[key]:
                    raise ParseError(f"{_where(text, sub, key + '.' + sub)}: unknown key")
        elif key not in _TOP_LEVEL:
            raise ParseError(f"{_where(text, key, key)}: unknown key")

    def section(name):
        return doc.get(name, {})

    def typed(name, sub, value, kinds):
        if isinstance(value, bool) and bool not in kinds:
            raise ValidationError(f"{_where(text, sub, name + '.' + sub)}: expected a number, got {value!r}")
        if not isinstance(value, kinds):
            raise ValidationError(f"{_where(text, sub, name + '.' + sub)}: wrong type {type(value).__name__}")
        return value

    number = (int, float)
    params = MarketParams(**{k: typed("params", k, v, number) for k, v in section("params").items()})
    derive_constants(params)
    g = {k: typed("grid", k, v, number if k == "x_max" else (int,)) for k, v in section("grid").items()}
    grid = WealthGrid(**g)
    s = {}
    for k, v in section("sim").items():
        kinds = (bool,) if k == "antithetic" else (int,) if k in ("n_paths", "seed", "chunk_size") else number
        s[k] = typed("sim", k, v, kinds)
    sim = PathConfig(**s)
    sw = section("sweep")
    a_values = tuple(float(typed("sweep", "a_values", v, number)) for v in sw.get("a_values", DEFAULT_A_VALUES))
    eta_values = tuple(float(typed("sweep", "eta_values", v, number)) for v in sw.get("eta_values", DEFAULT_ETA_VALUES))
    for a in a_values:
        params.replace(a=a)
    for eta in eta_values:
        params.replace(eta=eta)
    out = doc.get("output_dir", "out")
    if not isinstance(out, str):
        raise ValidationError(f"{_where(text, 'output_dir', 'output_dir')}: expected a string")
    svg = doc.get("emit_svg", False)
    if not isinstance(svg, bool):
        raise ValidationError(f"{_where(text, 'emit_svg', 'emit_svg')}: expected true or false")
    return RunConfig(params, grid, sim, a_values, eta_values, Path(out), svg)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config_text(text)


# Emission -----------------------------------------------------------------------


class Manifest:
    """Collects emitted files; written on success and on failure alike."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[Path] = []
        self.failure: str | None = None

    def add(self, path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def write(self) -> Path:
        lines = []
        for p in sorted(set(self.files)):
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.relative_to(self.out).as_posix()}")
        lines.append(f"status: {'failed: ' + self.failure if self.failure else 'ok'}")
        path = self.out / "MANIFEST"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _window(x, lo, hi):
    return (x >= lo) & (x <= hi)


def run_solve(cfg: RunConfig, manifest: Manifest, x: float) -> int:
    sol = solve_hjb(cfg.params, cfg.grid)
    policy = extract_feedback(sol)
    manifest.add(write_solution_csv(cfg.output_dir / "solution.csv", sol, policy))
    near = _window(sol.x, 0.0, 0.5)
    print(f"u1(0) = {sol.u1[-1]:.10g}")
    print(f"y* = u1'(0) = {sol.y_star:.10g}")
    print(f"c1(0) = {policy.c1[-1]:.10g}  pi1(0) = {policy.pi1[-1]:.10g}")
    print(f"u1({x:g}) = {sol.value_at(x):.10g}")
    print(f"R^2 linear fit on [0, 0.5]: c1 {linear_fit_r2(sol.x[near], policy.c1[near]):.6f}  "
          f"pi1 {linear_fit_r2(sol.x[near], policy.pi1[near]):.6f}")
    print(f"max HJB residual = {sol.residual_max:.3e}")
    return 0


def run_simulate(cfg: RunConfig, manifest: Manifest, x: float) -> int:
    sol = solve_hjb(cfg.params, cfg.grid)
    policy = extract_feedback(sol)
    y = sol.marginal_at(x)
    deflator = DeflatorSpec(0.0, y)
    control = RegimeSwitch(SolvedPolicy(policy), MertonNoIncome())
    ens = simulate_ensemble(x, control, deflator, cfg.params, cfg.sim)
    est = estimate_primal(ens, DiscountMeasure.infinite(cfg.params.delta))
    m_dU, se_dU = ens.mean_se(ens.cum_dU[:, -1])
    rows = [
        ("x", x), ("y", y), ("u1", sol.value_at(x)),
        ("primal_mean", est.mean), ("primal_se", est.se), ("primal_tail", est.tail),
        ("marginal_identity_mean", m_dU), ("marginal_identity_se", se_dU),
        ("absorbed_fraction", ens.absorbed_fraction),
        ("n_paths", cfg.sim.n_paths), ("dt", cfg.sim.dt), ("t_max", cfg.sim.t_max), ("seed", cfg.sim.seed),
    ]
    manifest.add(_write_rows(cfg.output_dir / "ensemble_summary.csv", ("quantity", "value"), rows))
    manifest.add(write_curves_csv(cfg.output_dir / "deflated_wealth.csv", deflated_wealth_curves(ens, deflator)))
    print(f"primal estimate {est.mean:.6g} +/- {est.se:.3g} vs u1({x:g}) = {sol.value_at(x):.6g}; "
          f"absorbed {ens.absorbed_fraction:.2%}")
    return 0


def run_verify(cfg: RunConfig, manifest: Manifest, x: float) -> int:
    report = run_verification(cfg.params, cfg.grid, cfg.sim, x=x)
    path = cfg.output_dir / "report.txt"
    path.write_text(report.to_text(), encoding="utf-8")
    manifest.add(path)
    path = cfg.output_dir / "report.csv"
    path.write_text(report.to_csv(), encoding="utf-8")
    manifest.add(path)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.kind:<11} {c.name}")
    if report.hard_failures:
        names = ", ".join(c.name for c in report.hard_failures)
        manifest.failure = f"hard checks failed: {names}"
        print(f"hard check failures: {names}", file=sys.stderr)
    return report.exit_code


def _sweep_rows(cfg: RunConfig):
    table = sweep_sensitivity(cfg.params, cfg.a_values, cfg.eta_values, cfg.grid)
    return table, list(table.rows())


def run_sweep(cfg: RunConfig, manifest: Manifest, x: float) -> int:
    _, rows = _sweep_rows(cfg)
    manifest.add(_write_rows(cfg.output_dir / "sweep.csv", ("a", "eta", "u1_zero", "y_star", "c1_zero"), rows))
    return 0


def run_figures(cfg: RunConfig, manifest: Manifest, x: float) -> int:
    out = cfg.output_dir
    params = cfg.params
    sol = solve_hjb(params, cfg.grid)
    policy = extract_feedback(sol)
    xs = sol.x[::-1]
    panel_a = _window(xs, 0.0, 3.0)
    u1, u0, ui = sol.u1[::-1], sol.u0()[::-1], sol.u_inf()[::-1]
    files = {}
    files["fig1a_value"] = _write_rows(
        out / "fig1a_value.csv", ("x", "u1", "u0", "u_inf"),
        zip(xs[panel_a], u1[panel_a], u0[panel_a], ui[panel_a]),
    )
    sweep_a = tuple(a for a in cfg.a_values)
    u_a = [solve_hjb(params.replace(a=a), cfg.grid).u1[-1] for a in sweep_a]
    files["fig1b_vs_a"] = _write_rows(out / "fig1b_vs_a.csv", ("a", "u1_zero"), zip(sweep_a, u_a))
    u_eta = [solve_hjb(params.replace(eta=e), cfg.grid).u1[-1] for e in cfg.eta_values]
    files["fig1b_vs_eta"] = _write_rows(out / "fig1b_vs_eta.csv", ("eta", "u1_zero"), zip(cfg.eta_values, u_eta))
    near = _window(xs, 0.0, 0.5)
    K, m = params.K, params.merton_proportion
    shift = params.a / params.r
    c1, pi1 = policy.c1[::-1], policy.pi1[::-1]
    files["fig2a_consumption"] = _write_rows(
        out / "fig2a_consumption.csv", ("x", "c1", "c0", "c_inf"),
        zip(xs[near], c1[near], K * xs[near], K * (xs[near] + shift)),
    )
    files["fig2b_investment"] = _write_rows(
        out / "fig2b_investment.csv", ("x", "pi1", "pi0", "pi_inf"),
        zip(xs[near], pi1[near], m * xs[near], m * (xs[near] + shift)),
    )
    for p in files.values():
        manifest.add(p)
    if cfg.emit_svg:
        for p in _render_svgs(files):
            manifest.add(p)
    return 0


_SVG_LABELS = {
    "fig1a_value": ("wealth x", "value"),
    "fig1b_vs_a": ("income rate a", "u1(0)"),
    "fig1b_vs_eta": ("termination intensity eta", "u1(0)"),
    "fig2a_consumption": ("wealth x", "consumption rate"),
    "fig2b_investment": ("wealth x", "amount in stock"),
}


def _render_svgs(files: dict) -> list:
    """Line plots read back from the emitted CSV files."""
    import matplotlib

    matplotlib.use("svg")
    matplotlib.rcParams["svg.hashsalt"] = "termincome"
    matplotlib.rcParams["svg.fonttype"] = "none"
    import matplotlib.pyplot as plt

    out = []
    for stem, csv_path in files.items():
        data = np.genfromtxt(csv_path, delimiter=",", names=True)
        names = data.dtype.names
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for col in names[1:]:
            ax.plot(data[names[0]], data[col], label=col, marker="o" if data.size < 20 else None)
        xlabel, ylabel = _SVG_LABELS[stem]
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = csv_path.with_suffix(".svg")
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        out.append(path)
    return out


COMMANDS = {
    "solve": run_solve,
    "simulate": run_simulate,
    "verify": run_verify,
    "sweep": run_sweep,
    "figures": run_figures,
}


def _decimal(text: str) -> float:
    """Locale-independent decimal parsing."""
    if not re.fullmatch(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?", text.strip()):
        raise argparse.ArgumentTypeError(f"not a decimal number: {text!r}")
    return float(text)


def _seed(text: str) -> int:
    if not re.fullmatch(r"\d+", text.strip()) or int(text) >= 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer: {text!r}")
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="termincome", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--seed", type=_seed, help="override sim.seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--svg", action="store_true", help="also write SVG plots (figures)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--a", type=_decimal, help="income rate")
        p.add_argument("--eta", type=_decimal, help="termination intensity")
        p.add_argument("--r", type=_decimal, help="interest rate")
        p.add_argument("--x", type=_decimal, default=1.0, help="evaluation wealth (default 1)")
        p.add_argument("--paths", type=int, help="number of simulated paths")
        p.add_argument("--dt", type=_decimal, help="time step")
        p.add_argument("--tmax", type=_decimal, help="simulation horizon")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    changes = {k: getattr(args, k) for k in ("a", "eta", "r") if getattr(args, k) is not None}
    params = cfg.params.replace(**changes) if changes else cfg.params
    derive_constants(params)
    sim_changes = {}
    if args.paths is not None:
        sim_changes["n_paths"] = args.paths
    if args.dt is not None:
        sim_changes["dt"] = args.dt
    if args.tmax is not None:
        sim_changes["t_max"] = args.tmax
    if args.seed is not None:
        sim_changes["seed"] = args.seed
    sim = cfg.sim.replace(**sim_changes) if sim_changes else cfg.sim
    out = args.out if args.out is not None else cfg.output_dir
    return RunConfig(params, cfg.grid, sim, cfg.a_values, cfg.eta_values, Path(out), cfg.emit_svg or args.svg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if not math.isfinite(args.x) or args.x < 0:
        print("config error: --x must be a non-negative number", file=sys.stderr)
        return 2
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: output directory {cfg.output_dir} is not writable: {exc.strerror}", file=sys.stderr)
        return 2
    manifest = Manifest(cfg.output_dir)
    try:
        status = COMMANDS[args.command](cfg, manifest, args.x)
    except TermIncomeError as exc:
        manifest.failure = f"{args.command}: {type(exc).__name__}: {exc}"
        print(f"error: {manifest.failure}", file=sys.stderr)
        status = 1
    finally:
        manifest.write()
    return status


if __name__ == "__main__":
    sys.exit(main())
