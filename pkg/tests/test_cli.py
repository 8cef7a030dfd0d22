import csv
import hashlib

import pytest

from termincome.cli import RunConfig, main, parse_config, parse_config_text
from termincome.errors import ParseError, ValidationError, WellPosednessError
from termincome.model import MarketParams


def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    assert cfg.params == MarketParams()
    assert (cfg.grid.x_max, cfg.grid.n) == (20.0, 4001)
    assert (cfg.sim.n_paths, cfg.sim.dt, cfg.sim.t_max, cfg.sim.seed) == (20000, 0.01, 25.0, 42)
    assert cfg == RunConfig()


def test_full_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        'output_dir = "results"\nemit_svg = true\n'
        "[params]\na = 0.4\neta = 0.2\n"
        "[grid]\nx_max = 10\nn = 2001\n"
        "[sim]\nn_paths = 1000\nseed = 7\nantithetic = false\n"
        "[sweep]\na_values = [0.1, 0.2]\neta_values = [0.1]\n"
    )
    cfg = parse_config(path)
    assert cfg.params.a == 0.4 and cfg.params.eta == 0.2
    assert cfg.grid.n == 2001 and cfg.sim.seed == 7 and not cfg.sim.antithetic
    assert cfg.a_values == (0.1, 0.2) and cfg.emit_svg and str(cfg.output_dir) == "results"


def test_domain_violation():
    with pytest.raises(ValidationError, match="p must lie"):
        parse_config_text("[params]\np = 1.5\n")


def test_ill_posed_market():
    # K = 2 (0.02 - 0.025 - 0.5) < 0
    with pytest.raises(WellPosednessError):
        parse_config_text("[params]\ndelta = 0.02\n")


def test_unknown_keys_report_line():
    with pytest.raises(ParseError, match=r"line 3, key 'params.beta'"):
        parse_config_text("[params]\na = 0.1\nbeta = 2\n")
    with pytest.raises(ParseError, match="unknown key"):
        parse_config_text("[solver]\nn = 3\n")


def test_syntax_error_reports_position():
    with pytest.raises(ParseError, match="line 2"):
        parse_config_text("[params]\na = \n")


def test_type_errors():
    with pytest.raises(ValidationError, match="sim.n_paths"):
        parse_config_text("[sim]\nn_paths = 1.5\n")
    with pytest.raises(ValidationError, match="params.a"):
        parse_config_text('[params]\na = "high"\n')


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_config(tmp_path / "absent.toml")


def _manifest(out):
    lines = (out / "MANIFEST").read_text().splitlines()
    entries = dict(reversed(line.split("  ", 1)) for line in lines[:-1])
    return entries, lines[-1]


def test_solve_writes_sandwiched_csv_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "solve"]) == 0
    entries, status = _manifest(out)
    assert status == "status: ok"
    data = (out / "solution.csv").read_bytes()
    assert entries["solution.csv"] == hashlib.sha256(data).hexdigest()
    with (out / "solution.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["u0"]) <= float(r["u1"]) <= float(r["u_inf"]) for r in rows)


def test_figures_are_byte_stable_and_reduce_without_income(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "--svg", "figures", "--a", "0"]) == 0
    assert main(["--out", str(b), "--svg", "figures", "--a", "0"]) == 0
    ea, _ = _manifest(a)
    eb, _ = _manifest(b)
    assert ea == eb
    assert {"fig1a_value.csv", "fig1b_vs_a.csv", "fig1b_vs_eta.csv", "fig2a_consumption.csv",
            "fig2b_investment.csv", "fig1a_value.svg"} <= set(ea)
    with (a / "fig1a_value.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["u1"] == r["u0"] == r["u_inf"] for r in rows)
    with (a / "fig2a_consumption.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(abs(float(r["c1"]) - float(r["c0"])) <= 1e-12 for r in rows)


def test_sweep_subcommand(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[sweep]\na_values = [0.1, 0.2]\neta_values = [0.1, 0.2]\n")
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "sweep"]) == 0
    with (out / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and rows[0]["a"] == "0.1"


def test_simulate_subcommand(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "--seed", "3", "simulate", "--paths", "200", "--dt", "0.05"]) == 0
    with (out / "ensemble_summary.csv").open() as fh:
        rows = {r["quantity"]: r["value"] for r in csv.DictReader(fh)}
    assert rows["seed"] == "3" and rows["n_paths"] == "200"
    assert (out / "deflated_wealth.csv").exists()


def test_simulate_rejects_truncated_horizon(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["--out", str(out), "simulate", "--paths", "200", "--dt", "0.05", "--tmax", "2"]) == 1
    assert "truncates too early" in capsys.readouterr().err
    assert _manifest(out)[1].startswith("status: failed")


def test_verify_exit_status_follows_hard_checks(tmp_path):
    out = tmp_path / "o"
    status = main(["--out", str(out), "verify", "--paths", "400", "--dt", "0.05"])
    text = (out / "report.txt").read_text()
    failures = int(text.strip().splitlines()[-2].split("=")[1])
    assert status == (1 if failures else 0)
    _, manifest_status = _manifest(out)
    assert manifest_status.startswith("status: failed") == bool(failures)


def test_config_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[params]\np = 1.5\n")
    assert main(["--config", str(bad), "solve"]) == 2
    assert "p must lie" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["solve", "--a", "0,2"])


def test_solver_failure_keeps_manifest(tmp_path):
    out = tmp_path / "o"
    cfg = tmp_path / "c.toml"
    cfg.write_text("[params]\nlam = 0.0\ndelta = 0.6\n")
    assert main(["--config", str(cfg), "--out", str(out), "solve"]) == 1
    _, status = _manifest(out)
    assert status.startswith("status: failed: solve: DegenerateMarket")
