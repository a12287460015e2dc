import json

import pytest

from domlab import cli
from domlab.config import load_config, parse_config_text, validate
from domlab.errors import ConfigurationError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_validate_unknown_key_suggestion():
    top, sections = parse_config_text(
        "scenario = srb-like\n[srb-like]\nepsilom = 0.1\n")
    findings = validate(top, sections)
    assert any("epsilom" in f and "eps" in f for f in findings)


def test_validate_eps_truncation_cross_check():
    top, sections = parse_config_text(
        "scenario = srb-like\n[srb-like]\neps = 0.000001\nn_trunc = 16\n")
    findings = validate(top, sections)
    assert any("truncation error bound" in f for f in findings)


def test_validate_clean_config():
    top, sections = parse_config_text(
        "scenario = lyapunov\nmap = cat\n[lyapunov]\nn = 100\n")
    assert validate(top, sections) == []


def test_every_knob_has_default():
    from domlab.config import SCENARIO_SCHEMAS
    for scenario, schema in SCENARIO_SCHEMAS.items():
        for key, (parser, default, doc) in schema.items():
            assert doc, f"{scenario}.{key} undocumented"
            assert default is not None, f"{scenario}.{key} has no default"


def test_unknown_scenario_suggested():
    top, sections = parse_config_text("scenario = lyapunof\n")
    findings = validate(top, sections)
    assert any("lyapunov" in f for f in findings)


def test_load_config_rejects_bad(tmp_path):
    path = write(tmp_path, "bad.cfg", "scenario = lyapunov\nmapp = cat\n")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_cli_lyapunov_end_to_end(tmp_path):
    cfg = write(tmp_path, "l.cfg",
                "scenario = lyapunov\nmap = cat\n[lyapunov]\nn = 500\n")
    out = tmp_path / "out"
    rc = cli.main(["lyapunov", "--config", cfg, "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    chi = report["payload"]["exponents"]
    assert abs(chi[0] - 0.9624236501192069) < 1e-6
    assert (out / "lyapunov_convergence.csv").exists()
    assert (out / "lyapunov.png").exists()
    assert (out / "timing.txt").exists()


def test_cli_figures_off(tmp_path):
    cfg = write(tmp_path, "l.cfg",
                "scenario = lyapunov\nfigures = off\n[lyapunov]\nn = 200\n")
    out = tmp_path / "out"
    assert cli.main(["lyapunov", "--config", cfg, "--out", str(out)]) == 0
    assert not (out / "lyapunov.png").exists()


def test_cli_exit_code_config_error(tmp_path):
    cfg = write(tmp_path, "bad.cfg", "scenario = lyapunov\nmap = nonsense\n")
    assert cli.main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_exit_code_numerical_error(tmp_path):
    # identity map has no resolvable splitting -> dominate scenario fails with 3
    cfg = write(tmp_path, "i.cfg",
                "scenario = dominate\nmap = identity\n[dominate]\nsample_points = 16\n")
    assert cli.main(["dominate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_cli_scenario_mismatch(tmp_path):
    cfg = write(tmp_path, "m.cfg", "scenario = lyapunov\n")
    assert cli.main(["dominate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_seed_override_changes_hash(tmp_path):
    cfg = write(tmp_path, "l.cfg", "scenario = lyapunov\n[lyapunov]\nn = 64\n")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cli.main(["lyapunov", "--config", cfg, "--out", str(out1), "--seed", "1"])
    cli.main(["lyapunov", "--config", cfg, "--out", str(out2), "--seed", "2"])
    r1 = json.loads((out1 / "report.json").read_text())
    r2 = json.loads((out2 / "report.json").read_text())
    assert r1["content_hash"] != r2["content_hash"]


def test_cli_validate_command(tmp_path, capsys):
    cfg = write(tmp_path, "v.cfg",
                "scenario = srb-like\n[srb-like]\neps = 0.000001\n")
    rc = cli.main(["validate", "--config", cfg])
    assert rc == 0
    captured = capsys.readouterr().out
    assert "truncation error bound" in captured


def test_parse_mu_grammar(cat):
    from domlab.cli import parse_mu
    from domlab.measures import EmpiricalMeasure, Lebesgue
    assert isinstance(parse_mu("lebesgue", cat), Lebesgue)
    mu = parse_mu("dirac:0.5,0.5", cat)
    assert isinstance(mu, EmpiricalMeasure) and len(mu) == 1
    mu2 = parse_mu("orbit:0.1,0.2:50", cat)
    assert len(mu2) == 50
    with pytest.raises(ConfigurationError):
        parse_mu("gaussian:0,1", cat)


def test_cli_property_suite_exits_zero(tmp_path):
    cfg = write(tmp_path, "p.cfg", "scenario = property-suite\n")
    out = tmp_path / "out"
    rc = cli.main(["property-suite", "--config", cfg, "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["payload"]["all_passed"]
    assert (out / "property_suite.csv").exists()


def test_cli_pesin_gap_scenario(tmp_path):
    cfg = write(tmp_path, "pg.cfg", """
scenario = pesin-gap
map = cat
[pesin-gap]
mu = lebesgue
samples = 300000
""")
    out = tmp_path / "out"
    assert cli.main(["pesin-gap", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert abs(report["payload"]["gap_theorem"]) <= 0.1


def test_rerun_byte_identical(tmp_path):
    cfg = write(tmp_path, "d.cfg", """
scenario = srb-like
map = cat
seed = 11
[srb-like]
mu = dirac:0,0
eps = 0.05
n_schedule = 10,30
grid = 16
""")
    outs = []
    for tag in ("r1", "r2"):
        out = tmp_path / tag
        assert cli.main(["srb-like", "--config", cfg, "--out", str(out)]) == 0
        outs.append(out)
    for name in ("report.json", "srb_like.csv", "srb_like.png"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
