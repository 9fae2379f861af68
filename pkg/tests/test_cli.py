import csv
import json
import math

import pytest

from psem.cli import main
from psem.demo import implied_subcohort_fraction, synthetic_trial
from psem.records import write_csv

from conftest import make_records


@pytest.fixture
def worked_csv(tmp_path, worked_blocks):
    path = tmp_path / "worked.csv"
    write_csv(make_records(worked_blocks), path)
    return path


@pytest.fixture
def demo_csv(tmp_path):
    path = tmp_path / "demo.csv"
    write_csv(synthetic_trial(), path)
    return path


def write_analysis_config(tmp_path, data_path, out_dir, scenario="B",
                          extra_sensitivity="", weights=""):
    cfg = tmp_path / "analysis.ini"
    cfg.write_text(f"""
[data]
path = {data_path}

[scenario]
name = {scenario}

{weights}

[sensitivity]
{extra_sensitivity}
grid_points = 21
alpha = 0.05
contrast = additive

[output]
dir = {out_dir}
""", encoding="utf-8")
    return cfg


def read_intervals(out_dir):
    with open(out_dir / "intervals.csv", newline="", encoding="utf-8") as fh:
        return {(r["target"], r["gamma"]): r for r in csv.DictReader(fh)}


def test_analyze_degenerate_gamma_row(tmp_path, worked_csv):
    out = tmp_path / "out"
    cfg = write_analysis_config(tmp_path, worked_csv, out,
                                extra_sensitivity="beta0 = 0")
    assert main(["analyze", "--config", str(cfg)]) == 0
    rows = read_intervals(out)
    mu = rows[("mu", "custom")]
    assert float(mu["ign_lower"]) == pytest.approx(-0.4, abs=1e-12)
    assert float(mu["ign_upper"]) == pytest.approx(-0.4, abs=1e-12)
    assert float(mu["point"]) == pytest.approx(-0.4, abs=1e-12)


def test_analyze_c_harm_matches_b_rows(tmp_path, worked_csv):
    out_b = tmp_path / "outb"
    cfg_b = write_analysis_config(tmp_path, worked_csv, out_b, scenario="B",
                                  extra_sensitivity="beta0 = -0.5, 0.5")
    main(["analyze", "--config", str(cfg_b)])
    out_c = tmp_path / "outc"
    cfg_c = write_analysis_config(
        tmp_path, worked_csv, out_c, scenario="C_harm",
        extra_sensitivity="beta0 = -0.5, 0.5\nbeta1_marginal = 0")
    cfg_c.rename(tmp_path / "c.ini")
    main(["analyze", "--config", str(tmp_path / "c.ini")])
    rows_b, rows_c = read_intervals(out_b), read_intervals(out_c)
    for target in ("cep_00", "cep_10", "mu"):
        for col in ("ign_lower", "ign_upper", "eui_lower", "eui_upper"):
            assert float(rows_c[(target, "custom")][col]) == pytest.approx(
                float(rows_b[(target, "custom")][col]), abs=1e-8)


def test_analyze_demo_ve_band(tmp_path, demo_csv):
    out = tmp_path / "out"
    nu = implied_subcohort_fraction()
    cfg = tmp_path / "analysis.ini"
    cfg.write_text(f"""
[data]
path = {demo_csv}

[scenario]
name = B

[weights]
model = design
nu = {nu}

[sensitivity]
scales = 0, 1
contrast = ve

[output]
dir = {out}
""", encoding="utf-8")
    assert main(["analyze", "--config", str(cfg), "--seed", "1"]) == 0
    results = json.loads((out / "results.json").read_text())
    ve1 = results["no_selection_bias_fit"]["cep"]["10"]
    ve0 = results["no_selection_bias_fit"]["cep"]["00"]
    assert 0.70 <= ve1 <= 0.86
    assert ve0 < 0
    rows = read_intervals(out)
    assert ("cep_10", "scale=1") in rows


def test_analyze_rerun_byte_identical(tmp_path, worked_csv):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    for out in (out1, out2):
        cfg = write_analysis_config(tmp_path, worked_csv, out,
                                    extra_sensitivity="beta0 = -1, 1")
        assert main(["analyze", "--config", str(cfg), "--seed", "7"]) == 0
    assert (out1 / "results.json").read_bytes() == (out2 / "results.json").read_bytes()
    assert (out1 / "intervals.csv").read_bytes() == (out2 / "intervals.csv").read_bytes()


def test_analyze_config_error_exit_code(tmp_path, worked_csv):
    cfg = write_analysis_config(tmp_path, worked_csv, tmp_path / "o",
                                extra_sensitivity="beta9 = 0, 1")
    assert main(["analyze", "--config", str(cfg)]) == 2


def test_analyze_missing_config():
    assert main(["analyze", "--config", "/nonexistent.ini"]) == 2


def test_analyze_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,z,y_tau,y,r,s_star\nx,3,0,0,1,1\n", encoding="utf-8")
    cfg = write_analysis_config(tmp_path, bad, tmp_path / "o",
                                extra_sensitivity="beta0 = 0")
    assert main(["analyze", "--config", str(cfg)]) == 3


def test_analyze_estimation_error_exit_code(tmp_path, worked_csv):
    # scenario C_protect needs the early ordering; the worked fixture has
    # no early events at all, so estimation fails with exit code 4
    cfg = write_analysis_config(tmp_path, worked_csv, tmp_path / "o",
                                scenario="C_protect",
                                extra_sensitivity="beta0 = 0")
    assert main(["analyze", "--config", str(cfg)]) == 4


def test_diagnose_text_and_json(tmp_path, demo_csv, capsys):
    out = tmp_path / "diag"
    assert main(["diagnose", "--input", str(demo_csv), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "early events 14/1251" in text
    assert "A4'' early-rate ordering holds: False" in text
    report = json.loads((out / "diagnostics.json").read_text())
    assert 0.45 <= report["report"]["fisher_p"] <= 0.65
    assert report["report"]["recommended"][0] == "B"


def test_diagnose_bad_file_exit_code(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    assert main(["diagnose", "--input", str(empty)]) == 3


def test_simulate_and_determinism(tmp_path):
    cfg = tmp_path / "study.ini"
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    cfg.write_text(f"""
[study]
design = B
n = 400
nu = 1
delta = 0
gamma_scales = 0
replicates = 40
seed = 11

[output]
dir = {out1}
""", encoding="utf-8")
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "study.csv").read_bytes() == (out2 / "study.csv").read_bytes()
    with open(out1 / "study.csv", newline="", encoding="utf-8") as fh:
        (row,) = list(csv.DictReader(fh))
    rate = float(row["power"])
    assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 40) + 1e-9
    data = json.loads((out1 / "study.json").read_text())
    assert data["config"]["seed"] == 11


def test_simulate_smoke_speed(tmp_path):
    # single-cell smoke config finishes quickly with a sane rejection rate
    import time
    cfg = tmp_path / "study.ini"
    cfg.write_text(f"""
[study]
design = B
n = 400
delta = 0
replicates = 50
seed = 21

[output]
dir = {tmp_path / 'out'}
""", encoding="utf-8")
    start = time.time()
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert time.time() - start < 10.0


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip() == "0.1.0"


def test_exit_code_mapping_covers_sensitivity_errors():
    from psem.cli import _exit_code
    from psem.errors import (ConfigError, DataError, EstimationError,
                             IncompatibleSensitivityError, OrderingError,
                             PositivityError)
    assert _exit_code(ConfigError("x")) == 2
    assert _exit_code(DataError("x")) == 3
    assert _exit_code(PositivityError("x")) == 3
    assert _exit_code(EstimationError("x")) == 4
    assert _exit_code(OrderingError("x")) == 4
    assert _exit_code(IncompatibleSensitivityError("x")) == 5


def test_analyze_scenario_c_protect_on_design_c_data(tmp_path):
    from psem.simulate import GeneratorConfig, gen_scenario_c
    _, obs = gen_scenario_c(GeneratorConfig(design="C", n=4000, a=0.2, b=0.5,
                                            seed=13))
    data = tmp_path / "c.csv"
    write_csv(obs, data)
    out = tmp_path / "out"
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"""
[data]
path = {data}

[scenario]
name = C_protect

[sensitivity]
scales = 0, 0.5
grid_points = 2

[output]
dir = {out}
""", encoding="utf-8")
    assert main(["analyze", "--config", str(cfg)]) == 0
    rows = read_intervals(out)
    assert ("mu", "scale=0.5") in rows
    mu = float(rows[("mu", "scale=0")]["point"])
    assert abs(mu - 0.3) < 0.15
