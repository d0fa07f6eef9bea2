import json

import pytest

from exterior_nls import cli

SMALL = """
d = 2
p = 3.0
obstacle.kind = ball
obstacle.radius = 1.0
grid.R_out = 5.0
grid.h = 0.125
grid.annulus_width = 1.0
time.dt = 0.005
time.t_end = 0.05
time.record_every = 2
initial_data.kind = gaussian-bump
initial_data.amplitude = 2.0
initial_data.center = 1.6, 1.2
initial_data.width = 0.4
initial_data.symmetry = full
theorem = THM_SYM
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_text_and_json_round_trip():
    for name in cli.canned_names():
        cfg = cli.ExperimentConfig.load(name)
        assert cli.ExperimentConfig.from_text(cfg.to_text()) == cfg
        assert cli.ExperimentConfig.from_text(cfg.to_json()) == cfg
        assert cli.ExperimentConfig.from_text(cfg.to_text()).to_text() == cfg.to_text()


def test_nested_json_accepted():
    cfg = cli.ExperimentConfig.from_text('{"d": 3, "obstacle": {"radius": 1.0}, "initial_data": {"center": [1, 1, 1]}}')
    assert cfg.d == 3 and cfg.initial_data.center == (1.0, 1.0, 1.0)


@pytest.mark.parametrize(
    "line",
    ["grid.h = 0", "grid.h = -0.1", "time.dt = 0.003", "colour = red", "grid.h 0.1", "theorem = THM_X", "C = -1"],
)
def test_invalid_configs_rejected(line):
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_text(SMALL + line + "\n")


def test_duplicate_key_rejected():
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_text(SMALL + "p = 5.0\n")


def test_invalid_config_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL.replace("grid.h = 0.125", "grid.h = 0"))
    out = tmp_path / "out"
    assert cli.main(["simulate", str(bad), "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()
    record = json.loads(capsys.readouterr().err)
    assert record["stage"] == "config" and "grid.h" in record["message"]


def test_simulate_writes_four_files(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", str(small_cfg), "--out", str(out)]) == cli.EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == sorted(cli.OUTPUT_FILES)
    header = (out / "series.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "mass"] or header[0] == "t"
    crit_doc = json.loads((out / "criteria.json").read_text())
    assert crit_doc["theorem"] == "THM_SYM"
    assert crit_doc["C"] == pytest.approx(2.0, rel=1e-2)
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_outputs_are_deterministic(tmp_path, small_cfg):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert cli.main(["simulate", str(small_cfg), "--out", str(d)]) == cli.EXIT_OK
    for name in cli.OUTPUT_FILES:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_output_env_override(tmp_path, small_cfg, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    assert cli.main(["simulate", str(small_cfg)]) == cli.EXIT_OK
    assert (target / "verdict.json").exists()
    cfg = cli.ExperimentConfig.load(str(small_cfg))
    assert cli.output_dir(cfg, tmp_path / "x") == tmp_path / "x"


def test_groundstate_command(capsys):
    assert cli.main(["groundstate", "--d", "2", "--p", "3"]) == cli.EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["mass"] == pytest.approx(11.70, abs=0.01)
    assert doc["threshold"] is None


def test_criteria_command(small_cfg, capsys):
    assert cli.main(["criteria", str(small_cfg)]) == cli.EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["theorem"] == "THM_SYM"
    assert {h["name"] for h in doc["hypotheses"]} >= {"p_floor", "energy", "antisymmetry"}
    assert cli.main(["criteria", str(small_cfg), "--theorem", "THM_BALL"]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["theorem"] == "THM_BALL"


def test_verify_command_writes_tables(tmp_path, small_cfg, capsys):
    out = tmp_path / "v"
    assert cli.main(["verify-identities", str(small_cfg), "--out", str(out)]) == cli.EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert "virial_report.json" in names
    assert "closure_d2t_V_sym.csv" in names
    table = (out / "closure_d2t_ups2.csv").read_text().splitlines()
    assert table[0] == "t,finite_difference,formula"
    doc = json.loads(capsys.readouterr().out)
    assert doc["identities"][0]["name"] == "poho1"


def test_convergence_rows(tmp_path, small_cfg):
    cfg = cli.ExperimentConfig.load(str(small_cfg)).with_changes(grid__h=0.125, time__t_end=0.03)
    rows = cli.convergence_study(cfg, levels=2)
    hs = sorted({r["h"] for r in rows})
    assert hs == [0.0625, 0.125]
    fine = [r for r in rows if r["h"] == 0.0625]
    assert all(r["factor"] is not None for r in fine)
    text = cli.rows_to_csv(rows)
    assert text.splitlines()[0] == "identity,h,dt,rel_error,abs_error,factor,status,t_final"
    with pytest.raises(Exception):
        cli.convergence_study(cfg, levels=1)


def test_list_configs(capsys):
    assert cli.main(["list-configs"]) == cli.EXIT_OK
    names = capsys.readouterr().out.split()
    assert {"thm_ball", "thm_convex", "thm_sym", "identity_convergence"} <= set(names)


def test_missing_config_is_a_config_error(capsys):
    assert cli.main(["criteria", "no_such_config"]) == cli.EXIT_CONFIG
