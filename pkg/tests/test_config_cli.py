import csv
import json

import numpy as np
import pytest

from cournot_nash.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main
from cournot_nash.config import (
    BUNDLED,
    ConfigError,
    RunConfig,
    apply_overrides,
    build_problem,
    bundled_text,
    from_dict,
    load_config,
    parse_config,
    serialize,
    sweep_points,
    to_dict,
)
from cournot_nash.model import TwoPopulationSpec

SMALL = {"domain": {"dim": 1, "bounds": [0.0, 5.0], "n": 12}}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_round_trip(name):
    cfg = parse_config(bundled_text(name))
    assert parse_config(serialize(cfg)) == cfg
    assert from_dict(to_dict(cfg)) == cfg


def test_fig1_config_values():
    cfg = load_config("fig1")
    assert cfg.epsilon == 0.05
    assert (cfg.congestion.kind, cfg.congestion.exponent) == ("power", 8)
    assert (cfg.interaction.scale, cfg.interaction.exponent) == (1e-4, 2)
    assert (cfg.potential.center, cfg.potential.exponent) == (9, 4)
    assert list(cfg.domain.bounds) == [0, 16] and cfg.domain.n == 500


def test_empty_config_is_default_demo():
    assert parse_config("") == RunConfig()
    assert parse_config("{}") == RunConfig()
    p = build_problem(RunConfig())
    assert p.interaction.satisfies_norminter


def test_errors_name_key_paths():
    with pytest.raises(ConfigError) as info:
        parse_config('{"epsilon": -1, "domain": {"n": 1}, "bogus": 3}')
    text = str(info.value)
    assert "epsilon" in text and "domain.n" in text and "bogus" in text
    assert len(info.value.errors) >= 3


def test_syntax_error_has_position():
    with pytest.raises(ConfigError, match="line 2, column"):
        parse_config('{"epsilon": 0.5,\n  oops}')


def test_overrides_and_sweep_points():
    cfg = apply_overrides(RunConfig(), ["cost.p=3", "epsilon=0.25", "scheme=implicit"])
    assert (cfg.cost.p, cfg.epsilon, cfg.scheme) == (3, 0.25, "implicit")
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["cost.p"])
    sw = apply_overrides(RunConfig(), ['sweep={"parameter": "cost.p", "values": [1, 2, 4]}'])
    pts = sweep_points(sw)
    assert [v for v, _ in pts] == [1, 2, 4]
    assert [c.cost.p for _, c in pts] == [1, 2, 4]
    assert all(c.sweep is None for _, c in pts)


def test_two_population_config_builds_pair():
    spec = build_problem(load_config("fig2_2pop"))
    assert isinstance(spec, TwoPopulationSpec)
    assert spec.shared_congestion.exponent == 4


def test_solve_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    status = main(["solve", "--config", write(tmp_path, SMALL), "--out", str(out)])
    assert status == EXIT_OK
    for f in ("mu.csv", "nu.csv", "gamma_support.csv", "trace.csv", "report.json", "plot.gp"):
        assert (out / f).exists(), f
    nu = read_csv(out / "nu.csv")
    assert abs(sum(float(r["weight"]) for r in nu) - 1.0) <= 1e-9
    sup = read_csv(out / "gamma_support.csv")
    assert list(sup[0]) == ["i", "j", "x", "y", "mass"]
    assert list(read_csv(out / "trace.csv")[0]) == ["cycle", "nu_change", "marginal_residual", "seconds"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["summary"]["converged"] is True
    assert rep["config"]["domain"]["n"] == 12
    assert "version" in rep and "wall_time" in rep
    assert main(["diagnose", str(out / "report.json")]) == EXIT_OK


def test_nu_csv_round_trips_exactly(tmp_path):
    out = tmp_path / "run"
    main(["solve", "--config", write(tmp_path, SMALL), "--out", str(out)])
    weights = np.array([float(r["weight"]) for r in read_csv(out / "nu.csv")])
    rep = json.loads((out / "report.json").read_text())
    assert weights.size == 12
    assert abs(weights.sum() - 1.0) <= 1e-9
    assert rep["summary"]["gibbs_residual"] <= 1e-7


def test_nonconvergence_exit_status(tmp_path):
    data = dict(SMALL, tolerances={"max_outer": 1}, interaction={"scale": 0.3, "exponent": 2})
    out = tmp_path / "run"
    assert main(["solve", "--config", write(tmp_path, data), "--out", str(out)]) == EXIT_NOT_CONVERGED
    rep = json.loads((out / "report.json").read_text())
    assert rep["summary"]["converged"] is False
    assert main(["diagnose", str(out / "report.json")]) == EXIT_NOT_CONVERGED


def test_config_error_exit_status(tmp_path, capsys):
    assert main(["solve", "--config", write(tmp_path, {"epsilon": -1.0})]) == EXIT_ERROR
    assert "epsilon" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_sweep_creates_one_directory_per_value(tmp_path):
    data = dict(SMALL, sweep={"parameter": "cost.p", "values": [0.5, 1, 2]})
    out = tmp_path / "sw"
    assert main(["sweep", "--config", write(tmp_path, data), "--out", str(out), "--threads", "1"]) == EXIT_OK
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["00_p=0.5", "01_p=1", "02_p=2"]
    rows = read_csv(out / "sweep_summary.csv")
    assert [r["value"] for r in rows] == ["0.5", "1", "2"]
    assert all(r["status"] == "0" for r in rows)


def test_two_population_run(tmp_path):
    data = dict(SMALL, two_population={"mu": {"kind": "gaussian_mixture",
                                              "components": [{"center": 3.0, "stdev": 0.5}]}})
    out = tmp_path / "two"
    assert main(["solve", "--config", write(tmp_path, data), "--out", str(out)]) == EXIT_OK
    for f in ("nu.csv", "nu2.csv", "mu2.csv", "gamma2_support.csv"):
        assert (out / f).exists()
    rep = json.loads((out / "report.json").read_text())
    assert 0.0 <= rep["summary"]["overlap"] <= 1.0


def test_oracle_command(capsys):
    assert main(["oracle"]) == EXIT_OK
    assert capsys.readouterr().out.count("ok") == 3
