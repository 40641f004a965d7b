import json
import math

import pytest

from nsinflation.cli import build_parser, main, run_experiment
from nsinflation.config import ExperimentConfig

SMALL_INFLATION = {
    "N_list": [3, 4],
    "grid_policy": {"box_offset": 0},
    "max_iter": 6,
}


def write_cfg(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def test_parser_has_subcommands_and_flags():
    parser = build_parser()
    args = parser.parse_args(["inflation", "--config", "c.json", "--out", "o", "--seed", "3", "--threads", "2"])
    assert (args.command, args.seed, args.threads) == ("inflation", 3, 2)
    for name in ("checks", "lemmas", "perturb"):
        assert parser.parse_args([name]).command == name
    with pytest.raises(SystemExit):
        parser.parse_args(["unknown"])


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["inflation", "--config", str(write_cfg(tmp_path, {"N_list": [2]}))]) == 2
    assert "N_list" in capsys.readouterr().err
    assert main(["inflation", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["checks", "--threads", "0"]) == 2


def test_checks_subcommand(tmp_path, capsys):
    assert main(["checks", "--out", str(tmp_path / "c")]) == 0
    assert "verdict: all passed" in capsys.readouterr().out
    lines = (tmp_path / "c" / "checks.csv").read_text().splitlines()
    assert lines[0] == "check,value,tolerance,relation,passed"
    assert all(line.endswith(",1") for line in lines[1:])


def test_inflation_run_writes_artifacts_and_is_deterministic(tmp_path):
    cfg_path = write_cfg(tmp_path, {**SMALL_INFLATION, "delta_sweep": [0.05, 0.1]})
    assert main(["inflation", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert main(["inflation", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("report.csv", "decomposition.csv", "norm_vs_N.svg", "norm_vs_t.svg", "delta_scaling.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    rows = (a / "report.csv").read_text().splitlines()[1:]
    main_rows = [r for r in rows if r.startswith("inflation-p2-delta0.1,")]
    assert len(main_rows) == 2 * 8
    assert json.loads((a / "timings.json").read_text())
    assert "inflation signature" in (a / "summary.txt").read_text()


def test_inflation_report_force_decreasing(tmp_path):
    cfg = ExperimentConfig(**SMALL_INFLATION)
    result = run_experiment(cfg, out_dir=tmp_path)
    col = result.report.column("force_norm")
    assert col[1][1] < col[0][1]
    assert col[0][1] / col[1][1] == pytest.approx(math.sqrt(4 / 3), rel=1e-5)  # grids differ between N


def test_diverged_sweep_is_flagged_with_exit_zero(tmp_path):
    cfg = ExperimentConfig(N_list=(3,), grid_policy={"box_offset": 0}, max_iter=6, delta_sweep=(20.0,))
    result = run_experiment(cfg, out_dir=tmp_path)
    assert result.exit_code == 0
    flagged = [r for r in result.report.rows if "sweep" in r.experiment_id]
    assert flagged and all("diverged" in r.flag for r in flagged)


def test_diverged_main_run_fails(tmp_path):
    cfg = ExperimentConfig(N_list=(3,), delta=20.0, grid_policy={"box_offset": 0}, max_iter=6)
    result = run_experiment(cfg, out_dir=tmp_path)
    assert result.exit_code == 1
    assert "diverged" in result.summary


def test_perturb_and_lemmas_subcommands(tmp_path):
    assert main(["perturb", "--out", str(tmp_path / "p"), "--seed", "4"]) == 0
    assert (tmp_path / "p" / "perturbation.csv").read_text().startswith("sample,U_norm")
    cfg = write_cfg(tmp_path, {"N_list": [3]})
    assert main(["lemmas", "--config", str(cfg), "--out", str(tmp_path / "l")]) == 0
    text = (tmp_path / "l" / "constants.csv").read_text()
    assert "bilinear-duhamel" in text and "max-regularity" in text


def test_failed_check_gives_exit_one(tmp_path, monkeypatch):
    import nsinflation.cli as cli
    from nsinflation.checks import CheckResult

    monkeypatch.setattr(cli, "run_identity_checks", lambda *a, **k: [CheckResult("broken", 1.0, 0.0)])
    result = run_experiment(ExperimentConfig(experiment="identity-checks"), out_dir=tmp_path)
    assert result.exit_code == 1
    assert "FAIL broken" in result.summary

