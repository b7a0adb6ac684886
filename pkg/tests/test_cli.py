import json
from pathlib import Path

import pytest

from harness.cli import EXIT_ACCEPTANCE, EXIT_OK, EXIT_VALIDATION, build_parser, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.delenv("SEED", raising=False)
    monkeypatch.delenv("HAWKES_OUT_DIR", raising=False)
    # keep load_dotenv away from a developer's .env
    monkeypatch.chdir(tmp_path)


def test_unstable_model_exits_with_validation_error(tmp_path, capsys):
    code = main(["constants", "--config", str(CONFIGS / "unstable.conf"), "--out", str(tmp_path)])
    assert code == EXIT_VALIDATION
    assert "stability violated" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1


@pytest.mark.parametrize("flag", [["--seed", "-3"], ["--replicas", "0"], ["--workers", "x"]])
def test_bad_flag_values(flag):
    with pytest.raises(SystemExit) as info:
        main(["constants", *flag])
    assert info.value.code == 1


def test_missing_config_file(tmp_path):
    assert main(["constants", "--config", str(tmp_path / "absent.conf")]) == EXIT_VALIDATION


def test_too_few_replicas_is_a_validation_error(tmp_path):
    code = main(["converge-marginal", "--config", str(CONFIGS / "poisson_control.conf"),
                 "--out", str(tmp_path), "--replicas", "10"])
    assert code == EXIT_VALIDATION


def test_simulate_is_reproducible(tmp_path):
    args = ["simulate", "--config", str(CONFIGS / "linear_hawkes.conf"), "--seed", "42", "--horizon", "25"]
    assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
    first = (tmp_path / "a" / "simulate" / "path_0000.csv").read_bytes()
    second = (tmp_path / "b" / "simulate" / "path_0000.csv").read_bytes()
    assert first == second
    assert first.startswith(b"tau,theta,mark,accepted")

    manifest = json.loads((tmp_path / "a" / "simulate" / "manifest.json").read_text())
    assert manifest["seed"] == 42
    assert manifest["subcommand"] == "simulate"
    assert "path_0000.csv" in manifest["outputs"]
    assert len(manifest["config_sha256"]) == 64


def test_seed_changes_the_path(tmp_path):
    base = ["simulate", "--config", str(CONFIGS / "linear_hawkes.conf"), "--horizon", "25"]
    main([*base, "--seed", "1", "--out", str(tmp_path / "a")])
    main([*base, "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "simulate" / "path_0000.csv").read_bytes() != \
        (tmp_path / "b" / "simulate" / "path_0000.csv").read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HAWKES_OUT_DIR", str(tmp_path / "env_out"))
    assert main(["constants", "--config", str(CONFIGS / "linear_hawkes.conf")]) == EXIT_OK
    assert (tmp_path / "env_out" / "constants" / "constants.csv").is_file()


def test_marginal_convergence_on_poisson_control(tmp_path, capsys):
    conf = tmp_path / "small.conf"
    conf.write_text((CONFIGS / "poisson_control.conf").read_text()
                    + "\nexperiment.t_grid = 10,20\nexperiment.bootstrap = 10\n")
    code = main(["converge-marginal", "--config", str(conf), "--out", str(tmp_path / "out"), "--replicas", "100"])
    assert code == EXIT_OK
    table = tmp_path / "out" / "converge-marginal" / "convergence.csv"
    assert table.read_text().splitlines()[0].startswith("T,n,marginal_w1")
    assert "control_gaussian_marginal" in capsys.readouterr().out


def test_failed_check_exits_with_acceptance_failure(tmp_path, monkeypatch):
    from harness import experiments
    from harness.schemas import ControlRow

    def failing(cfg):
        report = experiments.Report("constants")
        report.checks.append(ControlRow(cell="nonlinearity_lipschitz_probe", value=1.0, tolerance=0.0, passed=False))
        return report

    monkeypatch.setattr(experiments, "run_constants", failing)
    code = main(["constants", "--config", str(CONFIGS / "linear_hawkes.conf"), "--out", str(tmp_path)])
    assert code == EXIT_ACCEPTANCE
    assert (tmp_path / "constants" / "manifest.json").is_file()


def test_parser_lists_every_subcommand():
    help_text = build_parser().format_help()
    for name in ("constants", "simulate", "sigma2", "converge-marginal", "converge-functional",
                 "lemmas", "malliavin", "discretize-error"):
        assert name in help_text


SMALL = """
kernel.family = exponential
kernel.a = 0.5
kernel.beta = 1.0
nonlinearity.mu = 1.0
experiment.t_grid = 5,10
experiment.n_grid = 2,4
experiment.replicas = 100
experiment.bootstrap = 10
experiment.seed = 11
experiment.sigma2_replicas = 20
experiment.sigma2_horizon = 300
experiment.sigma2_tol = 1.0
malliavin.replicas = 100
malliavin.pairs = 5
malliavin.lags = 0.5,1
malliavin.progeny_horizon = 30
"""


@pytest.mark.parametrize("subcommand", ["constants", "simulate", "sigma2", "converge-marginal", "converge-functional",
                                        "lemmas", "malliavin", "discretize-error"])
def test_every_subcommand_writes_identical_tables(tmp_path, subcommand):
    conf = tmp_path / "small.conf"
    conf.write_text(SMALL)
    extra = ["--replicas", "1000"] if subcommand == "converge-functional" else []
    codes = [main([subcommand, "--config", str(conf), "--out", str(tmp_path / run), *extra]) for run in ("a", "b")]
    assert codes[0] == codes[1] and codes[0] in (EXIT_OK, EXIT_ACCEPTANCE)
    first = sorted((tmp_path / "a" / subcommand).glob("*.csv"))
    assert first
    for table in first:
        assert table.read_bytes() == (tmp_path / "b" / subcommand / table.name).read_bytes(), table.name
