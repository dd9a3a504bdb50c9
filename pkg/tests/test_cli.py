import csv
import subprocess
import sys

import pytest

from steve.cli import build_parser, run

SMALL = ["--set", "synth.grid_shape=2,3", "--set", "synth.days=8", "--set", "model.hidden_dim=4",
         "--set", "eval.scenarios=workday,clusters,weather", "--set", "eval.k_max=3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--out", str(out), *SMALL]) == 0
    assert run(["train", "--out", str(out), "--set", "train.max_epochs=2", *SMALL]) == 0
    return out


def test_train_artifacts(trained):
    run_dir = trained / "run"
    for name in ("config.snapshot", "checkpoint.best", "metrics.csv", "results.csv", "alpha_log.csv",
                 "clusters.csv"):
        assert (run_dir / name).is_file(), name
    with open(run_dir / "results.csv") as fh:
        scenarios = [r["scenario"] for r in csv.DictReader(fh)]
    assert scenarios[0] == "all"
    assert any(s.startswith("cluster:") for s in scenarios)
    assert any(s.startswith("context:weather=") for s in scenarios)


def test_eval_reproduces_train(trained):
    before = (trained / "run" / "results.csv").read_text()
    assert run(["eval", "--out", str(trained), *SMALL]) == 0
    assert (trained / "run" / "results.csv").read_text() == before


def test_plot(trained):
    assert run(["plot", "--out", str(trained)]) == 0
    for name in ("loss_curves.png", "scenarios.png", "priors.png"):
        assert (trained / "plots" / name).stat().st_size > 0


def test_ablate(trained):
    code = run(["ablate", "--out", str(trained), "--seed", "0", "--set", "train.max_epochs=1",
                "--set", "eval.variants=full,wo_idp", *SMALL])
    assert code == 0
    lines = (trained / "ablation" / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,scenario,MAE,MAPE,reference"
    assert len(lines) > 2


def test_verify_dca(capsys, tmp_path):
    assert run(["verify-dca", "--n", "20", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("max_dev=")
    assert float(out.split("=")[1]) <= 1e-12


def test_verify_dca_file(tmp_path, capsys):
    from steve.dca import random_scm, save_scm
    save_scm(random_scm(0, 4, 2, 3), tmp_path / "m.json", [0, 3])
    assert run(["verify-dca", "--scm", str(tmp_path / "m.json")]) == 0


def test_validation_errors_exit_1(tmp_path, capsys):
    assert run(["train", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "ERROR:config:" in capsys.readouterr().err
    assert run(["train", "--out", str(tmp_path)]) == 1
    assert run(["train", "--bogus"]) == 1
    assert run(["gen-data", "--out", str(tmp_path), "--set", "synth.shift=3"]) == 1
    assert run(["eval", "--out", str(tmp_path), "--data", str(tmp_path / "nothing")]) == 1


def test_every_subcommand_has_help():
    parser = build_parser()
    for cmd in ("gen-data", "train", "eval", "ablate", "verify-dca", "plot"):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "steve", "verify-dca", "--n", "3"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("max_dev=")
