import csv

import pytest
import yaml

from activeflow.cli import main

SMALL = {
    "landscape": {"length": 6, "vocab_size": 4, "n_motifs": 2, "motif_length": 3},
    "rounds": 2, "batch_size": 8, "initial_size": 16,
    "pretrain": {"pool_size": 64, "steps": 20},
    "afm": {"steps": 5, "k_snis": 16},
    "cpe": {"epochs": 10},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def test_run_and_baseline(tmp_path, config_file, capsys):
    assert main(["run", str(config_file), "-o", str(tmp_path / "afm"), "--seed", "3"]) == 0
    assert "final regret" in capsys.readouterr().out
    assert main(["baseline", str(config_file), "-o", str(tmp_path / "rand")]) == 0
    echoed = yaml.safe_load((tmp_path / "afm" / "config.yaml").read_text())
    assert echoed["seed"] == 3
    out = tmp_path / "curves.csv"
    assert main(["plotdata", str(tmp_path / "afm"), str(tmp_path / "rand"), "-o", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["run"] for r in rows] == ["afm", "afm", "rand", "rand"]
    assert set(rows[0]) == {"run", "round", "best_y", "regret"}


def test_output_dir_from_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(dict(SMALL, rounds=0, output_dir=str(tmp_path / "o"))))
    assert main(["run", str(path)]) == 0
    assert (tmp_path / "o" / "rounds.csv").exists()


def test_exit_codes(tmp_path, config_file):
    assert main(["run", str(config_file)]) == 2  # no output directory
    bad = tmp_path / "bad.yaml"
    bad.write_text("rounds: 2\nbogus: 1\n")
    assert main(["run", str(bad), "-o", str(tmp_path / "x")]) == 2
    assert main(["plotdata", str(tmp_path / "missing")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_verify_subset(capsys):
    assert main(["verify", "--only", "5", "7"]) == 0
    out = capsys.readouterr().out
    assert "2/2 checks passed" in out
