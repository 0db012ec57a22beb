import csv
import subprocess
import sys
from pathlib import Path

import pytest

from nidsgan.cli import main
from nidsgan.config import ConfigError, parse_config

SMALL = """\
seed: 1
dataset:
  kind: synthetic
  synthetic:
    n_features: 16
    class_counts: [200, 200]
    separation: 3.0
target:
  family: custom-mlp
  layer_widths: [16, 8]
  epochs: 5
attack:
  epochs: 3
  batch_size: 32
threat_model:
  mode: {mode}
{extra}
sweep:
  epsilons: [0.0, 0.2]
transfer:
  models: [decision-tree, knn]
"""


def write_config(tmp_path, mode="whitebox", extra="", name="exp.yaml"):
    path = tmp_path / name
    path.write_text(SMALL.format(mode=mode, extra=extra))
    return path


def run(cmd, cfg, out):
    return main([cmd, "--config", str(cfg), "--out", str(out)])


def read_tables(run_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted((run_dir / "tables").glob("*.csv"))}


def only_run(out: Path) -> Path:
    (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
    return run_dir


def test_attack_then_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("attack", cfg, tmp_path / "out") == 0
    assert run("report", cfg, tmp_path / "out") == 0
    run_dir = only_run(tmp_path / "out")
    assert run_dir.name.endswith("-seed1")
    tables = read_tables(run_dir)
    assert {"class_counts.csv", "target_metrics.csv", "evasion.csv", "perturbation.csv", "transfer.csv"} <= set(tables)
    with open(run_dir / "tables" / "evasion.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[-1]["class"] == "overall" and rows[0]["seed"] == "1"
    assert 0 <= float(rows[-1]["success_rate"]) <= 1
    with open(run_dir / "tables" / "transfer.csv") as fh:
        assert {r["model"] for r in csv.DictReader(fh)} == {"decision-tree", "knn"}
    assert "[evasion]" in capsys.readouterr().out
    assert (run_dir / "summary.txt").exists()
    assert (run_dir / "attack" / "Attack1" / "trace.jsonl").exists()


def test_report_without_results_fails(tmp_path):
    assert run("report", write_config(tmp_path), tmp_path / "out") == 1


def test_restricted_config_over_740_is_rejected(tmp_path, capsys):
    extra = "  adversary_pool_size: 10000\n  local_train_fraction: 0.1"
    cfg = write_config(tmp_path, "restricted-blackbox", extra)
    assert run("attack", cfg, tmp_path / "out") != 0
    err = capsys.readouterr().err
    assert "exp.yaml:18" in err and "740" in err


def test_schema_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=r"x.yaml:3: attack.epochs"):
        parse_config("dataset: {kind: synthetic}\nattack:\n  epochs: -1\n", "x.yaml")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("dataset: {kind: synthetic}\nbogus: 1\n", "x.yaml")


def test_unknown_command_exits_nonzero(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["explode", "--config", str(write_config(tmp_path))])
    assert exc.value.code != 0


def test_sweep_twice_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    assert run("sweep", cfg, tmp_path / "a") == 0
    assert run("sweep", cfg, tmp_path / "b") == 0
    a, b = read_tables(only_run(tmp_path / "a")), read_tables(only_run(tmp_path / "b"))
    assert "sweep.csv" in a and a == b


def test_seed_override_changes_run_dir(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["prepare-data", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
    assert only_run(tmp_path / "o").name.endswith("-seed7")


def test_console_script_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "nidsgan.cli", "prepare-data", "-c", str(cfg), "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
