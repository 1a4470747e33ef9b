import subprocess
import sys

import pytest

from conftest import SMALL_RUN
from flasc.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main

BASE = "".join(f"{k.replace('_', '.', 1) if k.startswith(('task_', 'partition_', 'lora_')) else k}={v}\n" for k, v in SMALL_RUN.items())


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# quick run\nstrategy=flasc\nseed=1\n" + BASE)
    return p


def test_run_writes_metrics(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config_file), "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in out.iterdir())
    assert "flasc-seed1.csv" in files and "flasc-seed1.params.csv" in files
    assert "accuracy=" in capsys.readouterr().out


def test_run_set_override(config_file, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(config_file), "--out", str(out), "--set", "seed=9"]) == EXIT_OK
    assert (out / "flasc-seed9.csv").exists()


def test_env_output_dir(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("FLASC_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(config_file)]) == EXIT_OK
    assert (tmp_path / "env" / "flasc-seed1.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("density.up=1.5\n")
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "density.up" in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_numeric_error_exit_code(tmp_path, capsys):
    p = tmp_path / "blowup.cfg"
    p.write_text(BASE + "lora.scaling=1e300\nlocal.lr=1e6\nrounds=2\n")
    assert main(["run", str(p), "--out", str(tmp_path)]) == EXIT_NUMERIC
    assert "numeric error" in capsys.readouterr().err


def test_sweep_and_plotdata(tmp_path, capsys):
    grid = tmp_path / "grid.txt"
    grid.write_text(BASE + "rounds=2\ngrid.strategy=dense,flasc\nseeds=0,1\n")
    assert main(["sweep", str(grid), "--out", str(tmp_path)]) == EXIT_OK
    merged = tmp_path / "grid.csv"
    assert merged.exists()
    capsys.readouterr()
    assert main(["plotdata", str(merged), "--x", "total_params_cum", "--y", "accuracy", "--bands"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "x,series,min,mean,max,n"
    assert {line.split(",")[1] for line in out[1:]} == {"strategy=dense", "strategy=flasc"}


def test_plotdata_unknown_axis(tmp_path, config_file):
    main(["run", str(config_file), "--out", str(tmp_path)])
    assert main(["plotdata", str(tmp_path / "flasc-seed1.csv"), "--x", "epochs"]) == EXIT_CONFIG


def test_defaults_lists_every_key(capsys):
    assert main(["defaults"]) == EXIT_OK
    assert "density.down=0.25" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "flasc", "defaults"], capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("strategy=")
