import json
import subprocess
import sys

import pytest
import yaml

import diffmpc.verify
from diffmpc.cli import main


def test_emit_and_validate(tmp_path):
    assert main(["emit-defaults", "--out", str(tmp_path / "cfg"), "-q"]) == 0
    for name in ("accelerator.yaml", "oscillator.yaml"):
        path = tmp_path / "cfg" / name
        assert path.exists()
        assert main(["validate-config", "--config", str(path), "-q"]) == 0


def test_run_accelerator(tmp_path, capsys):
    out = tmp_path / "new" / "dir"
    assert main(["run-accelerator", "--steps", "11", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["steps_completed"] == 11
    assert len((out / "run.csv").read_text().splitlines()) == 12
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "step 11/11" in captured.err


def test_same_argv_same_files(tmp_path):
    for d in ("a", "b"):
        assert main(["run-accelerator", "--steps", "2", "--seed", "3", "--out",
                     str(tmp_path / d), "-q"]) == 0
    for name in ("run.csv", "mpc_trace.csv", "est_trace.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() != b""
        if name != "manifest.json":
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_oscillator_short(tmp_path):
    assert main(["run-oscillator", "--steps", "3", "--out", str(tmp_path), "-q"]) == 0
    assert (tmp_path / "states.csv").exists()


def test_config_file_overrides(tmp_path):
    main(["emit-defaults", "--out", str(tmp_path), "-q"])
    assert main(["run-accelerator", "--config", str(tmp_path / "accelerator.yaml"),
                 "--steps", "1", "--out", str(tmp_path / "run"), "-q"]) == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["steps"] == 1


def test_wrong_plant_for_command(tmp_path):
    main(["emit-defaults", "--out", str(tmp_path), "-q"])
    assert main(["run-accelerator", "--config", str(tmp_path / "oscillator.yaml"), "-q"]) == 1


def test_bad_config_exit_code(tmp_path, capsys):
    main(["emit-defaults", "--out", str(tmp_path), "-q"])
    path = tmp_path / "accelerator.yaml"
    data = yaml.safe_load(path.read_text())
    data["mpc"]["horizon"] = -5
    path.write_text(yaml.safe_dump(data))
    assert main(["validate-config", "--config", str(path)]) == 1
    assert "mpc.horizon: must be positive" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["run-accelerator", "--bogus"], ["frobnicate"], [],
                                  ["run-accelerator", "--steps", "x"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_steps_override_must_be_positive():
    assert main(["run-accelerator", "--steps", "0", "-q"]) == 1


def test_runtime_error_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run-accelerator", "--steps", "1", "--out", str(blocker / "x"), "-q"]) == 2


def test_grad_check_passes(tmp_path):
    assert main(["grad-check", "--points", "3", "--out", str(tmp_path), "-q"]) == 0
    rows = (tmp_path / "grad_check.csv").read_text().splitlines()
    assert rows[0] == "case,index,max_rel_err"
    assert len(rows) == 1 + 4 * 3


def test_grad_check_fails_over_tolerance(monkeypatch):
    monkeypatch.setattr(diffmpc.verify, "GRAD_TOL", 0.0)
    assert main(["grad-check", "--points", "1", "-q"]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "diffmpc.cli", "emit-defaults", "--out",
                          str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout == ""
    assert "accelerator.yaml" in res.stderr
