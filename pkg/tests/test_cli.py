import json
import logging
import math

import pytest

from wavescope.cli import resolve_level_param, run


def write_config(tmp_path, **config):
    filepath = tmp_path / "config.json"
    filepath.write_text(json.dumps(dict(schema_version=1, **config)))
    return str(filepath)


def test_without_command_prints_help(capsys):
    assert run([]) == 0
    assert "Welcome to wavescope" in capsys.readouterr().out


def test_frames_defaults(capsys):
    assert run(["frames"]) == 0
    assert "residual" in capsys.readouterr().out


def test_run_uses_the_configured_command(tmp_path, capsys):
    config = write_config(tmp_path, command="frames", frame={"kind": "three", "r0": 0.0, "s": 0.6})
    assert run(["run", "-c", config]) == 0
    assert "rank: 3" in capsys.readouterr().out


def test_invalid_config_exits_with_2(tmp_path):
    config = write_config(tmp_path, command="simulate", grid={"cells": 1})
    out = tmp_path / "out"
    assert run(["simulate", "-c", config, "-o", str(out)]) == 2
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is False
    assert report["failure"]["error"] == "ConfigError"
    assert [error["pointer"] for error in report["config_errors"]] == ["/grid/cells"]


def test_command_mismatch_is_a_config_error(tmp_path):
    config = write_config(tmp_path, command="frames")
    assert run(["coeffs", "-c", config]) == 2


def test_negative_refinement_is_a_config_error():
    assert run(["frames", "--grid-refine", "-1"]) == 2


def test_numerical_failure_exits_with_1(tmp_path, capsys):
    config = write_config(tmp_path, command="frames", frame={"kind": "i3", "phi": 2.0, "theta": math.pi - 2.0})
    assert run(["frames", "-c", config]) == 1
    assert "SingularConstructionError" in capsys.readouterr().out


def test_failed_assertion_exits_with_1(tmp_path, capsys):
    config = write_config(tmp_path, command="coeffs", assertions=[{"metric": "I3", "max": 1.0}])
    assert run(["coeffs", "-c", config]) == 1
    assert "Assertion failed: I3" in capsys.readouterr().out


def test_missing_config_file_is_rejected(tmp_path):
    with pytest.raises(SystemExit):
        run(["frames", "-c", str(tmp_path / "missing.json")])


def test_resolve_level_param():
    assert resolve_level_param("i") == logging.INFO
    assert resolve_level_param("DEBUG") == logging.DEBUG
    assert resolve_level_param(logging.ERROR) == logging.ERROR
    with pytest.raises(KeyError):
        resolve_level_param("loud")
