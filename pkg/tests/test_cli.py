# tests/test_cli.py

import logging

import numpy as np
import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from app.main import cli
from app.services.allocation_service import oracle_grid_search
from app.services.report_service import read_ledger_msgpack


@pytest.fixture
def runner():
    yield CliRunner()
    # handlers bound to the runner's captured stderr outlive the invocation
    for name in ("", "audit"):
        logging.getLogger(name).handlers.clear()


@pytest.fixture
def config_file(tmp_path, small_config_dict):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(small_config_dict))
    return path


def _invoke(runner, *args):
    return runner.invoke(cli, list(map(str, args)))


def test_allocate_defaults(runner, tmp_path):
    result = _invoke(runner, "allocate", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "allocate.csv")
    assert len(frame) == 10
    assert set(frame["bits"]) == {6, 7, 8}
    assert (frame["status"] == "OK").all()
    assert (frame["theta"] + frame["pi"] <= 1.0 + 1e-12).all()


def test_allocate_with_oracle(runner, tmp_path, config_file, small_config):
    result = _invoke(
        runner, "allocate", "--config", config_file, "--out", tmp_path, "--oracle"
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "allocate.csv")
    np.testing.assert_allclose(frame["E_total"], frame["E_oracle"], rtol=1e-3)
    _, energy = oracle_grid_search(
        small_config.profile(0),
        small_config.channel_for(0),
        int(frame.loc[0, "payload_bits"]),
    )
    assert frame.loc[0, "E_oracle"] == pytest.approx(energy, rel=1e-12)


def test_allocate_flags_infeasible_device(runner, tmp_path, small_config_dict):
    small_config_dict["devices"][2]["T_max_s"] = 1.0
    path = tmp_path / "tight.yaml"
    path.write_text(yaml.safe_dump(small_config_dict))
    result = _invoke(runner, "allocate", "--config", path, "--out", tmp_path)
    assert result.exit_code == 2
    frame = pd.read_csv(tmp_path / "allocate.csv")
    assert list(frame["status"]) == ["OK", "OK", "INFEASIBLE"]


def test_config_errors_exit_with_three(runner, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("training:\n  rounds: -1\n")
    result = _invoke(runner, "allocate", "--config", path, "--out", tmp_path)
    assert result.exit_code == 3
    result = _invoke(runner, "train", "--config", tmp_path / "missing.yaml")
    assert result.exit_code == 3


def test_sweep_t_max(runner, tmp_path, config_file):
    result = _invoke(runner, "sweep", "--config", config_file, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "sweep_t_max.csv")
    assert list(frame["value"]) == pytest.approx(np.linspace(13.0, 18.0, 6))
    assert np.all(np.diff(frame["E_total_fleet"]) <= 0)
    assert np.all(frame["E_total_fleet"] <= frame["E_even_split_fleet"] * (1 + 1e-9))


def test_sweep_distance(runner, tmp_path, config_file):
    args = ["--param", "distance", "--start", 45, "--stop", 90, "--steps", 10]
    args += ["--config", config_file, "--out", tmp_path]
    result = _invoke(runner, "sweep", *args)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "sweep_distance.csv")
    assert len(frame) == 10
    assert np.all(np.diff(frame["E_total_fleet"]) >= 0)


def test_nu_trace_matches_allocate(runner, tmp_path):
    result = _invoke(runner, "nu-trace", "--device", 2, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    trace = pd.read_csv(tmp_path / "nu_trace_device2.csv")
    assert 0 < len(trace) <= 30
    assert list(trace["iteration"]) == list(range(1, len(trace) + 1))
    _invoke(runner, "allocate", "--out", tmp_path)
    frame = pd.read_csv(tmp_path / "allocate.csv")
    assert trace["E_total"].iloc[-1] == pytest.approx(
        frame.loc[2, "E_total"], rel=1e-5
    )


def test_nu_trace_rejects_unknown_device(runner, tmp_path, config_file):
    result = _invoke(runner, "nu-trace", "--config", config_file, "--device", 5)
    assert result.exit_code == 2
    assert "--device" in result.output


def test_quantbench(runner, tmp_path, config_file):
    result = _invoke(runner, "quantbench", "--config", config_file, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "quantbench.csv")
    assert len(frame) == 8
    assert set(frame["distribution"]) == {"gaussian", "uniform"}
    assert (frame["z_score"].abs() <= 4.0).all()


def test_train_compare(runner, tmp_path, config_file):
    result = _invoke(
        runner,
        "train",
        "--config",
        config_file,
        "--out",
        tmp_path,
        "--compare",
        "none,fixed8,on_demand",
        "--dump-config",
    )
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(tmp_path / "train_summary.csv")
    assert list(summary["mode"]) == ["none", "fixed8", "on_demand"]
    bits = dict(zip(summary["mode"], summary["total_bits"]))
    assert bits["on_demand"] <= bits["fixed8"] <= bits["none"]
    rounds = pd.read_csv(tmp_path / "train_on_demand_rounds.csv")
    assert list(rounds["round"]) == [1, 2, 3]
    devices = pd.read_csv(tmp_path / "train_fixed8_devices.csv")
    assert set(devices["bit_width"]) == {8}
    ledger = read_ledger_msgpack(tmp_path / "train_on_demand_ledger.msgpack")
    assert ledger["mode"] == "on_demand"
    assert len(ledger["rounds"]) == 3
    dumped = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert dumped["seed"] == 7


def test_train_rejects_unknown_mode(runner, config_file):
    result = _invoke(
        runner, "train", "--config", config_file, "--compare", "fixed99"
    )
    assert result.exit_code == 2
    assert "--compare" in result.output


def test_reruns_are_byte_identical(runner, tmp_path, config_file):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        for command in ("train", "allocate"):
            result = _invoke(runner, command, "--config", config_file, "--out", out)
            assert result.exit_code == 0, result.output
    for name in (
        "train_on_demand_rounds.csv",
        "train_on_demand_devices.csv",
        "train_summary.csv",
        "allocate.csv",
    ):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_seed_override_changes_training(runner, tmp_path, config_file):
    _invoke(runner, "train", "--config", config_file, "--out", tmp_path / "a")
    _invoke(
        runner, "train", "--config", config_file, "--out", tmp_path / "b", "--seed", 8
    )
    a = (tmp_path / "a" / "train_on_demand_devices.csv").read_bytes()
    b = (tmp_path / "b" / "train_on_demand_devices.csv").read_bytes()
    assert a != b
