import copy

import pytest
import yaml

from diffmpc.config import (config_from_dict, config_to_dict, default_accelerator_config,
                            default_oscillator_config, dump_config, load_config)
from diffmpc.errors import ConfigError
from diffmpc.optim import ExpDecay, StepDecay

ACC_DICT = config_to_dict(default_accelerator_config())
OSC_DICT = config_to_dict(default_oscillator_config())


@pytest.mark.parametrize("factory", [default_accelerator_config, default_oscillator_config])
def test_yaml_round_trip(tmp_path, factory):
    cfg = factory()
    path = dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(path) == cfg


def test_defaults_match_documented_values():
    acc = default_accelerator_config()
    assert (acc.mpc.horizon, acc.mpc.lambda_smooth, acc.mpc.lambda_soft, acc.mpc.y_max) == \
        (5, 1e-4, 1.0, 0.014)
    assert (acc.mpc.lr, acc.mpc.iters, acc.mpc.du_max) == (1e-2, 50, 0.1)
    assert (acc.estimation.lr, acc.estimation.iters, acc.estimation.period) == (1e-3, 50, 1)
    assert acc.estimation.mode == "expanding" and acc.steps == 11
    assert acc.theta_init == tuple(2 * t for t in acc.theta_true)
    osc = default_oscillator_config()
    assert osc.estimation.period == 5 and osc.mhe.window == 20


def _broken(base, path, value, delete=False):
    data = copy.deepcopy(base)
    node = data
    for key in path[:-1]:
        node = node[key]
    if delete:
        del node[path[-1]]
    else:
        node[path[-1]] = value
    return data


@pytest.mark.parametrize("path,value,delete,match", [
    (("mpc", "horizon"), -5, False, r"^mpc\.horizon: must be positive"),
    (("mpc", "horizon"), None, True, r"^mpc\.horizon: required key missing"),
    (("mpc", "horizon"), 2.5, False, r"^mpc\.horizon: expected an integer"),
    (("mpc", "bogus"), 1, False, r"^mpc\.bogus: unknown key"),
    (("bogus",), 1, False, r"^bogus: unknown key"),
    (("mpc", "reference", 0, "values", 1), "x", False, r"^mpc\.reference\[0\]\.values\[1\]"),
    (("mpc", "lambda_soft"), -1.0, False, r"^mpc\.lambda_soft: must be nonnegative"),
    (("mpc", "lower", 2), 10.0, False, r"^mpc\.lower\[2\]: exceeds the upper bound"),
    (("estimation", "mode"), "rolling", False, r"^estimation\.mode: expected one of"),
    (("estimation", "lr_schedule", "factor"), 1.5, False, r"^estimation\.lr_schedule\.factor"),
    (("estimation", "warm_optimizer"), "yes", False, r"^estimation\.warm_optimizer"),
    (("plant", "name"), "fluid", False, r"^plant\.name: expected one of"),
    (("theta_init",), [1.0, 1.0, 1.0, 1.0], False, r"^theta_init: .* outside"),
    (("theta_true",), [1e-3, 1e-3], False, r"^theta_true: expected 4 entries"),
    (("schema_version",), 2, False, r"^schema_version: unsupported"),
    (("steps",), 0, False, r"^steps: must be positive"),
    (("noise_sigma",), float("nan"), False, r"^noise_sigma: must be finite"),
])
def test_error_paths(path, value, delete, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(_broken(ACC_DICT, path, value, delete))


def test_oscillator_error_paths():
    with pytest.raises(ConfigError, match=r"^mhe\.window: must be positive"):
        config_from_dict(_broken(OSC_DICT, ("mhe", "window"), 0))
    with pytest.raises(ConfigError, match=r"^estimation\.size: a sliding window needs a size"):
        config_from_dict(_broken(OSC_DICT, ("estimation", "size"), None))
    with pytest.raises(ConfigError, match=r"^x_init"):
        config_from_dict(_broken(OSC_DICT, ("x_init",), None, delete=True))


def test_lattice_error_path():
    data = copy.deepcopy(ACC_DICT)
    data["plant"]["lattice"] = {"elements": [{"type": "drift"}], "segment_ends": [0]}
    with pytest.raises(ConfigError, match=r"^plant\.lattice\."):
        config_from_dict(data)


def test_schedules():
    data = _broken(ACC_DICT, ("estimation", "lr_schedule"),
                   {"kind": "step", "factor": 0.5, "after": 3})
    assert config_from_dict(data).estimation.lr_schedule == StepDecay(0.5, 3)
    assert config_from_dict(ACC_DICT).estimation.lr_schedule == ExpDecay(0.7)
    with pytest.raises(ConfigError, match=r"lr_schedule\.after: required"):
        config_from_dict(_broken(ACC_DICT, ("estimation", "lr_schedule"),
                                 {"kind": "step", "factor": 0.5}))


def test_missing_estimation_disables_it():
    data = copy.deepcopy(ACC_DICT)
    del data["estimation"]
    assert config_from_dict(data).estimation.enabled is False


def test_root_must_be_mapping():
    with pytest.raises(ConfigError, match="expected a mapping"):
        config_from_dict([1, 2])


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("mpc: [unclosed")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(bad)


def test_dump_is_plain_yaml(tmp_path):
    path = dump_config(default_oscillator_config(), tmp_path / "o.yaml")
    data = yaml.safe_load(path.read_text())
    assert data["plant"] == {"name": "oscillator", "stiffness": 1.0, "dt": 0.1}
    assert data["mpc"]["reference"][1] == {"start": 150, "values": [0.5]}
