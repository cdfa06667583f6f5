import dataclasses

import pytest

from gasl import config
from gasl.errors import DataError, FormatError, ParameterError

SAMPLE = """
# experiment
arch = lenet
seed = 3
objective.lambda_s = 0.05
objective.alpha = 10
gasl.enabled = on
gasl.sigma = 0.5
train.max_epochs = 4
prune.tau = 0.02
"""


def test_parse_sections():
    cfg = config.loads(SAMPLE)
    assert cfg.arch == "lenet" and cfg.seed == 3 and cfg.train.seed == 3
    assert cfg.objective.lambda_s == 0.05 and cfg.objective.alpha == 10.0
    assert cfg.gasl.enabled is True and cfg.gasl.sigma == 0.5
    assert cfg.train.max_epochs == 4 and cfg.prune.tau == 0.02


def test_defaults():
    cfg = config.loads("")
    assert cfg.arch == "mlp" and cfg.gasl.enabled is False
    assert cfg.objective.lambda_s == 0.0 and cfg.objective.alpha == 1.0
    assert cfg.prune.tau == 0.01


def test_round_trip():
    cfg = config.loads(SAMPLE)
    again = config.loads(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_round_trip_awkward_floats():
    cfg = config.loads("objective.lambda_s = 0.1\nobjective.lambda_l2 = 1e-17\ngasl.mu = -0.30000000000000004")
    assert config.loads(cfg.dumps()) == cfg


def test_flags_win(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SAMPLE)
    cfg = config.load(path, {"objective.alpha": 0.1, "arch": "mlp", "gasl.enabled": "off"})
    assert cfg.objective.alpha == 0.1 and cfg.arch == "mlp" and cfg.gasl.enabled is False
    assert cfg.objective.lambda_s == 0.05


def test_overrides_copy():
    cfg = config.loads(SAMPLE)
    other = cfg.with_overrides({"objective.alpha": 100})
    assert other.objective.alpha == 100.0 and cfg.objective.alpha == 10.0
    assert dataclasses.replace(other.objective, alpha=10.0) == cfg.objective


@pytest.mark.parametrize("text", ["no equals sign", "bogus = 1", "objective.nope = 1",
                                  "weird.key = 1", "seed = 1\nseed = 2", "train.max_epochs = 2.5",
                                  "gasl.enabled = maybe"])
def test_format_errors(text):
    with pytest.raises(FormatError):
        config.loads(text)


@pytest.mark.parametrize("text", ["arch = vgg", "objective.alpha = 0", "gasl.sigma = -1", "seed = -4"])
def test_invalid_values(text):
    with pytest.raises(ParameterError):
        config.loads(text)


def test_unreadable_file(tmp_path):
    with pytest.raises(DataError):
        config.load(tmp_path / "missing.cfg")


def test_paths_checked(tmp_path):
    cfg = config.loads(f"data_dir = {tmp_path}")
    cfg.check_paths()
    with pytest.raises(DataError):
        config.loads(f"data_dir = {tmp_path / 'absent'}").check_paths()
