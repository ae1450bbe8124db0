import pytest

from gazerefine.config import OUTPUT_ROOT_ENV, RunConfig, load_config
from gazerefine.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.run.seed == 0 and cfg.simulate.seed == 0
    assert cfg.train_refinenet.kappa_sigma_deg == 3.0
    assert cfg.run.preset == "published"


@pytest.mark.parametrize("override", ["nosuch.key=1", "run.nosuch=1", "train-refinenet.kappa=2", "bad"])
def test_unknown_keys_rejected(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_unknown_key_in_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train-refinenet]\nlearning_rat = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rat"):
        load_config(p)


def test_bad_value_type():
    with pytest.raises(ConfigError):
        load_config(overrides=["run.seed=abc"])
    with pytest.raises(ConfigError):
        load_config(overrides=["run.preset=huge"])


def test_round_trip(tmp_path):
    cfg = load_config(overrides=["run.seed=7", "train-refinenet.kappa_sigma_deg=1.5", "sweep.sigmas=0,2",
                                 "experiments.cross_noise=true", "eval.group_by=kind"])
    path = cfg.write(tmp_path)
    again = load_config(path)
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()
    assert "[versions]" in path.read_text()


def test_preset_applied_before_explicit_values():
    cfg = load_config(overrides=["run.preset=desk"])
    assert cfg.train_refinenet.epochs == 12 and cfg.train_refinenet.decay_interval == 4.0
    assert cfg.train_eyenet.epochs == 8
    cfg = load_config(overrides=["train-refinenet.epochs=3", "run.preset=desk"])
    assert cfg.train_refinenet.epochs == 3


def test_seed_single_source():
    cfg = load_config(overrides=["run.seed=5"])
    assert cfg.simulate.seed == 5
    assert load_config(overrides=["run.seed=5", "simulate.seed=5"]).simulate.seed == 5
    with pytest.raises(ConfigError):
        load_config(overrides=["run.seed=5", "simulate.seed=6"])


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert RunConfig().output_root() == tmp_path
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert str(RunConfig().output_root()) == "runs"


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.ini")
