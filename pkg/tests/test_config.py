import pytest
import yaml

from asfs import config
from asfs.errors import ConfigError


def test_defaults_are_valid_and_digest_is_stable():
    a, b = config.RunConfig(), config.RunConfig()
    a.validate()
    assert a.digest() == b.digest()
    assert (a.pretext.p_m, a.pretext.alpha, a.pretext.batch_size, a.pretext.epochs) == (0.2, 2.0, 128, 40)
    assert (a.selector.epochs, a.selector.learning_rate, a.selector.hidden) == (2000, 0.001, 300)


def test_digest_ignores_output_dir_but_not_hyperparameters():
    base = config.load(overrides=["output_dir=/tmp/a"])
    assert base.digest() == config.load(overrides=["output_dir=/tmp/b"]).digest()
    assert base.digest() != config.load(overrides=["pretext.alpha=1.5"]).digest()


def test_yaml_file_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "seed": 4, "pretext": {"epochs": 3},
        "noise": [{"kind": "mean_blur", "grid": [4, 5]}],
        "data": {"synthetic": {"informative": [1, 2, 3, 4, 5]}},
    }))
    cfg = config.load(path, ["pretext.epochs=7", "selector.learning_rate=1e-2", "selector.eval_widths=[8, 4]"])
    assert cfg.seed == 4 and cfg.pretext.epochs == 7
    assert cfg.selector.learning_rate == 0.01 and cfg.selector.eval_widths == (8, 4)
    assert cfg.noise_specs[0].grid == (4, 5)
    assert cfg.data.synthetic.informative == (1, 2, 3, 4, 5)
    cfg.validate()


def test_roundtrip_through_dump():
    cfg = config.load(overrides=["mode=no-location", "sweep.kind=budget", "sweep.budgets=[10, 20]"])
    again = config.from_dict(yaml.safe_load(config.dump(cfg)))
    assert again == cfg and again.digest() == cfg.digest()


@pytest.mark.parametrize("override", [
    "mode=half", "k=0", "pretext.p_m=1.5", "pretext.alpha=-1", "selector.learning_rate=0",
    "pretext.batch_size=0", "selector.final_weights=last", "sweep.kind=grid", "sweep.modes=[nope]",
    "task=ranking", "data.synthetic.n_informative=0", "pretext.epochs=2.5", "pretext.epochs=many",
    "selector.freeze_autoencoder=3", "bogus=1", "pretext.bogus=1", "data.csv=/no/such/file.csv",
])
def test_invalid_configs_raise(override):
    with pytest.raises(ConfigError):
        config.load(overrides=[override]).validate()


def test_bad_noise_entries_raise():
    with pytest.raises(ConfigError):
        config.load(overrides=["noise=[{kind: rain}]"]).validate()
    with pytest.raises(ConfigError):
        config.load(overrides=["sweep.noise=[[{kind: gaussian, var: -1}]]"]).validate()


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        config.load(bad)
    with pytest.raises(ConfigError):
        config.load(overrides=["novalue"])
