from pathlib import Path

import pytest

from utils import model
from utils.config import RunConfig
from utils.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", ["single_mode", "two_mode", "critical"])
def test_shipped_configs_load(name):
    config = RunConfig.from_file(CONFIGS / f"{name}.ini")
    assert len(config.digest()) == 16
    assert config.modes().n_modes >= 1


def test_canonical_text_is_a_fixed_point():
    config = RunConfig.from_file(CONFIGS / "two_mode.ini")
    again = RunConfig.from_text(config.canonical_text())
    assert again.canonical_text() == config.canonical_text()
    assert again.digest() == config.digest()


def test_digest_ignores_layout_and_defaults():
    a = RunConfig.from_text("[mc]\nT = 5\nseed = 3\n")
    b = RunConfig.from_text("# comment\n[mc]\nseed=3\nT=5.0\nsamples = 20000\n")
    assert a.digest() == b.digest()
    assert RunConfig.from_text("[mc]\nT = 6\n").digest() != a.digest()


def test_unknown_section_and_key():
    with pytest.raises(ConfigurationError) as info:
        RunConfig.from_text("[sampler]\nT = 5\n")
    assert info.value.reason == "config.unknown_section"
    with pytest.raises(ConfigurationError) as info:
        RunConfig.from_text("[mc]\ntemperature = 5\n")
    assert info.value.reason == "config.unknown_key"
    assert info.value.exit_code == 1


def test_bad_values():
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("[mc]\nsamples = many\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("[kernel]\nsource = table\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("[mc\nT = 5\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_file(CONFIGS / "missing.ini")


def test_overrides():
    config = RunConfig.from_file(CONFIGS / "single_mode.ini", overrides=["model.lambda=0.25", "mc.T = 3"])
    assert config["model"]["lambda"] == 0.25
    assert config["mc"]["T"] == 3.0
    config.apply_override("scan.lambdas=0.0,0.5")
    assert config["scan"]["lambdas"] == [0.0, 0.5]
    with pytest.raises(ConfigurationError):
        config.apply_override("lambda=0.3")
    with pytest.raises(ConfigurationError):
        config.apply_override("model.lambda")


def test_manual_modes():
    config = RunConfig.from_text("[discretization]\nomega = 1.0, 1.5\nv = 0.8, 0.6\n")
    modes = config.modes()
    assert modes.scheme == "manual"
    assert list(modes.omega) == [1.0, 1.5]
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("[discretization]\nomega = 1.0, 1.5\nv = 0.8\n").modes()


def test_discretized_modes():
    config = RunConfig.from_file(CONFIGS / "critical.ini")
    assert config.model_spec().dimension == 3
    assert config.kernel_source() == config.model_spec()
    modes = config.modes()
    assert modes.n_modes == config["discretization"]["n_modes"]
    assert modes.m_omega > 0.0
    assert model.ir_classify(config.model_spec()) is model.InfraredClass.CRITICAL


def test_kernel_horizon():
    config = RunConfig.from_text("[mc]\nT = 5\n")
    assert config.kernel_t_max() == 20.0
    assert config.kernel_t_max([8.0]) == 32.0
    assert RunConfig.from_text("[kernel]\nt_max = 50\n").kernel_t_max([100.0]) == 50.0


def test_mc_config():
    config = RunConfig.from_file(CONFIGS / "single_mode.ini")
    cfg = config.mc_config(threads=3)
    assert cfg.horizon == 5.0
    assert cfg.seed == 20211
    assert cfg.threads == 3
    assert config.mc_config(seed=7, samples=100).samples == 100
    assert config.mc_config(seed=7).seed == 7
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("[mc]\nw_insert_pair = 0\n").mc_config()
