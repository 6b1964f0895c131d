import pytest

from skdv2.config import KEYS, SimConfig, canonical_key, config_comment_block, load_config
from skdv2.errors import ConfigError


def test_defaults_round_trip():
    cfg = SimConfig()
    assert SimConfig.from_text(cfg.to_text()) == cfg
    assert set(cfg.values) == set(KEYS)


def test_round_trip_after_overrides():
    cfg = SimConfig().with_overrides(["epsilon=0.01", "noise.modes=12", "epsilons=0.5,0.25"])
    back = SimConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back["noise.modes"] == 12 and back["sweep.epsilons"] == (0.5, 0.25)


def test_aliases():
    assert canonical_key("dt") == "stepper.dt"
    assert SimConfig({"m": 16})["drift.galerkin_m"] == 16


def test_file_env_override_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nseed = 1\nstepper.dt = 2e-3  # trailing\n")
    assert load_config(f, env={})["seed"] == 1
    assert load_config(f, env={"SKDV2_SEED": "7"})["seed"] == 7
    cfg = load_config(f, ["seed=9", "dt=1e-3"], env={"SKDV2_SEED": "7"})
    assert cfg["seed"] == 9 and cfg["stepper.dt"] == 1e-3


@pytest.mark.parametrize("text", ["bogus.key = 1", "grid.n = abc", "grid.n = 12.5", "no equals sign"])
def test_bad_text(text):
    with pytest.raises(ConfigError):
        SimConfig.from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg", env={})


@pytest.mark.parametrize("override", ["epsilon=-1", "variant=galerkin_cutoff", "window_k=30",
                                      "initial_condition.amplitude=20", "paths=0",
                                      "initial_condition.kind=square", "scheme=deterministic_rk4"])
def test_validate_rejects(override):
    cfg = SimConfig().with_overrides([override] + (["m=100"] if "galerkin" in override else []))
    with pytest.raises(ConfigError):
        cfg.validate()


def test_builders_consistent():
    cfg = SimConfig().with_overrides(["variant=galerkin_cutoff", "m=24"])
    cfg.validate()
    assert cfg.noise_modes() == 24
    assert cfg.noise_model().modes == 24
    assert cfg.drift_spec().m == 24
    assert SimConfig().noise_modes() == 32


def test_comment_block():
    lines = config_comment_block(SimConfig())
    assert all(line.startswith("# ") for line in lines)
    assert len(lines) == len(KEYS)
