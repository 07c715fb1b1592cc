"""Strict YAML run-configuration loading and validation."""

import pytest

from raceway.config import (
    RunConfig,
    config_hash,
    default_config,
    load_config,
    validate_config,
)
from raceway.exceptions import ConfigError, ConfigNotFoundError


def _load(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return load_config(str(path))


def test_empty_file_yields_the_full_default_configuration(tmp_path):
    cfg = _load(tmp_path, "")
    assert cfg == default_config()
    assert cfg.agent.gamma == 0.9
    assert cfg.agent.offline_epochs == 4000
    assert cfg.agent.finetune_epochs == 50
    assert cfg.pid.kp == -32.0
    assert cfg.ts == 10.0


def test_default_seasons_differ_between_training_and_test(tmp_path):
    cfg = _load(tmp_path, "")
    assert cfg.test_season.i_max < cfg.train_season.i_max
    assert cfg.test_season.sunrise > cfg.train_season.sunrise
    assert cfg.test_season.sunset < cfg.train_season.sunset


def test_values_override_nested_fields(tmp_path):
    cfg = _load(tmp_path, "\n".join([
        "seed: 11",
        "agent:",
        "  gamma: 0.95",
        "  hidden_width: 64",
        "plant:",
        "  noise_std: 0.0",
        "train_season:",
        "  cloud_duration: [100, 200]",
    ]))
    assert cfg.seed == 11
    assert cfg.agent.gamma == 0.95
    assert cfg.plant.noise_std == 0.0
    assert cfg.train_season.cloud_duration == (100.0, 200.0)


def test_missing_file_is_its_own_error():
    with pytest.raises(ConfigNotFoundError) as err:
        load_config("/nonexistent/run.yaml")
    assert err.value.code == "config-not-found"


def test_invalid_yaml_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="not valid YAML"):
        _load(tmp_path, "seed: [unclosed")


def test_unknown_top_level_key_is_rejected_with_its_path(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "bogus: 1")
    assert err.value.key_path == "bogus"
    assert err.value.code == "config-invalid"


def test_unknown_nested_key_is_rejected_with_a_dotted_path(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "plant:\n  k_banana: 1.0")
    assert err.value.key_path == "plant.k_banana"


def test_wrong_scalar_type_is_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "seed: twelve")
    assert err.value.key_path == "seed"


def test_boolean_is_not_a_number(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "plant:\n  k_ph: true")
    assert err.value.key_path == "plant.k_ph"


def test_range_fields_need_exactly_two_elements(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "observation:\n  temp_range: [1, 2, 3]")
    assert err.value.key_path == "observation.temp_range"


def test_null_is_allowed_only_for_optional_fields(tmp_path):
    cfg = _load(tmp_path, "agent:\n  buffer_capacity: null")
    assert cfg.agent.buffer_capacity is None
    with pytest.raises(ConfigError):
        _load(tmp_path, "seed: null")


def test_sampling_time_must_match_the_expert_controller(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "ts: 5.0")
    assert err.value.key_path == "pid.ts"


def test_discount_outside_unit_interval_is_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "agent:\n  gamma: 1.5")
    assert err.value.key_path == "agent.gamma"


def test_inverted_sun_window_is_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "train_season:\n  sunrise: 60000\n  sunset: 50000")
    assert "train_season" in err.value.key_path


def test_makeup_pulse_must_fit_inside_its_period(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path,
              "test_season:\n  topup_duration: 600\n  topup_period: 500")
    assert err.value.key_path == "test_season.topup_period"


def test_agent_action_range_must_match_the_valve(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "agent:\n  action_high: 12.0")
    assert err.value.key_path == "agent.action_low"


def test_zero_update_count_is_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        _load(tmp_path, "agent:\n  updates_per_epoch: 0")
    assert err.value.key_path == "agent.updates_per_epoch"


def test_validate_accepts_the_defaults():
    validate_config(RunConfig())  # must not raise


def test_config_hash_is_stable_and_content_sensitive():
    a, b = RunConfig(), RunConfig()
    assert config_hash(a) == config_hash(b)
    b.agent.gamma = 0.95
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 12
