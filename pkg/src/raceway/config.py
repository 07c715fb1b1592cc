"""Run configuration: one YAML file covering plant, seasons, and training.

Loading is strict. Unknown keys are rejected with their full path, values
must have sensible types, and a validation pass checks the physical and
numerical constraints before anything runs. Every field has a default, so
an empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field

import yaml

from .control import ObservationConfig, PidConfig
from .ddpg import AgentConfig
from .exceptions import ConfigError, ConfigNotFoundError
from .plant import PlantParams, SeasonConfig


def _autumn_season() -> SeasonConfig:
    """Test-season default: shorter, cooler, cloudier days with weekday
    harvests and less evaporation make-up than the summer template."""
    return SeasonConfig(
        i_max=650.0, i_max_jitter=40.0,
        sunrise=31200.0, sunset=56400.0, sun_jitter=600.0,
        cloud_max=4, cloud_duration=(900.0, 3600.0),
        cloud_attenuation=(0.4, 0.8),
        harvest_flow=(1.5, 2.2), harvest_duration=(1200.0, 2400.0),
        topup_period=5400.0,
        t_amb_mean=11.0, t_amb_amp=3.0,
        start_weekday=2)


@dataclass
class RunConfig:
    seed: int = 0
    collect_days: int = 2    # expert data collection, training season
    test_days: int = 3       # evaluation horizon, test season
    ts: float = 10.0         # loop sampling time, s
    plant: PlantParams = field(default_factory=PlantParams)
    pid: PidConfig = field(default_factory=PidConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train_season: SeasonConfig = field(default_factory=SeasonConfig)
    test_season: SeasonConfig = field(default_factory=_autumn_season)


def default_config() -> RunConfig:
    return RunConfig()


def _is_dataclass_type(tp) -> bool:
    return dataclasses.is_dataclass(tp) and isinstance(tp, type)


def _coerce(value, tp, path: str):
    """Check and convert one YAML value against a field's declared type."""
    origin = typing.get_origin(tp)
    if origin in (types.UnionType, typing.Union):
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("null is not allowed here", path)
        non_none = [a for a in args if a is not type(None)]
        return _coerce(value, non_none[0], path)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"expected a {len(args)}-element list", path)
        return tuple(_coerce(v, a, f"{path}[{i}]")
                     for i, (v, a) in enumerate(zip(value, args)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported config field type {tp}", path)


def _build_dataclass(dc_type, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path or "<root>")
    hints = typing.get_type_hints(dc_type)
    names = {f.name for f in dataclasses.fields(dc_type)}
    values = {}
    for key, raw in data.items():
        child = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError("unknown config key", child)
        tp = hints[key]
        if _is_dataclass_type(tp):
            values[key] = _build_dataclass(tp, raw, child)
        else:
            values[key] = _coerce(raw, tp, child)
    instance = dc_type()
    for key, value in values.items():
        setattr(instance, key, value)
    return instance


def load_config(path: str) -> RunConfig:
    """Read and validate a YAML run configuration."""
    if not os.path.exists(path):
        raise ConfigNotFoundError(f"no such config file: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"not valid YAML: {exc}") from exc
    cfg = _build_dataclass(RunConfig, data, "")
    validate_config(cfg)
    return cfg


def _require(ok: bool, message: str, path: str) -> None:
    if not ok:
        raise ConfigError(message, path)


def _check_range(pair, path: str, lo_ok=None, hi_ok=None) -> None:
    _require(pair[0] < pair[1], "lower bound must be below upper", path)
    if lo_ok is not None:
        _require(pair[0] >= lo_ok, f"must be at least {lo_ok}", path)
    if hi_ok is not None:
        _require(pair[1] <= hi_ok, f"must be at most {hi_ok}", path)


def _check_season(season: SeasonConfig, path: str) -> None:
    _require(0.0 <= season.sunrise < season.sunset <= 86400.0,
             "need 0 <= sunrise < sunset <= 86400", path)
    _require(season.i_max > 0.0, "peak irradiance must be positive",
             f"{path}.i_max")
    _require(season.i_max_jitter >= 0.0, "jitter cannot be negative",
             f"{path}.i_max_jitter")
    _require(season.sun_jitter >= 0.0, "jitter cannot be negative",
             f"{path}.sun_jitter")
    _require(season.cloud_max >= 0, "cloud count cannot be negative",
             f"{path}.cloud_max")
    _check_range(season.cloud_duration, f"{path}.cloud_duration", lo_ok=0.0)
    _check_range(season.cloud_attenuation, f"{path}.cloud_attenuation",
                 lo_ok=0.0, hi_ok=1.0)
    _require(0 <= season.harvest_count[0] <= season.harvest_count[1],
             "need 0 <= min <= max", f"{path}.harvest_count")
    _check_range(season.harvest_flow, f"{path}.harvest_flow", lo_ok=0.0)
    _check_range(season.harvest_duration, f"{path}.harvest_duration",
                 lo_ok=0.0)
    _require(season.topup_flow >= 0.0, "flow cannot be negative",
             f"{path}.topup_flow")
    _require(season.topup_duration >= 0.0, "duration cannot be negative",
             f"{path}.topup_duration")
    _require(season.topup_period > season.topup_duration,
             "make-up pulses must be shorter than their period",
             f"{path}.topup_period")
    _require(season.do_lo < season.do_hi,
             "blower off threshold must sit below the on threshold",
             f"{path}.do_lo")
    _require(season.q_air_on > 0.0, "blower flow must be positive",
             f"{path}.q_air_on")
    _require(0 <= season.start_weekday <= 6, "weekday must be 0..6",
             f"{path}.start_weekday")


def validate_config(cfg: RunConfig) -> None:
    _require(cfg.seed >= 0, "seed cannot be negative", "seed")
    _require(cfg.collect_days >= 1, "need at least one day", "collect_days")
    _require(cfg.test_days >= 1, "need at least one day", "test_days")
    _require(cfg.ts > 0.0, "sampling time must be positive", "ts")
    _require(abs(cfg.ts - cfg.pid.ts) < 1e-12,
             "pid.ts must equal the loop sampling time ts", "pid.ts")

    p = cfg.plant
    for name in ("k_ph", "k_co2", "k_air", "k_dil", "k_i", "q10", "k_o2",
                 "k_la", "do_sat", "r_resp", "tau_t"):
        _require(getattr(p, name) > 0.0, "must be positive", f"plant.{name}")
    _require(p.noise_std >= 0.0, "cannot be negative", "plant.noise_std")
    _require(p.k_heat >= 0.0, "cannot be negative", "plant.k_heat")
    _require(p.ph_min < p.ph_max, "need ph_min < ph_max", "plant.ph_min")
    _require(p.temp_min < p.temp_max, "need temp_min < temp_max",
             "plant.temp_min")

    pid = cfg.pid
    _require(pid.ti > 0.0, "integral time must be positive", "pid.ti")
    _require(pid.u_min < pid.u_max, "need u_min < u_max", "pid.u_min")

    obs = cfg.observation
    for name in ("temp_range", "irradiance_range", "do_range", "q_dil_range",
                 "q_air_range", "co2_range"):
        _check_range(getattr(obs, name), f"observation.{name}")
    _require(obs.int_clip > 0.0, "integral clip must be positive",
             "observation.int_clip")

    a = cfg.agent
    _require(0.0 < a.gamma <= 1.0, "discount must be in (0, 1]",
             "agent.gamma")
    _require(0.0 < a.tau <= 1.0, "blend rate must be in (0, 1]", "agent.tau")
    _require(a.batch_size >= 1, "batch size must be positive",
             "agent.batch_size")
    _require(a.lr_critic > 0.0, "learning rate must be positive",
             "agent.lr_critic")
    _require(a.lr_actor > 0.0, "learning rate must be positive",
             "agent.lr_actor")
    _require(a.hidden_width >= 1, "width must be positive",
             "agent.hidden_width")
    _require(a.action_low < a.action_high, "need action_low < action_high",
             "agent.action_low")
    _require(a.offline_epochs >= 0, "cannot be negative",
             "agent.offline_epochs")
    _require(a.finetune_epochs >= 0, "cannot be negative",
             "agent.finetune_epochs")
    if a.updates_per_epoch is not None:
        _require(a.updates_per_epoch >= 1, "must be positive",
                 "agent.updates_per_epoch")
    if a.buffer_capacity is not None:
        _require(a.buffer_capacity >= 1, "must be positive",
                 "agent.buffer_capacity")
    _require(abs(a.action_low - pid.u_min) < 1e-12
             and abs(a.action_high - pid.u_max) < 1e-12,
             "agent action range must match the pid valve range",
             "agent.action_low")

    _check_season(cfg.train_season, "train_season")
    _check_season(cfg.test_season, "test_season")


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of a full configuration."""
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:12]
