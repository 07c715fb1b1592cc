"""pH control experiments on an open raceway pond simulator.

The package pairs a small seeded pond model with two controllers for CO2
injection: a fixed-gain PI expert with integral-clipping anti-windup and
a deterministic actor-critic agent cloned from the expert's logged
behaviour and optionally fine-tuned nightly during deployment.
``raceway.pipeline`` holds the experiment drivers; ``raceway.cli``
exposes them as the ``raceway`` command.
"""

from .config import RunConfig, config_hash, default_config, load_config
from .control import (
    OBS_DIM,
    Measurements,
    ObservationConfig,
    PidConfig,
    PidState,
    activation_gate,
    build_observation,
    pid_step,
    reward_log,
    reward_quadratic,
)
from .ddpg import (
    Agent,
    AgentConfig,
    ReplayBuffer,
    Transition,
    act,
    init_agent,
    load_agent,
    save_agent,
    soft_update,
    train_epochs,
    update_actor,
    update_critic,
)
from .exceptions import RacewayError
from .neural import Mlp, adam_step, backward, check_gradients, forward, init_mlp
from .pipeline import (
    CompareResult,
    EpisodeTrace,
    MetricsRow,
    SimSettings,
    collect_pid_dataset,
    compare_experiment,
    compute_metrics,
    deploy,
    offline_train,
    read_dataset,
    read_trace,
    write_dataset,
    write_trace,
)
from .plant import (
    DisturbanceSchedule,
    ExogenousInputs,
    PlantParams,
    PlantState,
    SeasonConfig,
    air_controller,
    build_day_inputs,
    diurnal_irradiance,
    plant_step,
)

__version__ = "0.1.0"
