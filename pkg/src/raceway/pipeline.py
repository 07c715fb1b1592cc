"""Experiment drivers: expert data collection, offline training, deployment.

One simulation loop serves every controller. Per step it runs the oxygen
blower, evaluates the activation gate, updates the clipped error integral,
builds the observation, asks the controller for a CO2 flow, advances the
plant, and logs a trace row. Consecutive gate-active steps also yield a
transition (observation, action, reward, next observation) for learning.

Randomness fans out from one experiment seed through named streams so
that runs are reproducible and controllers are comparable:

    (seed, 1)    plant noise during expert data collection
    (seed, 2)    agent weight initialization
    (seed, 3)    mini-batch sampling during offline training
    (seed, 4)    plant noise during deployment and test runs
    (seed, 5)    mini-batch sampling during online fine-tuning
    (seed, 100)  training-season day schedules
    (seed, 200)  test-season day schedules

Every controller evaluated on the test season with the same seed sees
byte-identical irradiance, dilution, and pH noise sequences, so metric
differences are attributable to the controller alone.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import (
    Measurements,
    ObservationConfig,
    PidConfig,
    accumulate_error,
    activation_gate,
    build_observation,
    pid_output,
    reward_log,
)
from .ddpg import Agent, AgentConfig, ReplayBuffer, Transition, TrainingHistory
from .ddpg import act as agent_act
from .ddpg import init_agent, train_epochs
from .exceptions import (
    DatasetFormatError,
    EmptyBufferError,
    SimulationUnstableError,
)
from .plant import (
    ClampCounter,
    PlantParams,
    PlantState,
    SeasonConfig,
    air_controller,
    ambient_temperature,
    day_input_series,
    derive_day_schedule,
    plant_step,
    with_air,
)

SECONDS_PER_DAY = 86400.0

TRACE_COLUMNS = ("t", "ph", "setpoint", "u_co2", "irradiance", "do_conc",
                 "temp", "q_air", "q_dil", "e", "integral_e", "reward",
                 "gate_active")

DATASET_COLUMNS = tuple(
    [f"obs_{i}" for i in range(10)] + ["action", "reward"]
    + [f"next_obs_{i}" for i in range(10)])

# fraction of steps allowed at the pH bounds before a run is rejected
CLAMP_FAIL_FRACTION = 0.10


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, stream)))


@dataclass
class EpisodeTrace:
    """Column-oriented record of one simulated run."""

    data: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.data["t"])

    def __getitem__(self, column: str) -> np.ndarray:
        return self.data[column]

    @property
    def ts(self) -> float:
        return float(self.metadata["ts"])


@dataclass
class MetricsRow:
    controller: str
    iae: float    # integral of absolute error over active steps, pH*s
    cce: float    # cumulative CO2 command movement over active steps


@dataclass
class SimSettings:
    """Everything the simulation loop needs besides the controller."""

    plant: PlantParams
    season: SeasonConfig
    obs_cfg: ObservationConfig
    ts: float = 10.0


Controller = Callable[[np.ndarray, float, float], float]


def pid_controller(cfg: PidConfig) -> Controller:
    """Expert controller; the loop owns the shared error integral."""

    def control(obs: np.ndarray, e: float, integral_e: float) -> float:
        return pid_output(e, integral_e, cfg)

    return control


def agent_controller(agent: Agent) -> Controller:
    def control(obs: np.ndarray, e: float, integral_e: float) -> float:
        return agent_act(agent, obs)

    return control


def simulate(controller: Controller, settings: SimSettings, days: int,
             noise_rng: np.random.Generator | None,
             schedule_entropy, controller_id: str,
             emit: Callable[[Transition], None] | None = None,
             day_end: Callable[[int], None] | None = None,
             start_state: PlantState | None = None) -> EpisodeTrace:
    """Run the closed loop for a number of days and return the trace.

    ``emit`` receives one transition per consecutive pair of gate-active
    steps. A deactivation discards the step left hanging at the gap, and
    every activation starts a fresh control session: error integral and
    remembered CO2 flow reset to zero, so morning transients never inherit
    yesterday's controller state.
    """
    if days < 1:
        raise ValueError("need at least one simulated day")
    ts = settings.ts
    obs_cfg = settings.obs_cfg
    setpoint = obs_cfg.setpoint
    steps_per_day = int(round(SECONDS_PER_DAY / ts))
    state = copy.deepcopy(start_state) if start_state else PlantState()
    clamps = ClampCounter()
    obs_clamped = 0
    transitions = 0
    gate = False
    air_on = False
    integral_e = 0.0
    last_u = 0.0
    pending: tuple[np.ndarray, float, float] | None = None
    rows = np.empty((days * steps_per_day, len(TRACE_COLUMNS)))

    for day in range(days):
        sched = derive_day_schedule(day, settings.season, schedule_entropy)
        inputs = day_input_series(sched, ts)
        for k in range(steps_per_day):
            t_of_day = k * ts
            q_air = air_controller(state.do_conc, air_on, sched)
            air_on = q_air > 0.0
            x = with_air(inputs[k], q_air)

            was_active = gate
            gate = activation_gate(x.irradiance, state.ph, setpoint, gate)
            e = setpoint - state.ph
            if gate and not was_active:
                integral_e = 0.0
                last_u = 0.0
                pending = None

            if gate:
                integral_e = accumulate_error(integral_e, e, ts,
                                              obs_cfg.int_clip)
                meas = Measurements(temp=state.temp, irradiance=x.irradiance,
                                    do_conc=state.do_conc, q_dil=x.q_dil,
                                    q_air=x.q_air, co2_prev=last_u)
                obs, was_clamped = build_observation(meas, e, integral_e,
                                                     t_of_day, obs_cfg)
                obs_clamped += was_clamped
                if pending is not None and emit is not None:
                    p_obs, p_u, p_r = pending
                    emit(Transition(p_obs, p_u, p_r, obs))
                    transitions += 1
                u = controller(obs, e, integral_e)
            else:
                pending = None
                u = 0.0

            new_state = plant_step(state, u, x, settings.plant, ts, noise_rng,
                                   t_amb=ambient_temperature(t_of_day, sched),
                                   telemetry=clamps)
            reward = reward_log(setpoint - new_state.ph) if gate else 0.0
            if gate:
                pending = (obs, u, reward)
                last_u = u

            rows[day * steps_per_day + k] = (
                state.t, state.ph, setpoint, u, x.irradiance, state.do_conc,
                state.temp, q_air, x.q_dil, e, integral_e, reward,
                1.0 if gate else 0.0)
            state = new_state
        if day_end is not None:
            day_end(day)

    total = days * steps_per_day
    if clamps.ph > CLAMP_FAIL_FRACTION * total:
        raise SimulationUnstableError(
            f"pH pinned at a bound for {clamps.ph} of {total} steps "
            f"(controller {controller_id})")

    data = {name: rows[:, i].copy() for i, name in enumerate(TRACE_COLUMNS)}
    metadata = {
        "controller": controller_id,
        "ts": repr(float(ts)),
        "days": str(days),
        "transitions": str(transitions),
        "obs_clamped": str(obs_clamped),
        "ph_clamp_steps": str(clamps.ph),
        "do_clamp_steps": str(clamps.do_conc),
        "temp_clamp_steps": str(clamps.temp),
    }
    return EpisodeTrace(data=data, metadata=metadata)


def collect_pid_dataset(settings: SimSettings, pid_cfg: PidConfig, days: int,
                        seed: int) -> tuple[list[Transition], EpisodeTrace]:
    """Run the expert for ``days`` on the training season and log transitions."""
    dataset: list[Transition] = []
    trace = simulate(pid_controller(pid_cfg), settings, days,
                     noise_rng=_stream_rng(seed, 1),
                     schedule_entropy=(seed, 100),
                     controller_id="PID",
                     emit=dataset.append)
    if not dataset:
        raise EmptyBufferError("expert run produced no transitions")
    trace.metadata["seed"] = str(seed)
    return dataset, trace


def offline_train(dataset: list[Transition], agent_cfg: AgentConfig,
                  obs_cfg: ObservationConfig, seed: int,
                  epochs: int | None = None
                  ) -> tuple[Agent, TrainingHistory]:
    """Train a fresh agent on logged expert data only.

    The buffer is sized to the dataset, so offline training replays the
    same fixed set of transitions throughout.
    """
    if not dataset:
        raise EmptyBufferError("offline training needs a nonempty dataset")
    agent = init_agent(agent_cfg, obs_cfg, _stream_rng(seed, 2))
    capacity = agent_cfg.buffer_capacity or len(dataset)
    buffer = ReplayBuffer(capacity, agent.actor.input_dim,
                          _stream_rng(seed, 3))
    buffer.extend(dataset)
    n_epochs = agent_cfg.offline_epochs if epochs is None else epochs
    history = train_epochs(agent, buffer, n_epochs)
    return agent, history


def deploy(agent: Agent, settings: SimSettings, days: int, fine_tune: bool,
           seed: int, dataset: list[Transition] | None = None,
           noise_stream: int = 4, schedule_stream: int = 200
           ) -> tuple[EpisodeTrace, Agent, TrainingHistory]:
    """Run a policy on the given season, optionally learning each night.

    The given agent is never modified; a deep copy does the run. The
    rolling buffer starts from the historical dataset when one is given
    and keeps collecting either way, so the only effect of ``fine_tune``
    is whether the nightly training step actually runs. The stream
    arguments default to the test-deployment streams; passing the
    collection streams instead replays the exact weather and noise the
    expert saw, which is how like-for-like training-season checks run.
    """
    work = copy.deepcopy(agent)
    capacity = work.config.buffer_capacity or (
        len(dataset) if dataset else 6000)
    buffer = ReplayBuffer(capacity, work.actor.input_dim,
                          _stream_rng(seed, 5))
    if dataset:
        buffer.extend(dataset)
    history = TrainingHistory()

    def nightly(day: int) -> None:
        if fine_tune and work.config.finetune_epochs > 0 and len(buffer) > 0:
            history.extend(train_epochs(work, buffer,
                                        work.config.finetune_epochs))

    controller_id = "RL-FT" if fine_tune else "RL"
    trace = simulate(agent_controller(work), settings, days,
                     noise_rng=_stream_rng(seed, noise_stream),
                     schedule_entropy=(seed, schedule_stream),
                     controller_id=controller_id,
                     emit=buffer.push,
                     day_end=nightly)
    trace.metadata["seed"] = str(seed)
    return trace, work, history


def run_pid_reference(settings: SimSettings, pid_cfg: PidConfig, days: int,
                      seed: int) -> EpisodeTrace:
    """The expert on the test season, facing the same inputs as the agents."""
    trace = simulate(pid_controller(pid_cfg), settings, days,
                     noise_rng=_stream_rng(seed, 4),
                     schedule_entropy=(seed, 200),
                     controller_id="PID")
    trace.metadata["seed"] = str(seed)
    return trace


def compute_metrics(trace: EpisodeTrace) -> MetricsRow:
    """Tracking and actuation-effort scores over gate-active steps.

    The error score integrates |e| over active steps. The effort score
    sums CO2 flow movement between consecutive active steps, so a valve
    that sits still scores near zero and a twitchy one scores high.
    Inactive periods contribute nothing to either.
    """
    ts = trace.ts
    active = trace["gate_active"] > 0.5
    iae = float(np.sum(np.abs(trace["e"][active])) * ts)
    u = trace["u_co2"]
    both = active[1:] & active[:-1]
    cce = float(np.sum(np.abs(u[1:][both] - u[:-1][both])) * ts)
    return MetricsRow(controller=trace.metadata.get("controller", "?"),
                      iae=iae, cce=cce)


@dataclass
class CompareResult:
    rows: list[MetricsRow]
    traces: dict[str, EpisodeTrace]
    dataset_size: int
    offline_history: TrainingHistory
    agent_offline: Agent
    agent_finetuned: Agent


def compare_experiment(plant: PlantParams, train_season: SeasonConfig,
                       test_season: SeasonConfig, pid_cfg: PidConfig,
                       obs_cfg: ObservationConfig, agent_cfg: AgentConfig,
                       seed: int, collect_days: int = 2, test_days: int = 3,
                       ts: float = 10.0) -> CompareResult:
    """The full study at one seed: expert, cloned policy, fine-tuned policy.

    All three test-season runs share schedules and plant noise streams, so
    the comparison isolates the controllers.
    """
    train_settings = SimSettings(plant=plant, season=train_season,
                                 obs_cfg=obs_cfg, ts=ts)
    test_settings = SimSettings(plant=plant, season=test_season,
                                obs_cfg=obs_cfg, ts=ts)

    dataset, _ = collect_pid_dataset(train_settings, pid_cfg, collect_days,
                                     seed)
    agent, offline_history = offline_train(dataset, agent_cfg, obs_cfg, seed)

    trace_pid = run_pid_reference(test_settings, pid_cfg, test_days, seed)
    trace_rl, _, _ = deploy(agent, test_settings, test_days,
                            fine_tune=False, seed=seed, dataset=dataset)
    trace_ft, agent_ft, _ = deploy(agent, test_settings, test_days,
                                   fine_tune=True, seed=seed, dataset=dataset)

    traces = {"PID": trace_pid, "RL": trace_rl, "RL-FT": trace_ft}
    rows = [compute_metrics(traces[name]) for name in ("PID", "RL", "RL-FT")]
    return CompareResult(rows=rows, traces=traces, dataset_size=len(dataset),
                         offline_history=offline_history,
                         agent_offline=agent, agent_finetuned=agent_ft)


# ---------------------------------------------------------------------------
# file formats
#
# Plain CSV with repr-formatted floats, so identical runs write identical
# bytes and every value survives a read round trip exactly. Metadata rides
# in leading "# key=value" comment lines.
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trace(path: str, trace: EpisodeTrace) -> None:
    with open(path, "w", newline="\n") as fh:
        for key in sorted(trace.metadata):
            fh.write(f"# {key}={trace.metadata[key]}\n")
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        columns = [trace.data[name] for name in TRACE_COLUMNS]
        gate_idx = TRACE_COLUMNS.index("gate_active")
        for row in zip(*columns):
            cells = [_fmt(v) for v in row]
            cells[gate_idx] = str(int(row[gate_idx]))
            fh.write(",".join(cells) + "\n")


def read_trace(path: str) -> EpisodeTrace:
    metadata: dict[str, str] = {}
    rows: list[list[float]] = []
    with open(path) as fh:
        lines = iter(enumerate(fh, start=1))
        header = None
        for line_no, line in lines:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
                continue
            header = line.split(",")
            break
        if header != list(TRACE_COLUMNS):
            raise DatasetFormatError("trace header does not match the "
                                     "expected columns")
        for line_no, line in lines:
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(TRACE_COLUMNS):
                raise DatasetFormatError(
                    f"expected {len(TRACE_COLUMNS)} cells, got {len(parts)}",
                    line_no=line_no)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line_no=line_no) from exc
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, len(TRACE_COLUMNS))
    data = {name: arr[:, i].copy() for i, name in enumerate(TRACE_COLUMNS)}
    return EpisodeTrace(data=data, metadata=metadata)


def write_dataset(path: str, dataset: list[Transition]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(DATASET_COLUMNS) + "\n")
        for tr in dataset:
            cells = ([_fmt(v) for v in tr.obs]
                     + [_fmt(tr.action), _fmt(tr.reward)]
                     + [_fmt(v) for v in tr.next_obs])
            fh.write(",".join(cells) + "\n")


def read_dataset(path: str) -> list[Transition]:
    """Load a transition file, rejecting malformed rows by line number."""
    dataset: list[Transition] = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first.split(",") != list(DATASET_COLUMNS):
            raise DatasetFormatError("unexpected dataset header", line_no=1)
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(DATASET_COLUMNS):
                raise DatasetFormatError(
                    f"expected {len(DATASET_COLUMNS)} cells, got {len(parts)}",
                    line_no=line_no)
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line_no=line_no) from exc
            if not all(np.isfinite(values)):
                raise DatasetFormatError("non-finite value", line_no=line_no)
            dataset.append(Transition(
                obs=np.asarray(values[0:10]),
                action=values[10],
                reward=values[11],
                next_obs=np.asarray(values[12:22])))
    if not dataset:
        raise DatasetFormatError("dataset holds no transitions")
    return dataset


def write_metrics(path: str, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("controller,iae,cce\n")
        for row in rows:
            fh.write(f"{row.controller},{_fmt(row.iae)},{_fmt(row.cce)}\n")


def write_history(path: str, history: TrainingHistory) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("epoch,critic_loss,actor_objective\n")
        for i, (loss, obj) in enumerate(zip(history.critic_loss,
                                            history.actor_objective)):
            fh.write(f"{i},{_fmt(loss)},{_fmt(obj)}\n")
