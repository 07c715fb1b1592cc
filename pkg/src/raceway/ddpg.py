"""Deterministic actor-critic agent trained from replayed transitions.

The actor maps an observation to one CO2 flow through a tanh head scaled
to the valve range. The critic scores an (observation, action) pair with
two input branches whose features are concatenated into a trunk; the
action enters scaled to [0, 1] so its branch sees the same magnitudes as
the observation branch.

Training follows the usual deterministic-gradient recipe: the critic
regresses onto bootstrapped targets from slowly tracking target copies,
the actor ascends the critic's value at its own actions using the critic's
input gradient, and the target copies blend toward the live networks after
every update. The same loop serves the long offline phase on logged expert
data and the short nightly touch-ups during deployment.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neural
from .control import OBS_DIM, ObservationConfig
from .exceptions import (
    CheckpointFormatError,
    DimensionMismatchError,
    EmptyBufferError,
    TrainingDivergedError,
)
from .neural import AdamState, Mlp, adam_step, backward, forward, init_adam, init_mlp


@dataclass
class AgentConfig:
    gamma: float = 0.9           # discount
    tau: float = 0.01            # target blend rate
    batch_size: int = 64
    lr_critic: float = 1e-4
    lr_actor: float = 1e-5
    hidden_width: int = 256
    action_low: float = 0.0      # L/min
    action_high: float = 10.0    # L/min
    offline_epochs: int = 4000
    finetune_epochs: int = 50
    # None: one full pass, ceil(buffer size / batch size) gradient steps
    updates_per_epoch: int | None = None
    buffer_capacity: int | None = None  # None: sized from the seed dataset


@dataclass
class Transition:
    obs: np.ndarray
    action: float
    reward: float
    next_obs: np.ndarray
    active: bool = True  # controller gate was on at both endpoints


@dataclass
class Batch:
    obs: np.ndarray        # [M, obs_dim]
    action: np.ndarray     # [M]
    reward: np.ndarray     # [M]
    next_obs: np.ndarray   # [M, obs_dim]


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling.

    Once full, each push overwrites the oldest entry, which is exactly the
    rolling-window behaviour wanted online: stale expert data gradually
    gives way to fresh closed-loop data.
    """

    def __init__(self, capacity: int, obs_dim: int,
                 rng: np.random.Generator):
        if capacity <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.rng = rng
        self._obs = np.zeros((capacity, obs_dim))
        self._action = np.zeros(capacity)
        self._reward = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dim))
        self._next_slot = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, tr: Transition) -> None:
        obs = np.asarray(tr.obs, dtype=np.float64)
        next_obs = np.asarray(tr.next_obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,) or next_obs.shape != (self.obs_dim,):
            raise DimensionMismatchError(
                f"transition observation shape {obs.shape} does not match "
                f"buffer width {self.obs_dim}")
        i = self._next_slot
        self._obs[i] = obs
        self._action[i] = tr.action
        self._reward[i] = tr.reward
        self._next_obs[i] = next_obs
        self._next_slot = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, transitions) -> None:
        for tr in transitions:
            self.push(tr)

    def sample(self, batch_size: int) -> Batch:
        if self._size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self._size, size=batch_size)
        # fancy indexing already yields fresh arrays
        return Batch(obs=self._obs[idx], action=self._action[idx],
                     reward=self._reward[idx], next_obs=self._next_obs[idx])

    def in_order(self) -> list[Transition]:
        """Transitions oldest first, mainly for tests and inspection."""
        if self._size < self.capacity:
            order = range(self._size)
        else:
            order = [(self._next_slot + k) % self.capacity
                     for k in range(self.capacity)]
        return [Transition(self._obs[i].copy(), float(self._action[i]),
                           float(self._reward[i]), self._next_obs[i].copy())
                for i in order]


@dataclass
class Critic:
    """Two-branch value network. ``action_span`` rescales the raw flow to
    [0, 1] before its branch; the input gradient returned by
    ``critic_grads`` is with respect to the raw flow."""

    obs_net: Mlp
    act_net: Mlp
    trunk: Mlp
    action_low: float
    action_span: float


def critic_params(critic: Critic) -> list[np.ndarray]:
    return (neural.param_list(critic.obs_net)
            + neural.param_list(critic.act_net)
            + neural.param_list(critic.trunk))


def critic_value(critic: Critic, obs: np.ndarray, action: np.ndarray):
    """Score a batch of (obs, action) pairs. Returns values [M] and a cache."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    action = np.asarray(action, dtype=np.float64).reshape(-1, 1)
    if action.shape[0] != obs.shape[0]:
        raise DimensionMismatchError(
            f"{obs.shape[0]} observations but {action.shape[0]} actions")
    a_scaled = (action - critic.action_low) / critic.action_span
    h_obs, c_obs = forward(critic.obs_net, obs)
    h_act, c_act = forward(critic.act_net, a_scaled)
    joint = np.concatenate([h_obs, h_act], axis=1)
    q, c_trunk = forward(critic.trunk, joint)
    return q[:, 0], (c_obs, c_act, c_trunk)


def critic_grads(critic: Critic, cache, dl_dq: np.ndarray,
                 param_grads: bool = True):
    """Backpropagate through the cached critic evaluation.

    Returns (parameter gradients in ``critic_params`` order or None,
    gradient of the loss w.r.t. the raw action, shape [M]).
    """
    c_obs, c_act, c_trunk = cache
    d_trunk = np.asarray(dl_dq, dtype=np.float64).reshape(-1, 1)
    g_trunk, d_joint = backward(critic.trunk, c_trunk, d_trunk, param_grads)
    width = c_obs.post[-1].shape[1]
    g_obs, _ = backward(critic.obs_net, c_obs, d_joint[:, :width], param_grads)
    g_act, d_scaled = backward(critic.act_net, c_act, d_joint[:, width:],
                               param_grads)
    dl_daction = d_scaled[:, 0] / critic.action_span
    if not param_grads:
        return None, dl_daction
    return g_obs + g_act + g_trunk, dl_daction


@dataclass
class TrainingHistory:
    critic_loss: list[float] = field(default_factory=list)
    actor_objective: list[float] = field(default_factory=list)

    def extend(self, other: "TrainingHistory") -> None:
        self.critic_loss.extend(other.critic_loss)
        self.actor_objective.extend(other.actor_objective)


@dataclass
class Agent:
    actor: Mlp
    critic: Critic
    actor_target: Mlp
    critic_target: Critic
    opt_actor: AdamState
    opt_critic: AdamState
    config: AgentConfig
    obs_config: ObservationConfig


def init_agent(cfg: AgentConfig, obs_cfg: ObservationConfig,
               rng: np.random.Generator, obs_dim: int = OBS_DIM) -> Agent:
    """Build actor, critic, and target copies from one generator.

    Targets start as exact copies so the first bootstrapped values come
    from the same function the critic is about to improve.
    """
    w = cfg.hidden_width
    actor = init_mlp([obs_dim, w, w, 1], ["relu", "relu", "tanh"], rng)
    critic = Critic(
        obs_net=init_mlp([obs_dim, w], ["relu"], rng),
        act_net=init_mlp([1, w], ["relu"], rng),
        trunk=init_mlp([2 * w, w, 1], ["relu", "linear"], rng),
        action_low=cfg.action_low,
        action_span=cfg.action_high - cfg.action_low)
    return Agent(
        actor=actor,
        critic=critic,
        actor_target=copy.deepcopy(actor),
        critic_target=copy.deepcopy(critic),
        opt_actor=init_adam(neural.param_list(actor), cfg.lr_actor),
        opt_critic=init_adam(critic_params(critic), cfg.lr_critic),
        config=cfg,
        obs_config=obs_cfg)


def scale_action(raw: np.ndarray, cfg: AgentConfig) -> np.ndarray:
    """Map the actor's tanh output onto the valve range."""
    return cfg.action_low + (raw + 1.0) * 0.5 * (cfg.action_high - cfg.action_low)


def act(agent: Agent, obs: np.ndarray) -> float:
    """Deterministic policy action for one observation, in L/min."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (agent.actor.input_dim,):
        raise DimensionMismatchError(
            f"observation shape {obs.shape} does not match "
            f"actor input {agent.actor.input_dim}")
    raw, _ = forward(agent.actor, obs)
    return float(scale_action(raw, agent.config)[0])


def policy_actions(actor: Mlp, obs: np.ndarray, cfg: AgentConfig):
    """Batch actions plus the forward cache, for use inside updates."""
    raw, cache = forward(actor, obs)
    return scale_action(raw[:, 0], cfg), cache


def critic_target_values(agent: Agent, batch: Batch) -> np.ndarray:
    """Bootstrapped regression targets from the target copies.

    Every transition bootstraps; the control problem has no terminal
    states, nightfall simply stops producing transitions.
    """
    next_a, _ = policy_actions(agent.actor_target, batch.next_obs, agent.config)
    next_q, _ = critic_value(agent.critic_target, batch.next_obs, next_a)
    return batch.reward + agent.config.gamma * next_q


def update_critic(agent: Agent, batch: Batch) -> float:
    """One mean-squared-error regression step onto bootstrapped targets."""
    y = critic_target_values(agent, batch)
    q, cache = critic_value(agent.critic, batch.obs, batch.action)
    err = q - y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingDivergedError("critic loss is not finite")
    dl_dq = 2.0 * err / err.size
    grads, _ = critic_grads(agent.critic, cache, dl_dq)
    adam_step(critic_params(agent.critic), grads, agent.opt_critic)
    return loss


def update_actor(agent: Agent, batch: Batch) -> float:
    """Ascend the critic's score of the actor's own actions.

    The chain runs critic input-gradient -> action scaling -> tanh head,
    with a sign flip because the optimizer minimizes. Returns the mean
    critic value before the step.
    """
    actions, cache = policy_actions(agent.actor, batch.obs, agent.config)
    q, ccache = critic_value(agent.critic, batch.obs, actions)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise TrainingDivergedError("actor objective is not finite")
    ones = np.ones_like(q) / q.size
    _, dq_da = critic_grads(agent.critic, ccache, ones, param_grads=False)
    # d action / d tanh-output is half the valve span
    half_span = 0.5 * (agent.config.action_high - agent.config.action_low)
    dj_draw = dq_da * half_span
    grads, _ = backward(agent.actor, cache, -dj_draw[:, None])
    adam_step(neural.param_list(agent.actor), grads, agent.opt_actor)
    return objective


def soft_update(agent: Agent) -> None:
    """Blend target copies toward the live networks by tau, in place."""
    tau = agent.config.tau
    pairs = zip(
        neural.param_list(agent.actor_target) + critic_params(agent.critic_target),
        neural.param_list(agent.actor) + critic_params(agent.critic))
    for target, live in pairs:
        target *= 1.0 - tau
        target += tau * live


def train_epochs(agent: Agent, buffer: ReplayBuffer, epochs: int,
                 updates_per_epoch: int | None = None) -> TrainingHistory:
    """Run the critic/actor/target cycle for a number of epochs.

    One epoch is ``updates_per_epoch`` sampled mini-batch updates. When
    neither the argument nor the agent config pins a count, an epoch is
    one full pass over the buffer: ceil(len(buffer) / batch_size)
    updates. History records the per-epoch mean critic loss and actor
    objective.
    """
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    if epochs > 0 and len(buffer) == 0:
        raise EmptyBufferError("training requested on an empty buffer")
    updates = updates_per_epoch
    if updates is None:
        updates = agent.config.updates_per_epoch
    if updates is None:
        updates = -(-len(buffer) // agent.config.batch_size)
    history = TrainingHistory()
    for epoch in range(epochs):
        losses = np.empty(updates)
        objectives = np.empty(updates)
        for j in range(updates):
            batch = buffer.sample(agent.config.batch_size)
            try:
                losses[j] = update_critic(agent, batch)
                objectives[j] = update_actor(agent, batch)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch) from exc
            soft_update(agent)
        history.critic_loss.append(float(losses.mean()))
        history.actor_objective.append(float(objectives.mean()))
    return history


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_KIND = "raceway-agent"
_FORMAT = 1

_NET_NAMES = ("actor", "actor_target",
              "critic.obs", "critic.act", "critic.trunk",
              "critic_target.obs", "critic_target.act", "critic_target.trunk")


def _net_blocks(agent: Agent) -> list[tuple[str, Mlp]]:
    return [
        ("actor", agent.actor),
        ("actor_target", agent.actor_target),
        ("critic.obs", agent.critic.obs_net),
        ("critic.act", agent.critic.act_net),
        ("critic.trunk", agent.critic.trunk),
        ("critic_target.obs", agent.critic_target.obs_net),
        ("critic_target.act", agent.critic_target.act_net),
        ("critic_target.trunk", agent.critic_target.trunk),
    ]


def _adam_header(opt: AdamState) -> dict:
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps_adam": opt.eps_adam, "step_count": opt.step_count,
            "rejected_steps": opt.rejected_steps}


def save_agent(path: str, agent: Agent) -> None:
    """Write every parameter, target copy, and optimizer accumulator.

    The file is bit-exact reproducible: same agent, same bytes.
    """
    obs_cfg = asdict(agent.obs_config)
    for key, value in obs_cfg.items():
        if isinstance(value, tuple):
            obs_cfg[key] = list(value)
    header = {
        "kind": _KIND,
        "format": _FORMAT,
        "agent_config": asdict(agent.config),
        "observation_config": obs_cfg,
        "nets": {name: neural.mlp_header(net) for name, net in _net_blocks(agent)},
        "opt_actor": _adam_header(agent.opt_actor),
        "opt_critic": _adam_header(agent.opt_critic),
    }
    arrays: list[tuple[str, np.ndarray]] = []
    for name, net in _net_blocks(agent):
        arrays.extend(neural.mlp_arrays(net, name))
    for opt_name, opt in (("opt_actor", agent.opt_actor),
                          ("opt_critic", agent.opt_critic)):
        for i, m in enumerate(opt.m):
            arrays.append((f"{opt_name}.m.{i}", m))
        for i, v in enumerate(opt.v):
            arrays.append((f"{opt_name}.v.{i}", v))
    neural.write_array_file(path, header, arrays)


def _load_adam(header: dict, arrays: dict, name: str,
               params: list[np.ndarray]) -> AdamState:
    meta = header[name]
    opt = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
                    eps_adam=meta["eps_adam"], step_count=meta["step_count"],
                    rejected_steps=meta["rejected_steps"])
    for i, p in enumerate(params):
        try:
            m = arrays[f"{name}.m.{i}"]
            v = arrays[f"{name}.v.{i}"]
        except KeyError as exc:
            raise CheckpointFormatError(
                f"missing optimizer array {name}.{i}") from exc
        if m.shape != p.shape or v.shape != p.shape:
            raise CheckpointFormatError(
                f"optimizer array {name}.{i} has shape {m.shape}, "
                f"parameter has {p.shape}")
        opt.m.append(m)
        opt.v.append(v)
    return opt


def load_agent(path: str) -> Agent:
    """Rebuild an agent from ``save_agent`` output, validating shapes."""
    header, arrays = neural.read_array_file(path)
    if header.get("kind") != _KIND:
        raise CheckpointFormatError("file does not hold an agent checkpoint")
    if header.get("format") != _FORMAT:
        raise CheckpointFormatError(
            f"unsupported checkpoint format {header.get('format')!r}")
    try:
        cfg = AgentConfig(**header["agent_config"])
        obs_raw = dict(header["observation_config"])
        for key, value in obs_raw.items():
            if isinstance(value, list):
                obs_raw[key] = tuple(value)
        obs_cfg = ObservationConfig(**obs_raw)
        nets = {name: neural.mlp_from_arrays(header["nets"][name], arrays, name)
                for name in _NET_NAMES}
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"malformed agent header: {exc}") from exc
    span = cfg.action_high - cfg.action_low
    critic = Critic(nets["critic.obs"], nets["critic.act"],
                    nets["critic.trunk"], cfg.action_low, span)
    critic_t = Critic(nets["critic_target.obs"], nets["critic_target.act"],
                      nets["critic_target.trunk"], cfg.action_low, span)
    agent = Agent(
        actor=nets["actor"], critic=critic,
        actor_target=nets["actor_target"], critic_target=critic_t,
        opt_actor=_load_adam(header, arrays, "opt_actor",
                             neural.param_list(nets["actor"])),
        opt_critic=_load_adam(header, arrays, "opt_critic",
                              critic_params(critic)),
        config=cfg, obs_config=obs_cfg)
    if agent.actor.input_dim != agent.critic.obs_net.input_dim:
        raise CheckpointFormatError("actor and critic observation sizes differ")
    return agent


def config_fingerprint(cfg: AgentConfig) -> str:
    """Stable short hash of an agent configuration."""
    import hashlib

    blob = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:12]
