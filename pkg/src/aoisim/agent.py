"""DQN over the UAV grid world, plus the random-walk baseline.

One parameter-shared Q-network drives every UAV: each UAV gets its own
observation (its position first, then the others'), evaluates the shared
network, and picks from the 5*(D+1) per-UAV actions (5 moves x D devices +
idle). Per-UAV transitions from the same slot enter the replay buffer as
separate tuples sharing the slot reward. Exploration is epsilon-greedy with
a per-episode decay, targets come from a periodically frozen copy of the
network, and the TD loss is squared error on the taken actions.
"""

from dataclasses import dataclass, field

import numpy as np

from .env import MOVES, EnvState, JointAction, UavGridEnv, WorldConfig
from .errors import ConfigError, NumericalFault
from .nn import Network
from .seeding import substream
from .kpi import KpiRecord, SlotTrace, kpis_from_trace


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 0.0004
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.995  # per episode
    epsilon_floor: float = 0.01
    target_period: int = 1000  # env slots between theta1 -> theta2 copies
    batch_size: int = 64
    episodes: int = 2000
    hidden_sizes: tuple = (64, 128, 128, 64)
    buffer_capacity: int = 100000
    eval_slots: int = 1000
    dtype: str = "float64"
    # rewards are divided by this inside the TD update so Q-targets stay
    # O(10); a positive rescale leaves the greedy policy invariant but a
    # zero-initialized network cannot chase raw targets in the -1000s.
    # 0 means auto: max(aoi_cap, zeta1, zeta2, 1). Logs keep true rewards.
    reward_scale: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0,1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ConfigError("epsilon_decay must lie in (0,1]")
        if self.target_period < 1:
            raise ConfigError("target_period must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.reward_scale < 0:
            raise ConfigError("reward_scale must be >= 0 (0 = auto)")

    def epsilon_at(self, episode: int) -> float:
        return max(self.epsilon_floor, self.epsilon_start * self.epsilon_decay**episode)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def resolve_reward_scale(self, world: WorldConfig) -> float:
        if self.reward_scale > 0:
            return self.reward_scale
        return max(float(world.aoi_cap), world.zeta1, world.zeta2, 1.0)


def observation_size(cfg: WorldConfig) -> int:
    return 2 * cfg.num_uavs + 1 + 2 * cfg.num_devices


def action_space_size(cfg: WorldConfig) -> int:
    return len(MOVES) * (cfg.num_devices + 1)


def encode_observation(state: EnvState, uav: int, cfg: WorldConfig) -> np.ndarray:
    """Flatten one UAV's view: own cell, peers' cells, headroom, AoI, forecast.

    Everything is scaled to roughly [0,1]; the AoI vector by its cap, the
    headroom by the battery size, positions by the grid extent.
    """
    span = cfg.grid_cells - 1
    obs = np.empty(observation_size(cfg))
    own = state.uavs[uav].position
    obs[0], obs[1] = own[0] / span, own[1] / span
    j = 2
    for other in range(cfg.num_uavs):
        if other == uav:
            continue
        pos = state.uavs[other].position
        obs[j], obs[j + 1] = pos[0] / span, pos[1] / span
        j += 2
    obs[j] = state.uavs[uav].delta / cfg.battery_quanta
    j += 1
    obs[j : j + cfg.num_devices] = state.aoi / cfg.aoi_cap
    j += cfg.num_devices
    obs[j:] = state.predicted
    return obs


def decode_action(index: int, num_devices: int):
    """Action index -> (move, grant); grant == num_devices means idle."""
    return index // (num_devices + 1), index % (num_devices + 1)


def select_action(q_net: Network, obs, epsilon: float, rng, n_actions: int) -> int:
    """Epsilon-greedy on the shared network; greedy ties take the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0,1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(q_net.forward(obs)))


def select_joint_actions(q_values, epsilon, rng, num_devices: int):
    """Centralized per-slot selection for all UAVs from their Q-rows.

    The base station picks every UAV's action, so greedy choices are made
    sequentially with already-taken grants masked out for later UAVs --
    duplicated grants would be voided by conflict resolution anyway.
    Exploration draws stay uniform over the full per-UAV action space.
    """
    q_values = np.atleast_2d(q_values)
    n_actions = q_values.shape[1]
    taken = set()
    actions = []
    for u in range(q_values.shape[0]):
        if epsilon > 0.0 and rng.random() < epsilon:
            a = int(rng.integers(n_actions))
        else:
            q = q_values[u]
            if taken:
                q = q.copy()
                for move in range(len(MOVES)):
                    for g in taken:
                        q[move * (num_devices + 1) + g] = -np.inf
            a = int(np.argmax(q))
        grant = a % (num_devices + 1)
        if grant != num_devices:
            taken.add(grant)
        actions.append(a)
    return actions


class ReplayBuffer:
    """Uniform-sampling ring buffer of flattened transitions."""

    def __init__(self, capacity: int, obs_dim: int, dtype=np.float64):
        self.capacity = capacity
        self.states = np.empty((capacity, obs_dim), dtype=dtype)
        self.actions = np.empty(capacity, dtype=np.int64)
        self.rewards = np.empty(capacity, dtype=dtype)
        self.next_states = np.empty((capacity, obs_dim), dtype=dtype)
        self.terminals = np.empty(capacity, dtype=bool)
        self.size = 0
        self._cursor = 0

    def push(self, state, action, reward, next_state, terminal):
        i = self._cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


def td_targets(rewards, next_states, terminals, target_net: Network, gamma: float):
    """y = r + gamma * max_a Q(s', a | theta2), clamped to r on terminals."""
    best_next = np.max(target_net.forward(next_states), axis=1)
    return rewards + gamma * best_next * ~np.asarray(terminals)


def _td_train_step(net, target_net, buffer, batch_size, gamma, lr, rng):
    states, actions, rewards, next_states, terminals = buffer.sample(batch_size, rng)
    targets = td_targets(rewards, next_states, terminals, target_net, gamma)
    caches = []
    q = net.forward(states, caches)
    taken = q[np.arange(batch_size), actions]
    err = taken - targets
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericalFault(f"diverged: non-finite TD loss at adam step {net.step + 1}")
    d_q = np.zeros_like(q)
    d_q[np.arange(batch_size), actions] = 2.0 * err / batch_size
    net.adam_step(net.backward(d_q, caches), lr)
    return loss


@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    reward: float  # accumulated within the episode
    slots: int


@dataclass
class TrainedAgent:
    net: Network
    episode_log: list
    config: AgentConfig


def train_dqn(world: WorldConfig, model, predictor_factory, agent_cfg: AgentConfig,
              seed: int = 0) -> TrainedAgent:
    """Run the training loop: E episodes, one TD step per slot.

    predictor_factory() builds a fresh adapter per episode (None for the
    genie). Episodes terminate when any UAV's headroom runs out.
    """
    dtype = agent_cfg.np_dtype()
    obs_dim = observation_size(world)
    n_actions = action_space_size(world)
    net = Network.mlp((obs_dim, *agent_cfg.hidden_sizes, n_actions),
                      rng=substream(seed, "qnet", "init"), seed=seed, dtype=dtype)
    target_net = net.copy()
    buffer = ReplayBuffer(agent_cfg.buffer_capacity, obs_dim, dtype=dtype)
    explore_rng = substream(seed, "explore")
    replay_rng = substream(seed, "replay")

    episode_log = []
    global_slot = 0
    num_devices = world.num_devices
    reward_scale = agent_cfg.resolve_reward_scale(world)
    for episode in range(agent_cfg.episodes):
        epsilon = agent_cfg.epsilon_at(episode)
        env = UavGridEnv(world, model, predictor=predictor_factory(), mode="train")
        state = env.reset(substream(seed, "episode", episode, "events"),
                          substream(seed, "episode", episode, "activity"))
        total_reward = 0.0
        slots = 0
        terminal = False
        while not terminal:
            obs = np.stack([encode_observation(state, u, world)
                            for u in range(world.num_uavs)]).astype(dtype)
            actions = select_joint_actions(net.forward(obs), epsilon, explore_rng,
                                           num_devices)
            moves, grants = zip(*(decode_action(int(a), num_devices) for a in actions))
            state, reward, terminal, _ = env.step(JointAction(moves, grants))
            next_obs = np.stack([encode_observation(state, u, world)
                                 for u in range(world.num_uavs)]).astype(dtype)
            for u in range(world.num_uavs):
                buffer.push(obs[u], int(actions[u]), reward / reward_scale,
                            next_obs[u], terminal)
            if buffer.size >= agent_cfg.batch_size:
                _td_train_step(net, target_net, buffer, agent_cfg.batch_size,
                               agent_cfg.gamma, agent_cfg.lr, replay_rng)
            total_reward += reward
            slots += 1
            global_slot += 1
            if global_slot % agent_cfg.target_period == 0:
                target_net.copy_weights_from(net)
        episode_log.append(EpisodeLog(episode=episode, epsilon=epsilon,
                                      reward=total_reward, slots=slots))
    return TrainedAgent(net=net, episode_log=episode_log, config=agent_cfg)


# -- frozen-policy evaluation ---------------------------------------------------

def run_policy(net, world: WorldConfig, model, predictor, slots: int, seed: int,
               policy: str = "trained"):
    """Roll a frozen policy for `slots` slots with recharge semantics.

    policy: "trained"/"genie" evaluate `net` greedily ("genie" just names
    the run whose predictor is the truth), "rw" draws uniform actions and
    needs no network. Returns (KpiRecord, SlotTrace).
    """
    if policy not in ("trained", "genie", "rw"):
        raise ConfigError(f"unknown policy {policy!r}")
    if policy != "rw" and net is None:
        raise ConfigError(f"policy {policy!r} needs a trained network")
    env = UavGridEnv(world, model, predictor=predictor, mode="eval")
    state = env.reset(substream(seed, "eval", "events"),
                      substream(seed, "eval", "activity"))
    rw_rng = substream(seed, "eval", "rw")
    n_actions = action_space_size(world)
    num_devices = world.num_devices
    records = []
    for _ in range(slots):
        if policy == "rw":
            actions = rw_rng.integers(n_actions, size=world.num_uavs)
        else:
            obs = np.stack([encode_observation(state, u, world)
                            for u in range(world.num_uavs)])
            actions = select_joint_actions(net.forward(obs), 0.0, rw_rng,
                                           num_devices)
        moves, grants = zip(*(decode_action(int(a), num_devices) for a in actions))
        state, _, _, record = env.step(JointAction(moves, grants))
        records.append(record)
    trace = SlotTrace.from_records(records)
    return kpis_from_trace(trace), trace
