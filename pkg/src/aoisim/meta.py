"""Outer search over the reward weights (zeta1, zeta2).

Each candidate weighting is scored by running a full inner training +
evaluation and collapsing its KPIs into

    meta_reward = -(average AoI) * (accumulated regret) * (average power),

with the normalized power (raw watts would make the product degenerate at
the 1e-11 scale). Two search modes over the finite weight grids: a plain
exhaustive sweep, and a small DQN (weights theta3, frozen targets theta4)
whose single-value state is the device count and whose actions are the
grid points. Zero regret zeroes the product and makes all zero-regret
weightings tie; that degeneracy is inherited from the objective and is
logged, not patched.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import Network
from .seeding import substream


@dataclass(frozen=True)
class MetaAction:
    zeta1: float
    zeta2: float


@dataclass
class MetaRecord:
    action: MetaAction
    seed: int
    avg_aoi: float
    acc_regret: float
    avg_power: float
    meta_reward: float
    failed: bool = False
    error: str = ""


@dataclass
class MetaResult:
    best: MetaAction
    best_reward: float
    log: list
    mode: str


def meta_reward(avg_aoi: float, acc_regret: float, avg_power: float) -> float:
    """-(A * R * P); any zero factor collapses the product to 0."""
    if avg_aoi < 0 or acc_regret < 0 or avg_power < 0:
        raise ConfigError("meta reward inputs must be nonnegative")
    return -(avg_aoi * acc_regret * avg_power)


def action_grid(zeta1_grid, zeta2_grid):
    if len(zeta1_grid) == 0 or len(zeta2_grid) == 0:
        raise ConfigError("weight grids must be nonempty")
    return [MetaAction(float(z1), float(z2)) for z1 in zeta1_grid for z2 in zeta2_grid]


def _score(inner_eval, action, seed):
    """Run one inner training+evaluation; failures become flagged records."""
    try:
        avg_aoi, acc_regret, avg_power = inner_eval(action.zeta1, action.zeta2, seed)
    except Exception as exc:  # noqa: BLE001 - inner failures are data here
        return MetaRecord(action=action, seed=seed, avg_aoi=float("nan"),
                          acc_regret=float("nan"), avg_power=float("nan"),
                          meta_reward=float("nan"), failed=True, error=str(exc))
    return MetaRecord(action=action, seed=seed, avg_aoi=avg_aoi,
                      acc_regret=acc_regret, avg_power=avg_power,
                      meta_reward=meta_reward(avg_aoi, acc_regret, avg_power))


def _best_visited(log):
    scored = [r for r in log if not r.failed]
    if not scored:
        raise ConfigError("every inner run failed; nothing to select")
    best = max(scored, key=lambda r: r.meta_reward)
    return best.action, best.meta_reward


def sweep(zeta1_grid, zeta2_grid, inner_eval, seeds=(0,)) -> MetaResult:
    """Exhaustive evaluation of the grid; selects the best median reward."""
    actions = action_grid(zeta1_grid, zeta2_grid)
    log = []
    med = {}
    for action in actions:
        rewards = []
        for seed in seeds:
            rec = _score(inner_eval, action, seed)
            log.append(rec)
            if not rec.failed:
                rewards.append(rec.meta_reward)
        if rewards:
            med[action] = float(np.median(rewards))
    if not med:
        raise ConfigError("every inner run failed; nothing to select")
    best = max(med, key=lambda a: med[a])
    return MetaResult(best=best, best_reward=med[best], log=log, mode="sweep")


def optimize(zeta1_grid, zeta2_grid, inner_eval, num_devices: int,
             episodes: int = 0, epsilon_start: float = 1.0,
             epsilon_decay: float = 0.95, epsilon_floor: float = 0.1,
             lr: float = 1e-3, target_period: int = 10, batch_size: int = 8,
             hidden_sizes=(64, 64), seed: int = 0, inner_seed: int = 0) -> MetaResult:
    """Algorithm-3-style meta-DQN over the joint weight grid.

    Every meta-episode picks a grid point epsilon-greedily, runs the inner
    training+evaluation to obtain the meta reward, replays a minibatch and
    takes one Adam step on theta3; theta4 refreshes every `target_period`
    episodes. Returns the best-reward visited action and the complete log
    (failed inner runs included, with their meta-step skipped for training).
    Singleton grids short-circuit to a single evaluation.
    """
    actions = action_grid(zeta1_grid, zeta2_grid)
    if len(actions) == 1:
        rec = _score(inner_eval, actions[0], inner_seed)
        if rec.failed:
            raise ConfigError(f"inner run failed: {rec.error}")
        return MetaResult(best=actions[0], best_reward=rec.meta_reward,
                          log=[rec], mode="dqn")
    if episodes <= 0:
        episodes = 10 * len(actions)

    net = Network.mlp((1, *hidden_sizes, len(actions)),
                      rng=substream(seed, "meta", "init"), seed=seed)
    target = net.copy()
    explore = substream(seed, "meta", "explore")
    replay_rng = substream(seed, "meta", "replay")
    state = np.array([[float(num_devices)]])
    replay_actions, replay_rewards = [], []
    log = []
    for episode in range(episodes):
        epsilon = max(epsilon_floor, epsilon_start * epsilon_decay**episode)
        if explore.random() < epsilon:
            choice = int(explore.integers(len(actions)))
        else:
            choice = int(np.argmax(net.forward(state)[0]))
        rec = _score(inner_eval, actions[choice], inner_seed)
        log.append(rec)
        if rec.failed:
            continue
        replay_actions.append(choice)
        replay_rewards.append(rec.meta_reward)
        # one optimization step on a minibatch of stored meta-transitions;
        # the state never changes, so targets are just the stored rewards
        take = replay_rng.integers(0, len(replay_actions), size=min(batch_size, len(replay_actions)))
        batch_states = np.repeat(state, len(take), axis=0)
        caches = []
        q = net.forward(batch_states, caches)
        acts = np.array([replay_actions[i] for i in take])
        rewards = np.array([replay_rewards[i] for i in take])
        err = q[np.arange(len(take)), acts] - rewards
        d_q = np.zeros_like(q)
        d_q[np.arange(len(take)), acts] = 2.0 * err / len(take)
        net.adam_step(net.backward(d_q, caches), lr)
        if (episode + 1) % target_period == 0:
            target.copy_weights_from(net)
    best, best_reward = _best_visited(log)
    return MetaResult(best=best, best_reward=best_reward, log=log, mode="dqn")
