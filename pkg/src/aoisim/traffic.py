"""Markov-event IoT traffic model.

K background on/off events evolve as independent two-state Markov chains.
While an event is on, it activates device d with probability p_dk each slot;
silent events never activate anything. The chance that device d is active
given the joint event state S is therefore

    q_d(S) = 1 - prod_k (1 - p_dk)^(S_k).

Event states are length-K 0/1 int arrays, activation vectors length-D 0/1
int arrays. Everything here is a pure function of (state, model, rng).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class EventChain:
    """One on/off background event.

    eps_on  : per-slot probability of switching off -> on
    eps_off : per-slot probability of switching on -> off
    """

    eps_on: float
    eps_off: float

    def __post_init__(self):
        if not (0.0 <= self.eps_on <= 1.0 and 0.0 <= self.eps_off <= 1.0):
            raise ConfigError(
                f"chain probabilities must lie in [0,1], got "
                f"eps_on={self.eps_on}, eps_off={self.eps_off}"
            )

    def transition_matrix(self) -> np.ndarray:
        """2x2 row-stochastic matrix, rows/cols indexed off=0, on=1."""
        return np.array(
            [[1.0 - self.eps_on, self.eps_on], [self.eps_off, 1.0 - self.eps_off]]
        )

    def stationary_on(self) -> float:
        """Long-run probability of the on state (0.5 for a frozen chain)."""
        total = self.eps_on + self.eps_off
        if total == 0.0:
            return 0.5
        return self.eps_on / total


class ActivationModel:
    """K event chains plus the D x K influence matrix p_dk."""

    def __init__(self, chains, influence):
        self.chains = tuple(chains)
        self.influence = np.asarray(influence, dtype=float)
        if len(self.chains) < 1:
            raise ConfigError("need at least one event chain")
        if self.influence.ndim != 2:
            raise ConfigError("influence must be a D x K matrix")
        if self.influence.shape[1] != len(self.chains):
            raise ConfigError(
                f"influence has {self.influence.shape[1]} columns for "
                f"{len(self.chains)} chains"
            )
        if self.influence.shape[0] < 1:
            raise ConfigError("need at least one device")
        if np.any(self.influence < 0.0) or np.any(self.influence > 1.0):
            raise ConfigError("every p_dk must lie in [0,1]")

    @property
    def num_events(self) -> int:
        return len(self.chains)

    @property
    def num_devices(self) -> int:
        return self.influence.shape[0]

    def stationary_event_probs(self) -> np.ndarray:
        return np.array([c.stationary_on() for c in self.chains])

    def sample_initial_events(self, rng: np.random.Generator) -> np.ndarray:
        """Draw an event state from the per-chain stationary distribution."""
        return (rng.random(self.num_events) < self.stationary_event_probs()).astype(np.int8)


def _check_event_state(state, model: ActivationModel) -> np.ndarray:
    state = np.asarray(state)
    if state.shape != (model.num_events,):
        raise ConfigError(
            f"event state has shape {state.shape}, expected ({model.num_events},)"
        )
    return state


def step_events(state, model: ActivationModel, rng: np.random.Generator) -> np.ndarray:
    """Advance every chain one slot: on->off w.p. eps_off, off->on w.p. eps_on."""
    state = _check_event_state(state, model)
    eps_on = np.array([c.eps_on for c in model.chains])
    eps_off = np.array([c.eps_off for c in model.chains])
    flip = rng.random(model.num_events) < np.where(state == 1, eps_off, eps_on)
    return np.where(flip, 1 - state, state).astype(np.int8)


def activation_probs(state, model: ActivationModel) -> np.ndarray:
    """Exact per-device activation probabilities q_d(S) for the given state."""
    state = _check_event_state(state, model)
    # (1-p)^S with 0^0 == 1 handles p_dk == 1 cleanly.
    factors = (1.0 - model.influence) ** state[np.newaxis, :]
    return 1.0 - np.prod(factors, axis=1)


def true_activation_prob(state, model: ActivationModel, device: int) -> float:
    """q_d(S) for a single device."""
    if not 0 <= device < model.num_devices:
        raise IndexError(f"device {device} out of range [0, {model.num_devices})")
    return float(activation_probs(state, model)[device])


def sample_activations(state, model: ActivationModel, rng: np.random.Generator) -> np.ndarray:
    """Draw the device activation vector; devices are independent given S."""
    probs = activation_probs(state, model)
    return (rng.random(model.num_devices) < probs).astype(np.int8)


def emission_likelihood(obs, state, model: ActivationModel) -> float:
    """Pr(W = obs | S = state): product of per-device Bernoulli terms."""
    obs = np.asarray(obs)
    if obs.shape != (model.num_devices,):
        raise ConfigError(
            f"observation has shape {obs.shape}, expected ({model.num_devices},)"
        )
    probs = activation_probs(state, model)
    return float(np.prod(np.where(obs == 1, probs, 1.0 - probs)))


def generate_history(model: ActivationModel, slots: int, rng_events, rng_activations):
    """Simulate `slots` slots; events advance first, then activations sample.

    Returns (events, activations, probs) with shapes (T,K), (T,D), (T,D);
    probs[t] are the exact activation probabilities under events[t].
    """
    state = model.sample_initial_events(rng_events)
    events = np.empty((slots, model.num_events), dtype=np.int8)
    acts = np.empty((slots, model.num_devices), dtype=np.int8)
    probs = np.empty((slots, model.num_devices), dtype=float)
    for t in range(slots):
        if t > 0:
            state = step_events(state, model, rng_events)
        events[t] = state
        probs[t] = activation_probs(state, model)
        acts[t] = sample_activations(state, model, rng_activations)
    return events, acts, probs
