"""Exact hidden-Markov inference over the joint event state.

The 2^K joint states are materialized explicitly (guarded by K_MAX). The
filter keeps the posterior Pr(S(t) | W(1:t)) normalized each step and folds
the normalizer into a running log-scale, so the joint Pr(S(t), W(1:t)) is
recoverable as weights * exp(log_scale) without underflowing on long runs.

State indexing: joint state s is an integer in [0, 2^K); chain k occupies
bit position k counted from the most significant end, so bits(s)[k] ==
(s >> (K-1-k)) & 1 and the all-off state is index 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InconsistentObservation
from .traffic import ActivationModel

K_MAX = 12


@dataclass
class Belief:
    """Normalized weights over the 2^K joint states plus the carried scale."""

    weights: np.ndarray
    log_scale: float = 0.0


@dataclass
class FaPrediction:
    """Next-slot activation probabilities and the MAP state they condition on."""

    probs: np.ndarray
    map_state: np.ndarray


def state_bits(num_events: int) -> np.ndarray:
    """(2^K, K) table of joint-state bit vectors in index order."""
    if num_events > K_MAX:
        raise ConfigError(f"K={num_events} exceeds the joint-state guard K_MAX={K_MAX}")
    idx = np.arange(2**num_events)
    shifts = num_events - 1 - np.arange(num_events)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)


def joint_activation_probs(model: ActivationModel) -> np.ndarray:
    """(2^K, D) matrix of q_d(s) for every joint state s."""
    bits = state_bits(model.num_events)
    factors = (1.0 - model.influence)[None, :, :] ** bits[:, None, :]
    return 1.0 - np.prod(factors, axis=2)


def initial_belief(model: ActivationModel) -> Belief:
    """Product of per-chain stationary distributions (model gives no better prior)."""
    pi_on = model.stationary_event_probs()
    bits = state_bits(model.num_events)
    w = np.prod(np.where(bits == 1, pi_on[None, :], 1.0 - pi_on[None, :]), axis=1)
    return Belief(weights=w, log_scale=0.0)


def _propagate(weights: np.ndarray, model: ActivationModel) -> np.ndarray:
    """One-slot prior: apply each chain's 2x2 transition along its own axis."""
    k = model.num_events
    w = weights.reshape((2,) * k)
    for chain in model.chains:
        # tensordot consumes the leading axis and appends the result axis,
        # so after K passes the axes are back in chain order.
        w = np.tensordot(w, chain.transition_matrix(), axes=([0], [0]))
    return w.reshape(-1)


def forward_step(belief: Belief, obs, model: ActivationModel) -> Belief:
    """Fold one observed activation vector into the belief."""
    if belief.weights.shape != (2**model.num_events,):
        raise ConfigError(
            f"belief has {belief.weights.shape[0]} weights, expected {2**model.num_events}"
        )
    obs = np.asarray(obs)
    if obs.shape != (model.num_devices,):
        raise ConfigError(
            f"observation has shape {obs.shape}, expected ({model.num_devices},)"
        )
    prior = _propagate(belief.weights, model)
    q = joint_activation_probs(model)
    likelihood = np.prod(np.where(obs[None, :] == 1, q, 1.0 - q), axis=1)
    posterior = prior * likelihood
    norm = posterior.sum()
    if norm <= 0.0:
        raise InconsistentObservation(
            "observed activation vector is impossible under the model"
        )
    return Belief(weights=posterior / norm, log_scale=belief.log_scale + np.log(norm))


def map_state(belief: Belief) -> np.ndarray:
    """Argmax-weight joint state; ties resolve to the lowest state index."""
    k = int(np.log2(belief.weights.shape[0]) + 0.5)
    return state_bits(k)[int(np.argmax(belief.weights))]


def predict_next(belief: Belief, model: ActivationModel, marginalize: bool = False) -> FaPrediction:
    """Next-slot activation probabilities.

    Default follows the MAP recipe: take the argmax state S*, then combine
    each chain's one-step transition with its influence,

        c_k = 1 - eps_on_k * p_dk         if S*_k = 0
        c_k = 1 - (1 - eps_off_k) * p_dk  if S*_k = 1
        Y~_d = 1 - prod_k c_k.

    marginalize=True averages over the full propagated belief instead of
    conditioning on S* (statistically tighter, off by default).
    """
    s_star = map_state(belief)
    if marginalize:
        prior = _propagate(belief.weights, model)
        probs = prior @ joint_activation_probs(model)
        return FaPrediction(probs=probs, map_state=s_star)
    eps_on = np.array([c.eps_on for c in model.chains])
    eps_off = np.array([c.eps_off for c in model.chains])
    p_on_next = np.where(s_star == 1, 1.0 - eps_off, eps_on)  # Pr(S_k(t+1)=1 | S*_k)
    factors = 1.0 - p_on_next[None, :] * model.influence
    probs = 1.0 - np.prod(factors, axis=1)
    return FaPrediction(probs=probs, map_state=s_star)


@dataclass
class FaRun:
    """Filter outputs over a history: predictions[t] targets slot t."""

    predictions: np.ndarray  # (T, D); row 0 comes from the prior alone
    map_states: np.ndarray  # (T, K) MAP state after observing slot t
    log_likelihood: float


def forward_filter(model: ActivationModel, observations, marginalize: bool = False) -> FaRun:
    """Run the filter over a (T, D) activation history.

    predictions[t] is the activation-probability forecast for slot t made
    from observations 0..t-1 (row 0 uses the stationary prior), i.e. each
    row is what the scheduler would have had in hand entering that slot.
    """
    observations = np.asarray(observations)
    slots = observations.shape[0]
    belief = initial_belief(model)
    preds = np.empty((slots, model.num_devices))
    states = np.empty((slots, model.num_events), dtype=np.int8)
    preds[0] = predict_next(belief, model, marginalize).probs
    for t in range(slots):
        belief = forward_step(belief, observations[t], model)
        states[t] = map_state(belief)
        if t + 1 < slots:
            preds[t + 1] = predict_next(belief, model, marginalize).probs
    return FaRun(predictions=preds, map_states=states, log_likelihood=belief.log_scale)


def fa_mse_per_slot(predicted, truth) -> np.ndarray:
    """Per-slot mean over devices of squared prediction error."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ConfigError(
            f"prediction/truth shapes differ: {predicted.shape} vs {truth.shape}"
        )
    return np.mean((truth - predicted) ** 2, axis=-1)


def fa_mse(predicted, truth) -> float:
    """Mean over slots of the per-slot device-averaged squared error."""
    return float(np.mean(fa_mse_per_slot(predicted, truth)))
