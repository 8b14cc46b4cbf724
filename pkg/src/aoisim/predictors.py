"""Traffic-predictor adapters feeding the environment state.

Each adapter exposes the same tiny protocol the environment drives:

    reset()                      fresh episode
    prime() -> (D,) vector       prediction before any observation
    observe_and_predict(w)       fold the slot's realized activations in,
                                 return the forecast for the next slot

The forward-algorithm adapter emits activation probabilities, the LSTM
adapter emits thresholded binaries (its native output); the genie is not an
adapter at all -- the environment copies the realized truth straight into
the state when no predictor is attached.
"""

import numpy as np

from . import forward
from .nn import Network
from .traffic import ActivationModel


class ForwardPredictor:
    """Exact HMM filter over the joint event state."""

    def __init__(self, model: ActivationModel, marginalize: bool = False):
        self.model = model
        self.marginalize = marginalize
        self.belief = None

    def reset(self):
        self.belief = forward.initial_belief(self.model)

    def prime(self):
        return forward.predict_next(self.belief, self.model, self.marginalize).probs

    def observe_and_predict(self, observed):
        self.belief = forward.forward_step(self.belief, observed, self.model)
        return forward.predict_next(self.belief, self.model, self.marginalize).probs


class LstmPredictor:
    """Frozen LSTM over a sliding window of observed activations."""

    def __init__(self, net: Network, window: int, num_devices: int):
        self.net = net
        self.window = window
        self.num_devices = num_devices
        self.history = None

    def reset(self):
        # cold start: all-silent padding until real observations arrive
        self.history = np.zeros((self.window, self.num_devices))

    def prime(self):
        return self._predict()

    def observe_and_predict(self, observed):
        self.history = np.roll(self.history, -1, axis=0)
        self.history[-1] = observed
        return self._predict()

    def _predict(self):
        probs = self.net.forward(self.history[None, :, :])[0]
        return (probs >= 0.5).astype(float)  # ties predict active


def make_predictor(kind: str, model: ActivationModel, lstm_net=None, window: int = 32):
    """None means genie: the environment substitutes the realized truth."""
    if kind == "genie":
        return None
    if kind == "fa":
        return ForwardPredictor(model)
    if kind == "lstm":
        if lstm_net is None:
            raise ValueError("lstm predictor needs a trained network")
        return LstmPredictor(lstm_net, window, model.num_devices)
    raise ValueError(f"unknown predictor kind {kind!r}")
