"""aoisim: traffic-predictive multi-UAV scheduling simulator.

Markov-event IoT traffic, exact forward-algorithm and from-scratch LSTM
traffic predictors, a slotted multi-UAV grid-world MDP with age-of-
information / regret / transmit-power accounting, DQN trajectory and grant
optimization, and an outer search over the reward weights. Everything is
seedable and bit-reproducible.
"""

__version__ = "0.1.0"

from .traffic import ActivationModel, EventChain
from .env import JointAction, UavGridEnv, WorldConfig
from .errors import AoisimError, ConfigError, DependencyError, NumericalFault

__all__ = [
    "ActivationModel",
    "EventChain",
    "JointAction",
    "UavGridEnv",
    "WorldConfig",
    "AoisimError",
    "ConfigError",
    "DependencyError",
    "NumericalFault",
    "__version__",
]
