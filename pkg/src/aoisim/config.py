"""Experiment configuration: YAML schema, defaults and scenario presets.

One config file drives every subcommand. Validation is strict -- unknown
keys are rejected so a typo cannot silently fall back to a default. All
physics defaults mirror the UAV model table; presets only fill the
scenario section (grid, devices, event chains, influence matrix) and stay
fully overridable.
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from .env import WorldConfig
from .errors import ConfigError
from .traffic import ActivationModel, EventChain


# -- scenario presets ----------------------------------------------------------

def _block_influence(num_devices, blocks, p_main):
    """Each device listens to exactly one event; blocks list device counts."""
    influence = np.zeros((num_devices, len(blocks)))
    start = 0
    for k, size in enumerate(blocks):
        influence[start : start + size, k] = p_main
        start += size
    assert start == num_devices
    return influence


def _preset_markov10():
    # three balanced, slow chains driving disjoint device blocks: strongly
    # identifiable emissions, so the filter locks on within a few slots
    return {
        "grid_cells": 11,
        "num_uavs": 2,
        "devices": [[1, 1], [3, 2], [5, 1], [7, 2], [9, 1],
                    [1, 5], [3, 7], [5, 9], [7, 7], [9, 5]],
        "events": [{"eps_on": 0.005, "eps_off": 0.005}] * 3,
        "influence": _block_influence(10, (4, 3, 3), 0.9).tolist(),
    }


def _preset_markov7():
    return {
        "grid_cells": 11,
        "num_uavs": 2,
        "devices": [[2, 2], [5, 2], [8, 2], [2, 8], [5, 8], [8, 8], [5, 5]],
        "events": [{"eps_on": 0.005, "eps_off": 0.005}] * 2,
        "influence": _block_influence(7, (4, 3), 0.9).tolist(),
    }


def _preset_deskscale():
    # small world for fast DQN runs: 6x6 lattice, five devices, two chains
    # that flip every handful of slots so short evaluations mix event
    # states; stationary-on 0.3 keeps the typical active count below the
    # two-UAV grant budget, leaving surplus grants for stale devices
    return {
        "grid_cells": 6,
        "num_uavs": 2,
        "devices": [[1, 1], [4, 1], [2, 3], [1, 4], [4, 4]],
        "events": [{"eps_on": 0.03, "eps_off": 0.07}] * 2,
        "influence": _block_influence(5, (3, 2), 0.9).tolist(),
    }


def _preset_hotspot():
    # high-activity region at the bottom of the map: its event turns on
    # easily, lingers, and activates its devices almost surely
    bottom = [[1, 1], [3, 0], [5, 1], [7, 0], [9, 1]]
    upper = [[1, 7], [3, 9], [5, 7], [7, 9], [9, 7]]
    influence = np.zeros((10, 2))
    influence[:5, 0] = 0.95
    influence[5:, 1] = 0.5
    return {
        "grid_cells": 11,
        "num_uavs": 2,
        "devices": bottom + upper,
        "events": [
            {"eps_on": 0.2, "eps_off": 0.02},
            {"eps_on": 0.05, "eps_off": 0.05},
        ],
        "influence": influence.tolist(),
    }


SCENARIO_PRESETS = {
    "markov10": _preset_markov10,
    "markov7": _preset_markov7,
    "deskscale": _preset_deskscale,
    "hotspot": _preset_hotspot,
}


# -- schema ---------------------------------------------------------------------

_WORLD_KEYS = {
    "cell_size": float, "bs_height": float, "uav_height": float,
    "uav_speed": float, "g0_db": float, "noise_power": float,
    "bandwidth": float, "packet_bits": float, "battery_capacity": float,
    "battery_quanta": int, "p0": float, "p1": float, "v_tip": float,
    "v0": float, "d0": float, "rho": float, "mu0": float, "z_rotor": float,
    "aoi_cap": int, "zeta1": float, "zeta2": float,
    "normalize_power": bool, "aoi_reset_requires_activity": bool,
    "recharge_dwell": int,
}

_SCHEMA = {
    "seed": int,
    "scenario": {
        "preset": str,
        "grid_cells": int,
        "num_uavs": int,
        "devices": list,
        "events": list,
        "influence": list,
    },
    "world": _WORLD_KEYS,
    "traffic": {"slots": int},
    "predictor": {
        "kind": str,
        "window": int,
        "marginalize": bool,
        "lstm": {
            "hidden": list, "epochs": int, "lr": float, "batch_size": int,
            "train_fraction": float, "patience": int, "dtype": str,
        },
    },
    "agent": {
        "episodes": int, "gamma": float, "lr": float,
        "epsilon_start": float, "epsilon_decay": float, "epsilon_floor": float,
        "target_period": int, "batch_size": int, "hidden": list,
        "buffer_capacity": int, "eval_slots": int, "eval_seeds": list,
        "dtype": str,
    },
    "meta": {
        "mode": str, "zeta1_grid": list, "zeta2_grid": list,
        "episodes": int, "seeds": list, "inner_episodes": int,
        "inner_eval_slots": int,
    },
    "compare": {
        "policies": list,
        "dqn_checkpoints": dict,
        "lstm_checkpoint": str,
    },
}

_DEFAULTS = {
    "seed": 0,
    "scenario": {"preset": "deskscale"},
    "world": {},
    "traffic": {"slots": 10000},
    "predictor": {
        "kind": "fa",
        "window": 32,
        "marginalize": False,
        "lstm": {
            "hidden": [64, 128, 64], "epochs": 20, "lr": 1e-3,
            "batch_size": 128, "train_fraction": 0.8, "patience": 0,
            "dtype": "float64",
        },
    },
    "agent": {
        "episodes": 2000, "gamma": 0.99, "lr": 0.0004,
        "epsilon_start": 1.0, "epsilon_decay": 0.995, "epsilon_floor": 0.01,
        "target_period": 1000, "batch_size": 64,
        "hidden": [64, 128, 128, 64], "buffer_capacity": 100000,
        "eval_slots": 1000, "eval_seeds": [0, 1, 2], "dtype": "float64",
    },
    "meta": {
        "mode": "sweep", "zeta1_grid": [0.0, 25.0, 50.0, 100.0],
        "zeta2_grid": [0.0, 500.0, 1000.0], "episodes": 0, "seeds": [0],
        "inner_episodes": 0, "inner_eval_slots": 0,
    },
    "compare": {"policies": ["rw"], "dqn_checkpoints": {}, "lstm_checkpoint": ""},
}


def _check_keys(data, schema, path):
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path}{key}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be a mapping")
            _check_keys(value, sub, f"{path}{key}.")


def _merge(defaults, overrides):
    out = {}
    for key, value in defaults.items():
        if isinstance(value, dict):
            out[key] = _merge(value, overrides.get(key, {}) or {})
        else:
            out[key] = overrides.get(key, value)
    for key, value in overrides.items():
        if key not in out:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Validated, fully-resolved experiment description."""

    raw: dict
    seed: int
    world: WorldConfig
    model: ActivationModel
    traffic_slots: int
    predictor: dict
    agent: dict
    meta: dict
    compare: dict


def resolve(data: dict) -> ExperimentConfig:
    """Validate a raw config mapping and build the concrete objects."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(data, _SCHEMA, "")
    cfg = _merge(_DEFAULTS, data)

    scenario = dict(cfg["scenario"])
    preset_name = scenario.pop("preset", None)
    if preset_name:
        if preset_name not in SCENARIO_PRESETS:
            raise ConfigError(
                f"unknown scenario preset {preset_name!r}; "
                f"available: {', '.join(sorted(SCENARIO_PRESETS))}"
            )
        base = SCENARIO_PRESETS[preset_name]()
        base.update(scenario)
        scenario = base
    for required in ("grid_cells", "devices", "events", "influence"):
        if required not in scenario:
            raise ConfigError(f"scenario.{required} missing (and no preset named)")

    try:
        chains = [EventChain(float(e["eps_on"]), float(e["eps_off"]))
                  for e in scenario["events"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario.events: {exc}") from None
    model = ActivationModel(chains, scenario["influence"])

    device_cells = tuple((int(x), int(y)) for x, y in scenario["devices"])
    if model.num_devices != len(device_cells):
        raise ConfigError(
            f"influence matrix covers {model.num_devices} devices but "
            f"{len(device_cells)} device locations are given"
        )
    world = WorldConfig(
        grid_cells=int(scenario["grid_cells"]),
        num_uavs=int(scenario.get("num_uavs", 2)),
        device_cells=device_cells,
        **cfg["world"],
    )

    if cfg["predictor"]["kind"] not in ("fa", "lstm", "genie"):
        raise ConfigError(f"predictor.kind must be fa|lstm|genie, got {cfg['predictor']['kind']!r}")
    if cfg["traffic"]["slots"] < 1:
        raise ConfigError("traffic.slots must be positive")

    return ExperimentConfig(
        raw=cfg,
        seed=int(cfg["seed"]),
        world=world,
        model=model,
        traffic_slots=int(cfg["traffic"]["slots"]),
        predictor=cfg["predictor"],
        agent=cfg["agent"],
        meta=cfg["meta"],
        compare=cfg["compare"],
    )


def load(path, seed_override=None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    if seed_override is not None:
        data["seed"] = int(seed_override)
    return resolve(data)
