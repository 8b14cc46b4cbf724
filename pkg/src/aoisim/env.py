"""Grid-world multi-UAV environment: geometry, energy, AoI/regret/power.

Geometry. Positions live on an n x n lattice of points spaced cell_size
meters apart; the base station sits at the center lattice point, which is
the origin of the metric frame. Four charging depots occupy the corners.
A slot lasts tau = cell_size / uav_speed seconds, the time to traverse one
edge.

Energy. Each UAV carries battery_capacity joules discretized into
battery_quanta quanta. Per slot it pays ceil of (flight power * tau +
relay power * tau when it granted a device), expressed in quanta. Flight
power follows the rotary-wing model

    P(v) = P0 (1 + 3 v^2 / v_tip^2)
         + P1 (sqrt(1 + v^4 / (4 v0^4)) - v^2 / (2 v0^2))^(1/2)
         + 0.5 v^3 d0 rho mu0 Z

whose middle term is evaluated in the cancellation-safe form
1 / (sqrt(1+a) + sqrt(a)) with a = v^4 / (4 v0^4); the textbook form loses
every significant digit in double precision at the default v0 = 0.002 m/s.
A hovering (or boundary-clamped) UAV pays P(0), a moving one P(v_u).

Headroom Delta_u is the battery minus the quanta needed to fly the
Manhattan path to the nearest depot; a training episode ends when any
UAV's headroom reaches zero. Long-horizon evaluation instead sends the
drained UAV to the nearest depot and refills it over a fixed dwell.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from . import traffic
from .traffic import ActivationModel

MOVES = ("north", "south", "east", "west", "hover")
_MOVE_DELTAS = ((0, 1), (0, -1), (1, 0), (-1, 0), (0, 0))


@dataclass(frozen=True)
class WorldConfig:
    """Physical constants and scenario geometry (defaults from the UAV model)."""

    grid_cells: int = 11  # lattice points per side
    cell_size: float = 100.0  # m between adjacent lattice points
    bs_height: float = 15.0  # m
    uav_height: float = 100.0  # m
    uav_speed: float = 25.0  # m/s
    g0_db: float = 30.0  # channel gain at 1 m, dB
    noise_power: float = 1e-13  # W (-100 dBm)
    bandwidth: float = 1e6  # Hz
    packet_bits: float = 5e6  # bits per update
    battery_capacity: float = 10000.0  # J
    battery_quanta: int = 200
    p0: float = 99.66  # blade profile power, W
    p1: float = 120.16  # induced power at hover, W
    v_tip: float = 120.0  # m/s
    v0: float = 0.002  # mean rotor induced velocity at hover, m/s
    d0: float = 0.48  # fuselage drag ratio
    rho: float = 1.225  # air density, kg/m^3
    mu0: float = 1e-4  # rotor solidity
    z_rotor: float = 0.5  # rotor disk area term
    aoi_cap: int = 50
    zeta1: float = 25.0  # weight on normalized transmit power
    zeta2: float = 500.0  # weight on regret
    device_cells: tuple = ()  # D lattice coordinates (ix, iy)
    num_uavs: int = 2
    normalize_power: bool = True  # reward uses P_d / P_ref instead of raw watts
    aoi_reset_requires_activity: bool = False  # True: only a delivered update resets
    recharge_dwell: int = 10  # evaluation-mode slots docked at a depot

    def __post_init__(self):
        if self.grid_cells < 2:
            raise ConfigError("grid needs at least 2 points per side")
        for name in ("cell_size", "uav_speed", "bandwidth", "packet_bits",
                     "battery_capacity", "noise_power"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.aoi_cap < 1:
            raise ConfigError("aoi_cap must be >= 1")
        if self.battery_quanta < 1:
            raise ConfigError("battery_quanta must be >= 1")
        if self.num_uavs < 1:
            raise ConfigError("need at least one UAV")
        for ix, iy in self.device_cells:
            if not (0 <= ix < self.grid_cells and 0 <= iy < self.grid_cells):
                raise ConfigError(f"device cell ({ix},{iy}) is off the grid")

    @property
    def num_devices(self) -> int:
        return len(self.device_cells)

    @property
    def slot_seconds(self) -> float:
        return self.cell_size / self.uav_speed

    @property
    def g0(self) -> float:
        return 10.0 ** (self.g0_db / 10.0)

    @property
    def rate_factor(self) -> float:
        """2^(M/B) - 1, the SNR needed to carry one update in one slot."""
        return 2.0 ** (self.packet_bits / self.bandwidth) - 1.0

    @property
    def quanta_per_joule(self) -> float:
        return self.battery_quanta / self.battery_capacity

    def cell_to_meters(self, cell) -> np.ndarray:
        """Lattice coordinates -> metric frame centered on the BS."""
        half = (self.grid_cells - 1) / 2.0
        return np.array([(cell[0] - half) * self.cell_size,
                         (cell[1] - half) * self.cell_size])

    def depot_cells(self):
        n = self.grid_cells - 1
        return ((0, 0), (0, n), (n, 0), (n, n))

    def device_positions(self) -> np.ndarray:
        return np.array([self.cell_to_meters(c) for c in self.device_cells])

    def max_device_distance(self) -> float:
        """Largest possible UAV-device horizontal distance (grid diagonal)."""
        return math.sqrt(2.0) * (self.grid_cells - 1) * self.cell_size

    def reference_power(self) -> float:
        """Transmit power at the maximum grid distance; P_hat = P_d / this."""
        return device_tx_power_at(self.max_device_distance(), self)


@dataclass
class UavState:
    position: tuple  # lattice (ix, iy)
    energy: int  # quanta
    delta: int  # energy minus quanta to reach the nearest depot
    # evaluation-mode recharge bookkeeping
    returning: bool = False
    dwell_left: int = 0


@dataclass
class EnvState:
    uavs: list
    aoi: np.ndarray  # (D,) ints in [1, aoi_cap]
    event_state: np.ndarray  # (K,) hidden truth
    activity: np.ndarray  # (D,) truth the current slot's grants face
    predicted: np.ndarray  # (D,) predictor output aligned with `activity`
    slot: int = 0


@dataclass(frozen=True)
class JointAction:
    """Per-UAV move index (into MOVES) and grant (device index, or D = idle)."""

    moves: tuple
    grants: tuple


@dataclass
class SlotRecord:
    slot: int
    positions: list
    energies: list
    deltas: list
    grants: list  # effective grants after conflict resolution (D = idle)
    activity: np.ndarray
    regret: int
    mean_aoi: float
    mean_power: float  # device-averaged normalized (or raw) transmit power
    reward: float


# -- physics ------------------------------------------------------------------

def channel_gain_to_bs(position_m, cfg: WorldConfig) -> float:
    """Line-of-sight gain between a UAV at `position_m` and the BS."""
    dist_sq = (cfg.uav_height - cfg.bs_height) ** 2 + float(np.dot(position_m, position_m))
    return cfg.g0 / dist_sq


def device_tx_power_at(horizontal_dist: float, cfg: WorldConfig) -> float:
    """Watts a device needs to reach a UAV `horizontal_dist` meters away."""
    return (cfg.rate_factor * cfg.noise_power / cfg.g0
            * (horizontal_dist**2 + cfg.uav_height**2))


def device_tx_power(device: int, uav_position_m, cfg: WorldConfig) -> float:
    dist = float(np.linalg.norm(cfg.device_positions()[device] - uav_position_m))
    return device_tx_power_at(dist, cfg)


def flight_power(v: float, cfg: WorldConfig) -> float:
    """Rotary-wing propulsion power at horizontal speed v (W)."""
    if v < 0:
        raise ConfigError("speed must be >= 0")
    blade = cfg.p0 * (1.0 + 3.0 * v**2 / cfg.v_tip**2)
    a = v**4 / (4.0 * cfg.v0**4)
    # sqrt(1+a) - sqrt(a) == 1/(sqrt(1+a)+sqrt(a)): no cancellation for huge a.
    induced = cfg.p1 * math.sqrt(1.0 / (math.sqrt(1.0 + a) + math.sqrt(a)))
    parasite = 0.5 * v**3 * cfg.d0 * cfg.rho * cfg.mu0 * cfg.z_rotor
    return blade + induced + parasite


def flight_power_naive_middle_term(v: float, cfg: WorldConfig) -> float:
    """The induced term exactly as written; kept for the regression test."""
    a = v**4 / (4.0 * cfg.v0**4)
    return cfg.p1 * (math.sqrt(1.0 + a) - v**2 / (2.0 * cfg.v0**2)) ** 0.5


def move_cost_quanta(cfg: WorldConfig) -> int:
    """Quanta to traverse one edge at cruise speed (10 under the defaults)."""
    return math.ceil(cfg.quanta_per_joule * flight_power(cfg.uav_speed, cfg) * cfg.slot_seconds)


def step_energy(position_m, scheduled: bool, moved: bool, cfg: WorldConfig) -> int:
    """Quanta drained this slot: flight always, BS relaying when scheduled."""
    speed = cfg.uav_speed if moved else 0.0
    e_flight = cfg.quanta_per_joule * flight_power(speed, cfg) * cfg.slot_seconds
    if not scheduled:
        return math.ceil(e_flight)
    relay_w = cfg.noise_power / channel_gain_to_bs(position_m, cfg) * cfg.rate_factor
    e_relay = cfg.quanta_per_joule * relay_w * cfg.slot_seconds
    return math.ceil(e_flight + e_relay)


def nearest_depot_steps(cell, cfg: WorldConfig) -> int:
    """Manhattan lattice steps from `cell` to the closest charging depot."""
    return min(abs(cell[0] - dx) + abs(cell[1] - dy) for dx, dy in cfg.depot_cells())


def return_cost(cell, cfg: WorldConfig) -> int:
    return move_cost_quanta(cfg) * nearest_depot_steps(cell, cfg)


def headroom(energy: int, cell, cfg: WorldConfig) -> int:
    return energy - return_cost(cell, cfg)


# -- per-slot bookkeeping ------------------------------------------------------

def apply_move(cell, move: int, cfg: WorldConfig):
    """New lattice cell and whether the UAV actually traveled.

    Off-grid moves clamp: the UAV stays put and pays hover-level energy.
    """
    dx, dy = _MOVE_DELTAS[move]
    nx = min(max(cell[0] + dx, 0), cfg.grid_cells - 1)
    ny = min(max(cell[1] + dy, 0), cfg.grid_cells - 1)
    new = (nx, ny)
    return new, new != tuple(cell)


def resolve_conflicts(grants, num_devices: int):
    """Lowest-index UAV keeps a doubly-granted device; losers fall to idle."""
    taken = set()
    effective = []
    for g in grants:
        if g != num_devices and g in taken:
            effective.append(num_devices)
        else:
            if g != num_devices:
                taken.add(g)
            effective.append(g)
    return tuple(effective)


def update_aoi(aoi, granted_mask, activity, cfg: WorldConfig) -> np.ndarray:
    """Serve or age each device: granted -> 1, otherwise min(cap, A+1).

    A grant resets the age regardless of prior value. With
    aoi_reset_requires_activity the stricter reading applies: only a grant
    to a device that actually had an update to deliver resets.
    """
    if cfg.aoi_reset_requires_activity:
        served = granted_mask & (np.asarray(activity) == 1)
    else:
        served = granted_mask
    aged = np.minimum(cfg.aoi_cap, aoi + 1)
    return np.where(served, 1, aged).astype(aoi.dtype)


def regret(granted_mask, activity) -> int:
    """min(granted-but-silent, active-but-unserved) for one slot."""
    activity = np.asarray(activity).astype(bool)
    granted_mask = np.asarray(granted_mask).astype(bool)
    wrongly_granted = int(np.sum(granted_mask & ~activity))
    missed = int(np.sum(activity & ~granted_mask))
    return min(wrongly_granted, missed)


def slot_power_vector(effective_grants, uav_positions_m, cfg: WorldConfig) -> np.ndarray:
    """Per-device transmit power for this slot; zeros for ungranted devices."""
    power = np.zeros(cfg.num_devices)
    for u, g in enumerate(effective_grants):
        if g != cfg.num_devices:
            power[g] = device_tx_power(g, uav_positions_m[u], cfg)
    if cfg.normalize_power:
        power /= cfg.reference_power()
    return power


def slot_reward(aoi_after, power_vec, slot_regret: int, cfg: WorldConfig) -> float:
    """-(mean over devices of A_d + zeta1 * P_d) - zeta2 * regret."""
    return float(-np.mean(aoi_after + cfg.zeta1 * power_vec) - cfg.zeta2 * slot_regret)


# -- the environment -----------------------------------------------------------

class UavGridEnv:
    """Slotted multi-UAV MDP over the Markov-event traffic model.

    The traffic for the upcoming slot (event state, realized activations,
    predictor output) is drawn at the end of the previous step, so the
    state an agent acts on already carries the ground truth its grants
    will be judged against -- hidden from the learner, exposed verbatim to
    the genie. mode="train" terminates when any UAV's headroom runs out;
    mode="eval" never terminates and instead autopilots drained UAVs to
    the nearest depot, where they dock for `recharge_dwell` slots and
    refill.
    """

    def __init__(self, cfg: WorldConfig, model: ActivationModel, predictor=None,
                 mode: str = "train"):
        if model.num_devices != cfg.num_devices:
            raise ConfigError(
                f"traffic model has {model.num_devices} devices, world has {cfg.num_devices}"
            )
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        self.cfg = cfg
        self.model = model
        self.predictor = predictor  # None -> genie: state.predicted == truth
        self.mode = mode
        self.state = None
        self.terminal = True
        self._rng_events = None
        self._rng_activity = None

    def reset(self, rng_events, rng_activity) -> EnvState:
        cfg = self.cfg
        self._rng_events = rng_events
        self._rng_activity = rng_activity
        depots = cfg.depot_cells()
        uavs = []
        for u in range(cfg.num_uavs):
            cell = depots[u % len(depots)]
            uavs.append(UavState(position=cell, energy=cfg.battery_quanta,
                                 delta=headroom(cfg.battery_quanta, cell, cfg)))
        events = self.model.sample_initial_events(rng_events)
        activity = traffic.sample_activations(events, self.model, rng_activity)
        if self.predictor is None:
            predicted = activity.astype(float)
        else:
            self.predictor.reset()
            predicted = self.predictor.prime()
        self.state = EnvState(
            uavs=uavs,
            aoi=np.ones(cfg.num_devices, dtype=np.int64),
            event_state=events,
            activity=activity,
            predicted=np.asarray(predicted, dtype=float),
            slot=0,
        )
        self.terminal = False
        return self.state

    def step(self, action: JointAction):
        """Advance one slot; returns (state, reward, terminal, SlotRecord)."""
        if self.terminal:
            raise ConfigError("step() called on a terminal environment")
        cfg = self.cfg
        state = self.state
        if len(action.moves) != cfg.num_uavs or len(action.grants) != cfg.num_uavs:
            raise ConfigError("action arity does not match the number of UAVs")

        moves = list(action.moves)
        grants = list(action.grants)
        for u, uav in enumerate(state.uavs):
            if not 0 <= moves[u] < len(MOVES):
                raise ConfigError(f"bad move index {moves[u]}")
            if not 0 <= grants[u] <= cfg.num_devices:
                raise ConfigError(f"bad grant {grants[u]}")
            if self.mode == "eval" and (uav.returning or uav.dwell_left > 0):
                # recharging UAVs neither steer nor grant
                moves[u] = self._autopilot_move(uav)
                grants[u] = cfg.num_devices

        # movement + energy (attempted grants pay relay energy even if a
        # conflict later voids them: the radio was committed)
        positions_m = []
        for u, uav in enumerate(state.uavs):
            docked = self.mode == "eval" and uav.dwell_left > 0
            new_cell, moved = apply_move(uav.position, moves[u], cfg)
            uav.position = new_cell
            pos_m = cfg.cell_to_meters(new_cell)
            positions_m.append(pos_m)
            if not docked:
                cost = step_energy(pos_m, grants[u] != cfg.num_devices, moved, cfg)
                uav.energy = max(0, uav.energy - cost)

        effective = resolve_conflicts(tuple(grants), cfg.num_devices)
        granted_mask = np.zeros(cfg.num_devices, dtype=bool)
        for g in effective:
            if g != cfg.num_devices:
                granted_mask[g] = True

        state.aoi = update_aoi(state.aoi, granted_mask, state.activity, cfg)
        slot_regret = regret(granted_mask, state.activity)
        power_vec = slot_power_vector(effective, positions_m, cfg)
        reward = slot_reward(state.aoi, power_vec, slot_regret, cfg)

        for uav in state.uavs:
            uav.delta = headroom(uav.energy, uav.position, cfg)
        if self.mode == "train":
            self.terminal = any(uav.delta <= 0 for uav in state.uavs)
        else:
            self._update_recharge_status()

        record = SlotRecord(
            slot=state.slot,
            positions=[uav.position for uav in state.uavs],
            energies=[uav.energy for uav in state.uavs],
            deltas=[uav.delta for uav in state.uavs],
            grants=list(effective),
            activity=state.activity.copy(),
            regret=slot_regret,
            mean_aoi=float(np.mean(state.aoi)),
            mean_power=float(np.mean(power_vec)),
            reward=reward,
        )

        # draw the next slot's truth and the prediction aligned with it
        observed = state.activity
        state.event_state = traffic.step_events(state.event_state, self.model,
                                                self._rng_events)
        state.activity = traffic.sample_activations(state.event_state, self.model,
                                                    self._rng_activity)
        if self.predictor is None:
            state.predicted = state.activity.astype(float)
        else:
            state.predicted = np.asarray(
                self.predictor.observe_and_predict(observed), dtype=float)
        state.slot += 1
        return state, reward, self.terminal, record

    # -- evaluation-mode recharging ------------------------------------------

    def _autopilot_move(self, uav: UavState) -> int:
        """Deterministic Manhattan walk to the nearest depot (x leg first)."""
        if uav.dwell_left > 0:
            return MOVES.index("hover")
        depots = self.cfg.depot_cells()
        target = min(depots, key=lambda d: (abs(uav.position[0] - d[0])
                                            + abs(uav.position[1] - d[1]), d))
        if uav.position[0] < target[0]:
            return MOVES.index("east")
        if uav.position[0] > target[0]:
            return MOVES.index("west")
        if uav.position[1] < target[1]:
            return MOVES.index("north")
        if uav.position[1] > target[1]:
            return MOVES.index("south")
        return MOVES.index("hover")

    def _update_recharge_status(self):
        for uav in self.state.uavs:
            if uav.dwell_left > 0:
                uav.dwell_left -= 1
                if uav.dwell_left == 0:
                    uav.energy = self.cfg.battery_quanta
                    uav.delta = headroom(uav.energy, uav.position, self.cfg)
                continue
            if uav.returning:
                if uav.position in self.cfg.depot_cells():
                    uav.returning = False
                    uav.dwell_left = self.cfg.recharge_dwell
            elif uav.delta <= 0:
                uav.returning = True
