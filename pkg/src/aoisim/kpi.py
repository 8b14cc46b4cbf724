"""Evaluation metrics computed from slot traces.

Every KPI is a pure function of the recorded trace: ergodic age is the time
average of the per-slot network-mean AoI, ergodic power the same for the
device-averaged (normalized) transmit power, and the accumulative series
are plain prefix sums. `compare` lines runs up side by side, median over
seeds, with deltas against a designated baseline.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class SlotTrace:
    """Per-slot series over one rollout; slot indices contiguous from 1."""

    slot: np.ndarray
    mean_aoi: np.ndarray
    mean_power: np.ndarray
    regret: np.ndarray
    reward: np.ndarray
    records: list = None  # full SlotRecords, kept for trace CSV export

    @classmethod
    def from_records(cls, records):
        return cls(
            slot=np.arange(1, len(records) + 1),
            mean_aoi=np.array([r.mean_aoi for r in records]),
            mean_power=np.array([r.mean_power for r in records]),
            regret=np.array([r.regret for r in records], dtype=float),
            reward=np.array([r.reward for r in records]),
            records=list(records),
        )

    def __len__(self):
        return len(self.slot)


@dataclass
class KpiRecord:
    ergodic_age: float
    ergodic_power: float
    accumulated_regret: float
    accumulated_reward: float
    slots: int

    def as_dict(self):
        return {
            "ergodic_age": self.ergodic_age,
            "ergodic_power": self.ergodic_power,
            "accumulated_regret": self.accumulated_regret,
            "accumulated_reward": self.accumulated_reward,
            "slots": self.slots,
        }


def _require_nonempty(trace: SlotTrace):
    if len(trace) == 0:
        raise ConfigError("empty trace")


def ergodic_age(trace: SlotTrace) -> float:
    """(1/T) sum_t (1/D) sum_d A_d(t)."""
    _require_nonempty(trace)
    return float(np.mean(trace.mean_aoi))


def ergodic_power(trace: SlotTrace) -> float:
    """Time average of the device-mean transmit power (0 for ungranted)."""
    _require_nonempty(trace)
    return float(np.mean(trace.mean_power))


def accumulative(trace: SlotTrace, which: str) -> np.ndarray:
    """Running sum of the regret or reward series."""
    if which == "regret":
        return np.cumsum(trace.regret)
    if which == "reward":
        return np.cumsum(trace.reward)
    raise ConfigError(f"unknown accumulative field {which!r}")


def kpis_from_trace(trace: SlotTrace) -> KpiRecord:
    _require_nonempty(trace)
    return KpiRecord(
        ergodic_age=ergodic_age(trace),
        ergodic_power=ergodic_power(trace),
        accumulated_regret=float(accumulative(trace, "regret")[-1]),
        accumulated_reward=float(accumulative(trace, "reward")[-1]),
        slots=len(trace),
    )


_METRICS = ("ergodic_age", "ergodic_power", "accumulated_regret", "accumulated_reward")


def compare(runs: dict, baseline: str) -> list:
    """Median KPIs per named run plus deltas against `baseline`.

    runs maps a name to a list of KpiRecords (one per seed); every record
    must cover the same horizon. Returns one row-dict per run.
    """
    if len(runs) < 2:
        raise ConfigError("compare needs at least two runs")
    if baseline not in runs:
        raise ConfigError(f"baseline {baseline!r} not among the runs")
    horizons = {rec.slots for records in runs.values() for rec in records}
    if len(horizons) != 1:
        raise ConfigError(f"runs cover different horizons: {sorted(horizons)}")

    medians = {
        name: {m: float(np.median([getattr(r, m) for r in records]))
               for m in _METRICS}
        for name, records in runs.items()
    }
    means = {
        name: {m: float(np.mean([getattr(r, m) for r in records]))
               for m in _METRICS}
        for name, records in runs.items()
    }
    table = []
    for name in runs:
        row = {"run": name, "seeds": len(runs[name])}
        for m in _METRICS:
            row[m] = medians[name][m]
            row[m + "_mean"] = means[name][m]
            row[m + "_vs_" + baseline] = medians[name][m] - medians[baseline][m]
        table.append(row)
    return table
