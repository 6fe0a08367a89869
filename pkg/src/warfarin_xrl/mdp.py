"""MDP primitives for maintenance dosing: observations, actions, reward, PTTR."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .pkpd import MAX_DOSE

THERAPEUTIC_RANGE = (2.0, 3.0)


@dataclass(frozen=True)
class Observation:
    inr_current: float
    inr_previous: float
    dose_previous: float
    duration_previous: float

    def __post_init__(self):
        if not (self.inr_current > 0 and self.inr_previous > 0):
            raise DomainError("INR values must be positive")
        if not 0.0 <= self.dose_previous <= MAX_DOSE:
            raise DomainError("previous dose outside [0, 15] mg")

    def as_array(self) -> np.ndarray:
        return np.array([self.inr_current, self.inr_previous, self.dose_previous, self.duration_previous])


@dataclass(frozen=True)
class FullState:
    observation: Observation
    age: float
    cyp2c9: str
    vkorc1: str


def default_percent_changes() -> tuple:
    return tuple(round(-1.0 + 0.1 * i, 2) for i in range(21))


@dataclass(frozen=True)
class ActionSpace:
    percent_changes: tuple = field(default_factory=default_percent_changes)
    duration: int = 7

    def __post_init__(self):
        pc = tuple(float(x) for x in self.percent_changes)
        object.__setattr__(self, "percent_changes", pc)
        if list(pc) != sorted(pc) or len(set(pc)) != len(pc):
            raise DomainError("percent changes must be strictly ascending")
        if 0.0 not in pc:
            raise DomainError("action space must contain the no-change action")
        if self.duration < 1:
            raise DomainError("duration must be at least one day")

    def __len__(self):
        return len(self.percent_changes)

    @property
    def values(self) -> np.ndarray:
        return np.array(self.percent_changes)

    @property
    def no_change_index(self) -> int:
        return self.percent_changes.index(0.0)

    def percent(self, index: int) -> float:
        if not 0 <= index < len(self):
            raise DomainError(f"action index {index} out of range [0, {len(self)})")
        return self.percent_changes[index]


@dataclass(frozen=True)
class RewardConfig:
    mid_inr: float = 2.5
    normalization: float = 4.0
    amplifier: float = 1.1
    clip_low: float | None = -30.0

    def __post_init__(self):
        if self.amplifier < 1.0:
            raise DomainError("amplifier must be >= 1")
        if self.normalization <= 0:
            raise DomainError("normalization must be positive")


def next_dose(prev_dose, percent):
    """``prev_dose * (1 + percent)`` clipped to [0, 15] mg; works on arrays."""
    dose = np.clip(np.multiply(prev_dose, 1.0 + np.asarray(percent, dtype=float)), 0.0, MAX_DOSE)
    return float(dose) if dose.ndim == 0 else dose


def reward(daily_inr, cfg: RewardConfig = RewardConfig()):
    """Negative weighted squared distance from the range midpoint.

    ``daily_inr`` is ``(days,)`` or ``(n, days)``; day ``t`` (1-based) has
    weight ``amplifier**t``.
    """
    inr = np.asarray(daily_inr, dtype=float)
    if inr.shape[-1] == 0:
        raise DomainError("reward needs at least one INR value")
    weights = cfg.amplifier ** np.arange(1, inr.shape[-1] + 1)
    r = -cfg.normalization * np.sum(weights * (cfg.mid_inr - inr) ** 2, axis=-1)
    if cfg.clip_low is not None:
        r = np.maximum(r, cfg.clip_low)
    return float(r) if np.ndim(r) == 0 else r


def in_range(inr, low: float = THERAPEUTIC_RANGE[0], high: float = THERAPEUTIC_RANGE[1]):
    inr = np.asarray(inr)
    return (inr >= low) & (inr <= high)


@dataclass
class DecisionRecord:
    day: int
    observation: Observation
    action_index: int  # -1 for decisions that are not indices into an ActionSpace
    percent_change: float | None
    dose: float
    duration: int
    reward: float
    true_inr: list
    measured_inr: list


@dataclass
class Trajectory:
    patient_id: int
    daily_dose: list
    daily_true_inr: list
    daily_measured_inr: list
    records: list = field(default_factory=list)
    baseline_inr: float = 1.0

    @property
    def horizon(self) -> int:
        return len(self.daily_true_inr)

    @property
    def pttr(self) -> float:
        return pttr(self)

    def to_csv(self, path: str | Path, metadata: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for key, value in (metadata or {}).items():
                fh.write(f"# {key}={value}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "dose_mg", "true_inr", "measured_inr"])
            for day, (d, t, m) in enumerate(zip(self.daily_dose, self.daily_true_inr, self.daily_measured_inr), 1):
                w.writerow([day, repr(float(d)), repr(float(t)), repr(float(m))])

    def to_json(self) -> str:
        payload = asdict(self)
        payload["pttr"] = self.pttr
        return json.dumps(payload, sort_keys=True)


def pttr(traj_or_inr, low: float = THERAPEUTIC_RANGE[0], high: float = THERAPEUTIC_RANGE[1]) -> float:
    """Fraction of simulated days whose true INR lies in ``[low, high]``."""
    inr = traj_or_inr.daily_true_inr if isinstance(traj_or_inr, Trajectory) else traj_or_inr
    inr = np.asarray(inr, dtype=float)
    return float(np.mean(in_range(inr, low, high)))
