"""Lock-step maintenance-dosing environment over a batch of patients.

Calendar: the initial protocol (IWPC) covers days 1-4, maintenance decisions
fall on day 5 and every ``interval`` days after, and the last interval is
truncated at ``horizon``. The INR of day ``k`` is read at the end of that
day, so the decision on day ``k`` sees the reading of day ``k - 1``.

Observations carry measured INR; rewards and PTTR use true INR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .mdp import ActionSpace, DecisionRecord, Observation, RewardConfig, Trajectory, next_dose, reward
from .pkpd import PkPdEngine, PkPdParams
from .protocols import DosingPolicy, iwpc_initial_dose
from .rng import substream


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 90
    initial_days: int = 4
    interval: int = 7
    noise: bool = True
    seed: int = 0
    step_hours: float = 1.0

    def __post_init__(self):
        if self.horizon < 1 or self.interval < 1 or self.initial_days < 1:
            raise DomainError("horizon, interval and initial_days must be positive")
        if self.initial_days >= self.horizon:
            raise DomainError("initial dosing must end before the horizon")

    @property
    def decision_days(self) -> list:
        return list(range(self.initial_days + 1, self.horizon + 1, self.interval))


class DosingEnv:
    """Runs the same calendar for every patient in ``patients``.

    ``engine_factory(patients)`` may replace the PK/PD engine (any object
    with ``init_state``, ``true_inr``, ``measure`` and ``advance``).
    """

    def __init__(self, patients: Sequence, cfg: EnvConfig = EnvConfig(),
                 reward_cfg: RewardConfig = RewardConfig(), action_space: ActionSpace = ActionSpace(),
                 params: PkPdParams | None = None, engine_factory: Callable | None = None):
        if len(patients) == 0:
            raise DomainError("environment needs at least one patient")
        self.patients = list(patients)
        self.cfg = cfg
        self.reward_cfg = reward_cfg
        self.action_space = action_space
        self.n = len(self.patients)
        if engine_factory is None:
            self.engine = PkPdEngine(self.patients, params, noise=cfg.noise, step_hours=cfg.step_hours)
        else:
            self.engine = engine_factory(self.patients)
        h = cfg.horizon
        self._meas_z = np.empty((self.n, h + 1))
        self._dose_z = np.empty((self.n, h))
        for i, p in enumerate(self.patients):
            g = substream(cfg.seed, "measurement", p.id)
            self._meas_z[i] = g.standard_normal(h + 1)
            self._dose_z[i] = g.standard_normal(h)
        self.day = None

    # -- episode -------------------------------------------------------------

    def reset(self) -> np.ndarray:
        cfg = self.cfg
        self.state = self.engine.init_state()
        self.true_inr = np.empty((self.n, cfg.horizon))
        self.measured_inr = np.empty((self.n, cfg.horizon))
        self.daily_dose = np.empty((self.n, cfg.horizon))
        base_true = self.engine.true_inr(self.state)
        self.baseline_measured = self.engine.measure(base_true, self._meas_z[:, 0])
        initial = np.array([iwpc_initial_dose(p).dose for p in self.patients])
        self._apply(initial, np.full(self.n, np.nan), 1, cfg.initial_days)
        self.obs = np.column_stack([self.measured_inr[:, cfg.initial_days - 1], self.baseline_measured,
                                    initial, np.full(self.n, float(cfg.initial_days))])
        self.day = cfg.initial_days + 1
        self.done = False
        self._log = []
        return self.obs.copy()

    def _apply(self, dose, first_day_dose, start_day: int, days: int):
        schedule = np.repeat(np.asarray(dose, dtype=float)[:, None], days, axis=1)
        override = ~np.isnan(first_day_dose)
        schedule[override, 0] = first_day_dose[override]
        s, e = start_day - 1, start_day - 1 + days
        self.state, true, measured = self.engine.advance(
            self.state, schedule, days, self._dose_z[:, s:e], self._meas_z[:, start_day:start_day + days])
        self.true_inr[:, s:e] = true
        self.measured_inr[:, s:e] = measured
        self.daily_dose[:, s:e] = schedule
        return true, measured

    def step_doses(self, dose, first_day_dose=None, percent=None, action_index=None):
        """Apply one maintenance decision per patient; returns ``(obs, rewards, done)``."""
        if self.day is None or self.done:
            raise DomainError("episode is not active; call reset()")
        dose = np.asarray(dose, dtype=float)
        if dose.shape != (self.n,):
            raise DomainError(f"expected {self.n} doses")
        first = np.full(self.n, np.nan) if first_day_dose is None else np.asarray(first_day_dose, dtype=float)
        tau = min(self.cfg.interval, self.cfg.horizon - self.day + 1)
        obs_before = self.obs
        true, measured = self._apply(dose, first, self.day, tau)
        rewards = reward(true, self.reward_cfg)
        self._log.append((self.day, obs_before, -np.ones(self.n, dtype=int) if action_index is None else action_index,
                          np.full(self.n, np.nan) if percent is None else np.asarray(percent, dtype=float),
                          dose, tau, rewards, true, measured))
        self.obs = np.column_stack([measured[:, -1], obs_before[:, 0], dose, np.full(self.n, float(tau))])
        self.day += tau
        self.done = self.day > self.cfg.horizon
        return self.obs.copy(), rewards, self.done

    def step(self, action_index):
        """Apply action-space indices (one per patient)."""
        idx = np.atleast_1d(np.asarray(action_index))
        if idx.shape != (self.n,) or not np.issubdtype(idx.dtype, np.integer):
            raise DomainError("need one integer action index per patient")
        if np.any(idx < 0) or np.any(idx >= len(self.action_space)):
            raise DomainError(f"action index out of range [0, {len(self.action_space)})")
        percent = self.action_space.values[idx]
        return self.step_doses(next_dose(self.obs[:, 2], percent), None, percent, idx)

    # -- results -------------------------------------------------------------

    def trajectories(self) -> list[Trajectory]:
        out = []
        for i, p in enumerate(self.patients):
            records = []
            for day, obs, idx, pct, dose, tau, rew, true, meas in self._log:
                records.append(DecisionRecord(
                    day=day, observation=Observation(*(float(v) for v in obs[i])),
                    action_index=int(idx[i]), percent_change=None if np.isnan(pct[i]) else float(pct[i]),
                    dose=float(dose[i]), duration=int(tau), reward=float(rew[i]),
                    true_inr=true[i].tolist(), measured_inr=meas[i].tolist()))
            out.append(Trajectory(patient_id=p.id, daily_dose=self.daily_dose[i].tolist(),
                                  daily_true_inr=self.true_inr[i].tolist(),
                                  daily_measured_inr=self.measured_inr[i].tolist(), records=records,
                                  baseline_inr=float(self.baseline_measured[i])))
        return out


def run_policy(policy: DosingPolicy, patients: Sequence, cfg: EnvConfig = EnvConfig(),
               reward_cfg: RewardConfig = RewardConfig(), params: PkPdParams | None = None,
               engine_factory: Callable | None = None, chunk_size: int = 500) -> list[Trajectory]:
    """Closed-loop rollout of ``policy``; trajectories in input order."""
    if len(patients) == 0:
        raise DomainError("cannot simulate an empty cohort")
    trajectories = []
    for start in range(0, len(patients), chunk_size):
        chunk = list(patients[start:start + chunk_size])
        env = DosingEnv(chunk, cfg, reward_cfg, params=params, engine_factory=engine_factory)
        obs = env.reset()
        done = False
        while not done:
            dose, first, pct, idx = policy.decide_batch(obs, chunk, env.day)
            obs, _, done = env.step_doses(dose, first, pct, idx)
        trajectories.extend(env.trajectories())
    return trajectories


def simulate_protocol(p, protocol: DosingPolicy, horizon: int = 90, seed: int = 0, **kwargs) -> Trajectory:
    cfg = kwargs.pop("cfg", None) or EnvConfig(horizon=horizon, seed=seed)
    return run_policy(protocol, [p], cfg, **kwargs)[0]
