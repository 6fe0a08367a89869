"""Warfarin PK/PD engine.

S-warfarin kinetics follow a one-compartment model with first-order
absorption. Concentration inhibits coagulation-factor synthesis through a
sigmoid Emax term that drives two parallel transit-compartment chains; the
product of the two chain outputs maps to INR. The ODE system is integrated
with fixed-step RK4, one dose event at hour 0 of every simulated day, and
the INR of day ``k`` is read at the end of that day (trough).

Everything is vectorized over a batch of patients so that whole cohorts can
be advanced in lock-step.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from statistics import NormalDist
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import DomainError

if TYPE_CHECKING:
    from .cohort import Patient

MAX_DOSE = 15.0
CYP2C9_GENOTYPES = ("*1/*1", "*1/*2", "*1/*3", "*2/*2", "*2/*3", "*3/*3")
VKORC1_GENOTYPES = ("G/G", "G/A", "A/A")


@dataclass(frozen=True)
class PhysiologyEffects:
    clearance_multiplier: float = 1.0
    volume_multiplier: float = 1.0
    ec50_multiplier: float = 1.0
    mtt1_multiplier: float = 1.0
    mtt2_multiplier: float = 1.0
    baseline_inr: float = 1.0

    def __post_init__(self):
        for name in ("clearance_multiplier", "volume_multiplier", "ec50_multiplier",
                     "mtt1_multiplier", "mtt2_multiplier", "baseline_inr"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


@dataclass(frozen=True)
class PkPdParams:
    version: str
    absorption_rate: float
    bioavailability: float
    s_fraction: float
    volume: float
    age_clearance_slope: float
    age_clearance_reference: float
    clearance_by_cyp2c9: dict
    ec50_by_vkorc1: dict
    hill_gamma: float
    emax: float
    transit_mtt: tuple
    transit_counts: tuple
    inr_base: float
    inr_max: float
    inr_exponent: float
    variability: dict
    truncation_quantile: float
    measurement_noise_sd: float
    concentration_noise_sd: float

    def __post_init__(self):
        positive = [self.absorption_rate, self.bioavailability, self.s_fraction, self.volume,
                    self.hill_gamma, self.inr_max, self.inr_exponent, *self.transit_mtt,
                    *self.clearance_by_cyp2c9.values(), *self.ec50_by_vkorc1.values()]
        if any(not v > 0 for v in positive):
            raise DomainError("PK/PD rates, volumes and table entries must be positive")
        if set(self.clearance_by_cyp2c9) != set(CYP2C9_GENOTYPES):
            raise DomainError("clearance table must cover every CYP2C9 genotype")
        if set(self.ec50_by_vkorc1) != set(VKORC1_GENOTYPES):
            raise DomainError("EC50 table must cover every VKORC1 genotype")
        if len(self.transit_mtt) != 2 or len(self.transit_counts) != 2:
            raise DomainError("exactly two transit chains are supported")
        if not 0 <= self.truncation_quantile < 0.5:
            raise DomainError("truncation_quantile must lie in [0, 0.5)")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def load_params(path: str | Path | None = None) -> PkPdParams:
    """Read a parameter file; the bundled Hamberg set when ``path`` is None."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    if path is None:
        parser.read_string(resources.files("warfarin_xrl.data").joinpath("pkpd_params.ini").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    pk, pd, var, noise = parser["pk"], parser["pd"], parser["variability"], parser["noise"]
    return PkPdParams(
        version=parser["meta"]["version"],
        absorption_rate=pk.getfloat("absorption_rate"),
        bioavailability=pk.getfloat("bioavailability"),
        s_fraction=pk.getfloat("s_fraction"),
        volume=pk.getfloat("volume"),
        age_clearance_slope=pk.getfloat("age_clearance_slope"),
        age_clearance_reference=pk.getfloat("age_clearance_reference"),
        clearance_by_cyp2c9={k: float(v) for k, v in parser["clearance_by_cyp2c9"].items()},
        ec50_by_vkorc1={k: float(v) for k, v in parser["ec50_by_vkorc1"].items()},
        hill_gamma=pd.getfloat("hill_gamma"),
        emax=pd.getfloat("emax"),
        transit_mtt=_floats(pd["transit_mtt"]),
        transit_counts=tuple(int(v) for v in _floats(pd["transit_counts"])),
        inr_base=pd.getfloat("inr_base"),
        inr_max=pd.getfloat("inr_max"),
        inr_exponent=pd.getfloat("inr_exponent"),
        variability={k: var.getfloat(k) for k in
                     ("clearance", "volume", "ec50", "mtt1", "mtt2", "baseline_inr")},
        truncation_quantile=var.getfloat("truncation_quantile"),
        measurement_noise_sd=noise.getfloat("measurement_sd"),
        concentration_noise_sd=noise.getfloat("concentration_sd"),
    )


_DEFAULT_PARAMS: PkPdParams | None = None


def default_params() -> PkPdParams:
    global _DEFAULT_PARAMS
    if _DEFAULT_PARAMS is None:
        _DEFAULT_PARAMS = load_params()
    return _DEFAULT_PARAMS


def sample_physiology(rng: np.random.Generator, params: PkPdParams | None = None) -> PhysiologyEffects:
    """Lognormal between-subject multipliers, median 1.

    With a nonzero truncation quantile ``q`` the underlying normal draw is
    restricted to its ``[q, 1 - q]`` quantile band.
    """
    params = params or default_params()
    q = params.truncation_quantile
    normal = NormalDist()
    values = {}
    for name in ("clearance", "volume", "ec50", "mtt1", "mtt2", "baseline_inr"):
        z = normal.inv_cdf(rng.uniform(q, 1.0 - q)) if q > 0 else rng.standard_normal()
        values[name] = math.exp(math.sqrt(params.variability[name]) * z)
    return PhysiologyEffects(
        clearance_multiplier=values["clearance"],
        volume_multiplier=values["volume"],
        ec50_multiplier=values["ec50"],
        mtt1_multiplier=values["mtt1"],
        mtt2_multiplier=values["mtt2"],
        baseline_inr=values["baseline_inr"],
    )


@dataclass(frozen=True)
class PkPdState:
    """Compartment amounts ``(n_patients, n_compartments)`` and the clock.

    Columns: gut, central (mg S-warfarin), then the two transit chains
    (dimensionless, 1 when drug-free).
    """

    amounts: np.ndarray
    hour: float = 0.0

    @property
    def day(self) -> int:
        return int(round(self.hour / 24.0))


@dataclass(frozen=True)
class InrSeries:
    daily_inr: np.ndarray
    true_inr: np.ndarray

    def __post_init__(self):
        if np.any(self.daily_inr <= 0) or np.any(self.true_inr <= 0):
            raise DomainError("INR values must be positive")

    def __len__(self):
        return len(self.daily_inr)


class PkPdEngine:
    """Vectorized simulator for a fixed batch of patients."""

    def __init__(self, patients: Sequence["Patient"], params: PkPdParams | None = None,
                 noise: bool = True, step_hours: float = 1.0):
        if 24.0 / step_hours != int(24.0 / step_hours):
            raise DomainError("step_hours must divide 24")
        self.params = params = params or default_params()
        self.noise = noise
        self.step_hours = step_hours
        self.n = len(patients)
        age = np.array([p.age for p in patients], dtype=float)
        phys = [p.physiology for p in patients]
        age_factor = np.where(age > params.age_clearance_reference,
                              1.0 - params.age_clearance_slope * (age - params.age_clearance_reference), 1.0)
        clearance = np.array([params.clearance_by_cyp2c9[p.cyp2c9] for p in patients])
        clearance = clearance * age_factor * np.array([f.clearance_multiplier for f in phys])
        self.volume = params.volume * np.array([f.volume_multiplier for f in phys])
        self.ke = clearance / self.volume
        self.clearance = clearance
        ec50 = np.array([params.ec50_by_vkorc1[p.vkorc1] for p in patients])
        ec50 = ec50 * np.array([f.ec50_multiplier for f in phys])
        self.ec50_gamma = ec50 ** params.hill_gamma
        n1, n2 = params.transit_counts
        self.n1, self.n2 = n1, n2
        self.ktr1 = n1 / (params.transit_mtt[0] * np.array([f.mtt1_multiplier for f in phys]))
        self.ktr2 = n2 / (params.transit_mtt[1] * np.array([f.mtt2_multiplier for f in phys]))
        self.inr_base = params.inr_base * np.array([f.baseline_inr for f in phys])
        self.n_compartments = 2 + n1 + n2

    def init_state(self) -> PkPdState:
        amounts = np.zeros((self.n, self.n_compartments))
        amounts[:, 2:] = 1.0
        return PkPdState(amounts=amounts, hour=0.0)

    def concentration(self, state: PkPdState) -> np.ndarray:
        return np.maximum(state.amounts[:, 1], 0.0) / self.volume

    def true_inr(self, state: PkPdState) -> np.ndarray:
        a = state.amounts
        depletion = np.clip(1.0 - a[:, 1 + self.n1] * a[:, -1], 0.0, None)
        return self.inr_base + self.params.inr_max * depletion ** self.params.inr_exponent

    def measure(self, true_inr: np.ndarray, z: np.ndarray | None) -> np.ndarray:
        if not self.noise or z is None:
            return true_inr.copy()
        return true_inr * np.exp(self.params.measurement_noise_sd * z)

    def _rhs(self, y: np.ndarray) -> np.ndarray:
        p = self.params
        gut, central = y[:, 0], y[:, 1]
        conc_g = (np.maximum(central, 0.0) / self.volume) ** p.hill_gamma
        synthesis = 1.0 - p.emax * conc_g / (self.ec50_gamma + conc_g)
        dy = np.empty_like(y)
        dy[:, 0] = -p.absorption_rate * gut
        dy[:, 1] = p.absorption_rate * gut - self.ke * central
        s1, e1 = 2, 2 + self.n1
        chain1 = y[:, s1:e1]
        dy[:, s1] = self.ktr1 * (synthesis - chain1[:, 0])
        if self.n1 > 1:
            dy[:, s1 + 1:e1] = self.ktr1[:, None] * (chain1[:, :-1] - chain1[:, 1:])
        chain2 = y[:, e1:]
        dy[:, e1] = self.ktr2 * (synthesis - chain2[:, 0])
        if self.n2 > 1:
            dy[:, e1 + 1:] = self.ktr2[:, None] * (chain2[:, :-1] - chain2[:, 1:])
        return dy

    def _integrate_day(self, y: np.ndarray) -> np.ndarray:
        h = self.step_hours
        for _ in range(int(round(24.0 / h))):
            k1 = self._rhs(y)
            k2 = self._rhs(y + 0.5 * h * k1)
            k3 = self._rhs(y + 0.5 * h * k2)
            k4 = self._rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return y

    def advance(self, state: PkPdState, daily_dose, days: int,
                dose_z: np.ndarray | None = None,
                measurement_z: np.ndarray | None = None):
        """Give ``daily_dose`` (mg, shape ``(n,)`` or ``(n, days)``) for ``days`` days.

        ``dose_z`` and ``measurement_z`` are standard-normal draws of shape
        ``(n, days)`` for the concentration and INR-measurement noise; they
        are ignored when the engine was built with ``noise=False``.
        Returns the new state and ``(true_inr, measured_inr)``, each
        ``(n, days)``.
        """
        if days < 1:
            raise DomainError("days must be at least 1")
        doses = np.asarray(daily_dose, dtype=float)
        if doses.ndim == 0:
            doses = np.full((self.n, days), float(doses))
        elif doses.ndim == 1:
            doses = np.repeat(doses[:, None], days, axis=1)
        if doses.shape != (self.n, days):
            raise DomainError(f"dose schedule shape {doses.shape} != {(self.n, days)}")
        if np.any(doses < 0) or np.any(doses > MAX_DOSE) or not np.all(np.isfinite(doses)):
            raise DomainError("daily dose must lie in [0, 15] mg")
        administered = doses * (self.params.bioavailability * self.params.s_fraction)
        if self.noise and dose_z is not None:
            administered = administered * np.exp(self.params.concentration_noise_sd * dose_z)
        y = state.amounts
        true = np.empty((self.n, days))
        for d in range(days):
            y = y.copy()
            y[:, 0] += administered[:, d]
            y = self._integrate_day(y)
            true[:, d] = self.true_inr(PkPdState(y))
        measured = self.measure(true, measurement_z)
        return PkPdState(amounts=y, hour=state.hour + 24.0 * days), true, measured


def init_state(p: "Patient", params: PkPdParams | None = None) -> PkPdState:
    """Drug-free state for a single patient."""
    return PkPdEngine([p], params).init_state()


def advance(state: PkPdState, p: "Patient", daily_dose: float, days: int,
            rng: np.random.Generator | None = None, params: PkPdParams | None = None,
            step_hours: float = 1.0):
    """Single-patient wrapper around :meth:`PkPdEngine.advance`.

    ``rng=None`` runs noise-free.
    """
    if not 0.0 <= daily_dose <= MAX_DOSE:
        raise DomainError("daily dose must lie in [0, 15] mg")
    engine = PkPdEngine([p], params, noise=rng is not None, step_hours=step_hours)
    dose_z = meas_z = None
    if rng is not None:
        dose_z = rng.standard_normal((1, days))
        meas_z = rng.standard_normal((1, days))
    new_state, true, measured = engine.advance(state, np.array([daily_dose]), days, dose_z, meas_z)
    return new_state, InrSeries(daily_inr=measured[0], true_inr=true[0])


def with_noise(params: PkPdParams, measurement_sd: float, concentration_sd: float) -> PkPdParams:
    return replace(params, measurement_noise_sd=measurement_sd, concentration_noise_sd=concentration_sd)
