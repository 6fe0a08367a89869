"""Virtual patient generation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .pkpd import CYP2C9_GENOTYPES, VKORC1_GENOTYPES, PhysiologyEffects, PkPdParams, sample_physiology
from .rng import substream

SEXES = ("female", "male")
RACES = ("White", "Black", "Asian", "AmericanIndianAlaskan", "PacificIslander")
SENSITIVITY_CLASSES = ("normal", "sensitive", "highly_sensitive")

# (mean, sd, low, high); weight in pounds, height in inches
CONTINUOUS = {
    "age": (67.3, 14.43, 18.0, 100.0),
    "weight": (199.24, 54.71, 70.0, 500.0),
    "height": (66.78, 4.31, 45.0, 85.0),
}

# percentages; normalized before sampling
CATEGORICAL = {
    "sex": (SEXES, (53.14, 46.86)),
    "race": (RACES, (95.18, 4.25, 0.39, 0.18, 0.0001)),
    "tobacco": ((False, True), (90.33, 9.66)),
    "amiodarone": ((False, True), (88.45, 11.54)),
    "fluvastatin": ((False, True), (99.97, 0.03)),
    "cyp2c9": (CYP2C9_GENOTYPES, (67.39, 14.86, 9.25, 6.51, 1.97, 0.02)),
    "vkorc1": (VKORC1_GENOTYPES, (38.37, 44.18, 17.45)),
}


@dataclass(frozen=True)
class Patient:
    id: int
    age: float
    weight: float
    height: float
    sex: str
    race: str
    tobacco: bool
    amiodarone: bool
    fluvastatin: bool
    cyp2c9: str
    vkorc1: str
    physiology: PhysiologyEffects = field(default_factory=PhysiologyEffects)

    def __post_init__(self):
        for name, (_, _, lo, hi) in CONTINUOUS.items():
            if not lo <= getattr(self, name) <= hi:
                raise DomainError(f"{name}={getattr(self, name)} outside [{lo}, {hi}]")
        if self.cyp2c9 not in CYP2C9_GENOTYPES or self.vkorc1 not in VKORC1_GENOTYPES:
            raise DomainError(f"unknown genotype {self.cyp2c9}, {self.vkorc1}")
        if self.sex not in SEXES or self.race not in RACES:
            raise DomainError(f"unknown sex/race {self.sex}, {self.race}")

    @property
    def weight_kg(self) -> float:
        return self.weight * 0.45359237

    @property
    def height_cm(self) -> float:
        return self.height * 2.54


@dataclass(frozen=True)
class CohortConfig:
    size: int
    seed: int = 0
    rebalance_cyp2c9: bool = False
    min_variant_prob: float = 0.1
    id_offset: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ConfigError(f"cohort size must be positive, got {self.size}")
        if not 0 <= self.min_variant_prob * (len(CYP2C9_GENOTYPES) - 1) <= 1:
            raise ConfigError("min_variant_prob too large for the number of variants")


def _normalized(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def cyp2c9_distribution(rebalance: bool = False, min_variant_prob: float = 0.1) -> np.ndarray:
    """CYP2C9 probabilities in ``CYP2C9_GENOTYPES`` order.

    Rebalancing lifts every non-wild-type variant to at least
    ``min_variant_prob``; *1/*1 absorbs the difference.
    """
    probs = _normalized(CATEGORICAL["cyp2c9"][1])
    if not rebalance:
        return probs
    boosted = np.maximum(probs[1:], min_variant_prob)
    return np.concatenate([[1.0 - boosted.sum()], boosted])


def sample_patient(rng: np.random.Generator, cfg: CohortConfig, patient_id: int = 0,
                   physiology_rng: np.random.Generator | None = None,
                   params: PkPdParams | None = None) -> Patient:
    values = {}
    for name, (mean, sd, lo, hi) in CONTINUOUS.items():
        values[name] = float(np.clip(rng.normal(mean, sd), lo, hi))
    for name, (choices, weights) in CATEGORICAL.items():
        probs = _normalized(weights)
        if name == "cyp2c9":
            probs = cyp2c9_distribution(cfg.rebalance_cyp2c9, cfg.min_variant_prob)
        values[name] = choices[int(rng.choice(len(choices), p=probs))]
    physiology = sample_physiology(physiology_rng if physiology_rng is not None else rng, params)
    return Patient(id=patient_id, physiology=physiology, **values)


def generate_cohort(cfg: CohortConfig, params: PkPdParams | None = None) -> list[Patient]:
    """``cfg.size`` patients; patient ``i`` depends only on ``(seed, id)``."""
    patients = []
    for i in range(cfg.size):
        pid = cfg.id_offset + i
        patients.append(sample_patient(substream(cfg.seed, "cohort", pid), cfg, pid,
                                       physiology_rng=substream(cfg.seed, "physiology", pid),
                                       params=params))
    return patients


@lru_cache(maxsize=None)
def _load_sensitivity_table(path: str | None) -> dict:
    if path is None:
        text = resources.files("warfarin_xrl.data").joinpath("sensitivity.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
    table = {(r["cyp2c9"], r["vkorc1"]): r["sensitivity"] for r in rows}
    missing = {(c, v) for c in CYP2C9_GENOTYPES for v in VKORC1_GENOTYPES} - set(table)
    if missing:
        raise ConfigError(f"sensitivity table misses genotypes {sorted(missing)}")
    if set(table.values()) - set(SENSITIVITY_CLASSES):
        raise ConfigError("unknown sensitivity class in table")
    return table


def classify_sensitivity(p: Patient, table_path: str | None = None) -> str:
    return _load_sensitivity_table(table_path)[(p.cyp2c9, p.vkorc1)]


# ---- CSV round trip -------------------------------------------------------

_PATIENT_COLUMNS = [f.name for f in fields(Patient) if f.name != "physiology"]
_PHYSIOLOGY_COLUMNS = [f.name for f in fields(PhysiologyEffects)]


def write_cohort_csv(patients: list[Patient], path: str | Path, metadata: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_PATIENT_COLUMNS + _PHYSIOLOGY_COLUMNS)
        for p in patients:
            row = asdict(p)
            phys = row.pop("physiology")
            writer.writerow([_fmt(row[c]) for c in _PATIENT_COLUMNS] + [_fmt(phys[c]) for c in _PHYSIOLOGY_COLUMNS])


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_cohort_csv(path: str | Path) -> tuple[list[Patient], dict]:
    metadata = {}
    lines = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
            else:
                lines.append(line)
    patients = []
    for row in csv.DictReader(lines):
        physiology = PhysiologyEffects(**{c: float(row[c]) for c in _PHYSIOLOGY_COLUMNS})
        patients.append(Patient(
            id=int(row["id"]), age=float(row["age"]), weight=float(row["weight"]),
            height=float(row["height"]), sex=row["sex"], race=row["race"],
            tobacco=row["tobacco"] == "yes", amiodarone=row["amiodarone"] == "yes",
            fluvastatin=row["fluvastatin"] == "yes", cyp2c9=row["cyp2c9"], vkorc1=row["vkorc1"],
            physiology=physiology))
    return patients, metadata
