"""Initial, adjustment and table-based maintenance dosing protocols."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .mdp import Observation, next_dose
from .pkpd import MAX_DOSE

ONE_TIME_ACTIONS = ("none", "skip_dose", "extra_dose")
INITIAL_DAYS = 4
MAINTENANCE_INTERVAL = 7


@dataclass(frozen=True)
class DoseDecision:
    dose: float
    duration: int
    first_day_dose: float | None = None  # one-day override (skipped or extra dose)
    percent_change: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.dose <= MAX_DOSE:
            raise DomainError(f"dose {self.dose} outside [0, 15] mg")
        if not 1 <= self.duration <= 56:
            raise DomainError(f"duration {self.duration} outside [1, 56] days")
        if self.first_day_dose is not None and not 0.0 <= self.first_day_dose <= MAX_DOSE:
            raise DomainError("first-day dose outside [0, 15] mg")


# ---- published formulas ---------------------------------------------------

@lru_cache(maxsize=None)
def formula_coefficients(path: str | None = None) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    if path is None:
        parser.read_string(resources.files("warfarin_xrl.data").joinpath("dosing_formulas.ini").read_text())
    else:
        parser.read(path)
    return {section: {k: float(v) for k, v in parser[section].items()} for section in ("iwpc", "lenzini")}


def iwpc_weekly_dose(p, coef: dict | None = None) -> float:
    """Pharmacogenetic IWPC weekly dose (mg): square of the linear predictor."""
    c = coef or formula_coefficients()["iwpc"]
    x = (c["intercept"]
         + c["age_decades"] * math.floor(p.age / 10.0)
         + c["height_cm"] * p.height_cm
         + c["weight_kg"] * p.weight_kg
         + c.get(f"vkorc1_{p.vkorc1}", 0.0)
         + c.get(f"cyp2c9_{p.cyp2c9}", 0.0)
         + c["amiodarone"] * p.amiodarone)
    if p.race == "Asian":
        x += c["race_Asian"]
    elif p.race == "Black":
        x += c["race_Black"]
    elif p.race != "White":
        x += c["race_missing_or_mixed"]
    return x * x


def iwpc_initial_dose(p, coef: dict | None = None) -> DoseDecision:
    dose = min(max(iwpc_weekly_dose(p, coef) / 7.0, 0.0), MAX_DOSE)
    return DoseDecision(dose=dose, duration=INITIAL_DAYS)


def body_surface_area(p) -> float:
    """Mosteller BSA in m^2."""
    return math.sqrt(p.height_cm * p.weight_kg / 3600.0)


def lenzini_weekly_dose(inr: float, p, prior_doses: Sequence[float], target_inr: float = 2.5,
                        coef: dict | None = None) -> float:
    """Lenzini revision, weekly mg; ``prior_doses`` are the daily doses given 2, 3 and 4 days earlier."""
    c = coef or formula_coefficients()["lenzini"]
    a_alleles = p.vkorc1.count("A")
    star2 = p.cyp2c9.count("*2")
    star3 = p.cyp2c9.count("*3")
    d2, d3, d4 = prior_doses
    x = (c["intercept"]
         + c["age"] * p.age
         + c["ln_inr"] * math.log(inr)
         + c["vkorc1_a_alleles"] * a_alleles
         + c["cyp2c9_star2_alleles"] * star2
         + c["cyp2c9_star3_alleles"] * star3
         + c["bsa"] * body_surface_area(p)
         + c["target_inr"] * target_inr
         + c["african_origin"] * (p.race == "Black")
         + c["amiodarone"] * p.amiodarone
         + c["fluvastatin"] * p.fluvastatin
         + c["dose_2"] * d2 + c["dose_3"] * d3 + c["dose_4"] * d4)
    return math.exp(x)


def lenzini_adjust(obs: Observation, p, prior_doses: Sequence[float] | None = None) -> DoseDecision:
    doses = prior_doses if prior_doses is not None else (obs.dose_previous,) * 3
    dose = min(max(lenzini_weekly_dose(obs.inr_current, p, doses) / 7.0, 0.0), MAX_DOSE)
    # a revision to an absolute dose, not a percent-change action
    return DoseDecision(dose=dose, duration=MAINTENANCE_INTERVAL)


# ---- interval tables ------------------------------------------------------

@dataclass(frozen=True)
class ProtocolRow:
    low: float
    high: float
    percent_change: float
    one_time_action: str = "none"


class ProtocolTable:
    """INR intervals ``(low, high]`` partitioning ``(0, inf)``, each mapped to a dose change."""

    def __init__(self, rows: Sequence[ProtocolRow], name: str = "table"):
        rows = list(rows)
        if not rows:
            raise DomainError("protocol table needs at least one row")
        if rows[0].low != 0.0 or rows[-1].high != math.inf:
            raise DomainError("protocol rows must start at 0 and end at infinity")
        for a, b in zip(rows, rows[1:]):
            if a.high != b.low:
                raise DomainError(f"rows ({a.low}, {a.high}] and ({b.low}, {b.high}] overlap or leave a gap")
        for r in rows:
            if not r.low < r.high:
                raise DomainError(f"empty interval ({r.low}, {r.high}]")
            if r.one_time_action not in ONE_TIME_ACTIONS:
                raise DomainError(f"unknown one-time action {r.one_time_action!r}")
        self.rows = tuple(rows)
        self.name = name
        self._highs = np.array([r.high for r in rows])

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, ProtocolTable) and self.rows == other.rows

    @property
    def cutoffs(self) -> list:
        return [r.high for r in self.rows[:-1]]

    @property
    def possible_actions(self) -> int:
        return len({(r.percent_change, r.one_time_action) for r in self.rows})

    def row_index(self, inr):
        idx = np.searchsorted(self._highs, inr, side="left")
        return int(idx) if np.ndim(idx) == 0 else idx

    def lookup(self, inr: float) -> ProtocolRow:
        return self.rows[self.row_index(inr)]

    def percent_for(self, inr) -> np.ndarray:
        return np.array([r.percent_change for r in self.rows])[self.row_index(inr)]

    def to_csv(self, path: str | Path | None = None, comments: Sequence[str] = ()) -> str:
        out = io.StringIO()
        for c in comments:
            out.write(f"# {c}\n")
        out.write("low,high,percent_change,one_time_action\n")
        for r in self.rows:
            out.write(f"{r.low!r},{r.high!r},{r.percent_change!r},{r.one_time_action}\n")
        text = out.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_markdown(self) -> str:
        lines = ["| INR Range | Dose Change |", "|---|---:|"]
        for i, r in enumerate(self.rows):
            if len(self.rows) == 1:
                rng = "any INR"
            elif i == 0:
                rng = f"INR ≤ {r.high:g}"
            elif r.high == math.inf:
                rng = f"{r.low:g} < INR"
            else:
                rng = f"{r.low:g} < INR ≤ {r.high:g}"
            change = f"{r.percent_change * 100:+.0f}%" if r.percent_change else "0%"
            if r.one_time_action != "none":
                change += f" ({r.one_time_action.replace('_', ' ')})"
            lines.append(f"| {rng} | {change} |")
        return "\n".join(lines) + "\n"


def parse_table(text: str, name: str = "table") -> ProtocolTable:
    rows = []
    header_seen = False
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line.replace(" ", "") != "low,high,percent_change,one_time_action":
                raise ConfigError(f"bad protocol table header: {line!r}")
            header_seen = True
            continue
        low, high, pct, action = (v.strip() for v in line.split(","))
        rows.append(ProtocolRow(float(low), float(high), float(pct), action))
    return ProtocolTable(rows, name)


BUILTIN_TABLES = ("aurora", "intermountain", "explainable")


def load_table(name_or_path: str | Path) -> ProtocolTable:
    if str(name_or_path) in BUILTIN_TABLES:
        text = resources.files("warfarin_xrl.data").joinpath(f"{name_or_path}.csv").read_text()
        return parse_table(text, str(name_or_path))
    path = Path(name_or_path)
    return parse_table(path.read_text(), path.stem)


def table_decide(table: ProtocolTable, obs: Observation) -> DoseDecision:
    row = table.lookup(obs.inr_current)
    dose = next_dose(obs.dose_previous, row.percent_change)
    first = None
    if row.one_time_action == "skip_dose":
        first = 0.0
    elif row.one_time_action == "extra_dose":
        first = min(2.0 * dose, MAX_DOSE)
    return DoseDecision(dose=dose, duration=MAINTENANCE_INTERVAL, first_day_dose=first,
                        percent_change=row.percent_change)


# ---- policies -------------------------------------------------------------

class DosingPolicy:
    """Maps a maintenance observation to the next dose.

    ``decide_batch`` returns arrays ``(dose, first_day_dose, percent, action_index)``
    where ``first_day_dose``/``percent`` are NaN when absent and
    ``action_index`` is -1 when the decision is not an action-space index.
    """

    name = "policy"
    possible_actions: int | None = None

    def decide(self, obs: Observation, patient, day: int) -> DoseDecision:
        raise NotImplementedError

    def decide_batch(self, obs: np.ndarray, patients, day: int):
        n = len(patients)
        dose = np.empty(n)
        first = np.full(n, np.nan)
        pct = np.full(n, np.nan)
        for i, p in enumerate(patients):
            d = self.decide(Observation(*obs[i]), p, day)
            dose[i] = d.dose
            if d.first_day_dose is not None:
                first[i] = d.first_day_dose
            if d.percent_change is not None:
                pct[i] = d.percent_change
        return dose, first, pct, np.full(n, -1, dtype=int)


class TablePolicy(DosingPolicy):
    """Table-driven maintenance, optionally preceded by a one-time Lenzini revision."""

    def __init__(self, table: ProtocolTable, name: str | None = None, lenzini_day: int | None = 5):
        self.table = table
        self.name = name or table.name
        self.lenzini_day = lenzini_day
        self.possible_actions = table.possible_actions

    def decide(self, obs: Observation, patient, day: int) -> DoseDecision:
        if day == self.lenzini_day:
            return lenzini_adjust(obs, patient)
        return table_decide(self.table, obs)

    def decide_batch(self, obs: np.ndarray, patients, day: int):
        if day == self.lenzini_day:
            return super().decide_batch(obs, patients, day)
        rows = self.table.row_index(obs[:, 0])
        pct = np.array([r.percent_change for r in self.table.rows])[rows]
        dose = next_dose(obs[:, 2], pct)
        first = np.full(len(dose), np.nan)
        actions = np.array([r.one_time_action for r in self.table.rows])[rows]
        first[actions == "skip_dose"] = 0.0
        extra = actions == "extra_dose"
        first[extra] = np.minimum(2.0 * dose[extra], MAX_DOSE)
        return dose, first, pct, np.full(len(dose), -1, dtype=int)


class FixedDosePolicy(DosingPolicy):
    """Never changes the dose."""

    name = "iwpc+fixed"
    possible_actions = 1

    def decide(self, obs: Observation, patient, day: int) -> DoseDecision:
        return DoseDecision(dose=obs.dose_previous, duration=MAINTENANCE_INTERVAL, percent_change=0.0)

    def decide_batch(self, obs: np.ndarray, patients, day: int):
        n = len(obs)
        return obs[:, 2].copy(), np.full(n, np.nan), np.zeros(n), np.full(n, -1, dtype=int)


BUILTIN_PROTOCOLS = ("aurora", "intermountain", "iwpc+fixed", "explainable")


def builtin_protocol(name: str) -> DosingPolicy:
    if name == "iwpc+fixed":
        return FixedDosePolicy()
    if name in ("aurora", "intermountain"):
        return TablePolicy(load_table(name), name)
    if name == "explainable":
        return TablePolicy(load_table(name), name, lenzini_day=None)
    raise ConfigError(f"unknown protocol {name!r}; choose from {BUILTIN_PROTOCOLS}")
