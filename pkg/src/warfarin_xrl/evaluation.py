"""Benchmark dosing policies by PTTR, overall and per sensitivity class."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import SENSITIVITY_CLASSES, classify_sensitivity
from .env import EnvConfig, run_policy
from .errors import ConfigError, DomainError
from .mdp import RewardConfig, pttr

GROUPS = ("normal", "sensitive", "highly_sensitive", "all")
GROUP_LABELS = {"normal": "normal", "sensitive": "sensitive", "highly_sensitive": "highly sensitive", "all": "all"}

SD_FOOTER = ("SD is the standard deviation of per-patient PTTR in fraction units; "
             "0.09 reads either as 0.09 of the trial (9 percentage points) or, "
             "under the alternative reading, 9% of the mean.")


@dataclass
class GroupStats:
    n: int
    mean: float
    sd: float


@dataclass
class EvaluationReport:
    protocol: str
    groups: dict
    patient_ids: list = field(default_factory=list)
    patient_classes: list = field(default_factory=list)
    patient_pttr: list = field(default_factory=list)
    possible_actions: int | None = None
    actions_used: int = 0
    pct_no_change: float = math.nan
    metadata: dict = field(default_factory=dict)

    # -- output -----------------------------------------------------------------

    def summary_csv(self) -> str:
        out = io.StringIO()
        meta = {"protocol": self.protocol, "possible_actions": self.possible_actions,
                "actions_used": self.actions_used, "pct_no_change": self.pct_no_change, **self.metadata}
        for key, value in meta.items():
            out.write(f"# {key}={value!r}\n" if isinstance(value, float) else f"# {key}={value}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["group", "n", "mean_pttr", "sd_pttr"])
        for g in GROUPS:
            s = self.groups[g]
            w.writerow([g, s.n, repr(s.mean), repr(s.sd)])
        return out.getvalue()

    def patients_csv(self) -> str:
        out = io.StringIO()
        for key, value in self.metadata.items():
            out.write(f"# {key}={value}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["patient_id", "sensitivity", "pttr"])
        for pid, cls, v in zip(self.patient_ids, self.patient_classes, self.patient_pttr):
            w.writerow([pid, cls, repr(v)])
        return out.getvalue()

    def to_markdown(self) -> str:
        lines = [f"# PTTR report: {self.protocol}", "", "| Group | n | PTTR | SD |", "|---|---:|---:|---:|"]
        for g in GROUPS:
            s = self.groups[g]
            lines.append(f"| {GROUP_LABELS[g]} | {s.n} | {_pct(s.mean)} | {_num(s.sd)} |")
        lines += ["", f"- possible actions: {self.possible_actions if self.possible_actions is not None else 'n/a'}",
                  f"- distinct actions used: {self.actions_used}",
                  f"- no-change decisions: {_pct(self.pct_no_change)}"]
        lines += [f"- {k}: {v}" for k, v in self.metadata.items()]
        lines += ["", SD_FOOTER]
        return "\n".join(lines) + "\n"

    def write(self, stem: str | Path) -> list:
        stem = Path(stem)
        paths = [stem.with_suffix(".csv"), stem.with_suffix(".md"),
                 stem.parent / f"{stem.name}_patients.csv"]
        paths[0].write_text(self.summary_csv())
        paths[1].write_text(self.to_markdown())
        paths[2].write_text(self.patients_csv())
        return paths


def _pct(x) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:.1f}%"


def _num(x) -> str:
    return "n/a" if isinstance(x, float) and math.isnan(x) else f"{x:.2f}"


def read_report(path: str | Path) -> EvaluationReport:
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        else:
            lines.append(line)
    groups = {}
    for row in csv.DictReader(lines):
        groups[row["group"]] = GroupStats(int(row["n"]), float(row["mean_pttr"]), float(row["sd_pttr"]))
    if set(groups) != set(GROUPS):
        raise ConfigError(f"{path}: report must contain groups {GROUPS}")
    protocol = meta.pop("protocol", Path(path).stem)
    possible = meta.pop("possible_actions", "None")
    used = int(meta.pop("actions_used", 0))
    no_change = float(meta.pop("pct_no_change", "nan"))
    return EvaluationReport(protocol, groups, possible_actions=None if possible == "None" else int(possible),
                            actions_used=used, pct_no_change=no_change, metadata=meta)


# ---- evaluation --------------------------------------------------------------

def _run_chunk(args):
    policy, chunk, cfg, reward_cfg, kwargs = args
    return run_policy(policy, chunk, cfg, reward_cfg, **kwargs)


def rollout(policy, cohort: Sequence, env_cfg: EnvConfig = EnvConfig(), reward_cfg: RewardConfig = RewardConfig(),
            workers: int = 1, chunk_size: int = 500, **kwargs) -> list:
    """``run_policy`` split into chunks; results merged in cohort order."""
    chunks = [list(cohort[i:i + chunk_size]) for i in range(0, len(cohort), chunk_size)]
    jobs = [(policy, c, env_cfg, reward_cfg, kwargs) for c in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    return [t for part in parts for t in part]


def group_stats(values) -> GroupStats:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return GroupStats(0, math.nan, math.nan)
    return GroupStats(len(v), float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)


def summarize(protocol: str, cohort: Sequence, trajectories: Sequence, possible_actions=None,
              metadata: dict | None = None) -> EvaluationReport:
    values = [pttr(t) for t in trajectories]
    classes = [classify_sensitivity(p) for p in cohort]
    groups = {c: group_stats([v for v, k in zip(values, classes) if k == c]) for c in SENSITIVITY_CLASSES}
    groups["all"] = group_stats(values)
    # Lenzini revisions carry no percent change and are not counted as actions
    pcts = [r.percent_change for t in trajectories for r in t.records if r.percent_change is not None]
    return EvaluationReport(
        protocol=protocol, groups=groups, patient_ids=[p.id for p in cohort], patient_classes=classes,
        patient_pttr=values, possible_actions=possible_actions,
        actions_used=len(set(pcts)), pct_no_change=float(np.mean(np.array(pcts) == 0.0)) if pcts else math.nan,
        metadata=dict(metadata or {}))


def evaluate(policy, cohort: Sequence, env_cfg: EnvConfig = EnvConfig(), reward_cfg: RewardConfig = RewardConfig(),
             workers: int = 1, metadata: dict | None = None, **kwargs) -> tuple[EvaluationReport, list]:
    if len(cohort) == 0:
        raise DomainError("cannot evaluate on an empty cohort")
    trajs = rollout(policy, cohort, env_cfg, reward_cfg, workers=workers, **kwargs)
    report = summarize(getattr(policy, "name", "policy"), cohort, trajs,
                       getattr(policy, "possible_actions", None), metadata)
    return report, trajs


def plot_data_csv(trajectories: Sequence, n_patients: int = 20) -> str:
    """Long-format daily series for the first ``n_patients`` trajectories."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["patient_id", "day", "dose_mg", "true_inr", "measured_inr"])
    for t in trajectories[:n_patients]:
        for day, (d, ti, mi) in enumerate(zip(t.daily_dose, t.daily_true_inr, t.daily_measured_inr), 1):
            w.writerow([t.patient_id, day, repr(float(d)), repr(float(ti)), repr(float(mi))])
    return out.getvalue()


# ---- comparison ---------------------------------------------------------------------

@dataclass
class ComparisonTable:
    protocols: list
    cells: dict  # (group, protocol) -> GroupStats
    possible_actions: dict

    def to_markdown(self) -> str:
        head = "| Group | " + " | ".join(self.protocols) + " |"
        lines = [head, "|---|" + "---:|" * len(self.protocols)]
        for g in GROUPS:
            cells = [f"{_pct(self.cells[g, p].mean)} ({_num(self.cells[g, p].sd)})" for p in self.protocols]
            lines.append(f"| {GROUP_LABELS[g]} | " + " | ".join(cells) + " |")
        acts = [str(self.possible_actions[p]) if self.possible_actions[p] is not None else "n/a" for p in self.protocols]
        lines.append("| Possible Actions | " + " | ".join(acts) + " |")
        return "\n".join(lines) + "\n\n" + SD_FOOTER + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row"] + [f"{p}_{s}" for p in self.protocols for s in ("mean", "sd")])
        for g in GROUPS:
            w.writerow([GROUP_LABELS[g]] + [repr(v) for p in self.protocols
                                            for v in (self.cells[g, p].mean, self.cells[g, p].sd)])
        w.writerow(["Possible Actions"] + [x for p in self.protocols for x in (self.possible_actions[p], "")])
        return out.getvalue()


COHORT_KEYS = ("cohort_seed", "cohort_size", "cohort_id_offset", "env_seed")


def compare(reports: Sequence[EvaluationReport], force: bool = False) -> ComparisonTable:
    if not reports:
        raise DomainError("nothing to compare")
    if not force:
        ref = {k: reports[0].metadata.get(k) for k in COHORT_KEYS}
        for r in reports[1:]:
            other = {k: r.metadata.get(k) for k in COHORT_KEYS}
            if other != ref:
                raise ConfigError(f"report {r.protocol!r} used a different cohort ({other} vs {ref}); "
                                  "pass force to compare anyway")
    names = []
    for r in reports:
        name, k = r.protocol, 2
        while name in names:
            name, k = f"{r.protocol}#{k}", k + 1
        names.append(name)
    cells = {(g, n): r.groups[g] for r, n in zip(reports, names) for g in GROUPS}
    return ComparisonTable(names, cells, {n: r.possible_actions for r, n in zip(reports, names)})
