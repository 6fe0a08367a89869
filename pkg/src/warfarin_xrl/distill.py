"""Distil a trained actor into an INR-only interval dosing table."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import EnvConfig, run_policy
from .errors import DomainError
from .protocols import ProtocolRow, ProtocolTable, TablePolicy


@dataclass
class DistillDataset:
    inr: np.ndarray
    action: np.ndarray  # percent change as a fraction

    def __post_init__(self):
        self.inr = np.asarray(self.inr, dtype=float)
        self.action = np.asarray(self.action, dtype=float)
        if self.inr.shape != self.action.shape or self.inr.ndim != 1:
            raise DomainError("inr and action must be equal-length vectors")
        if np.any(self.inr <= 0):
            raise DomainError("INR values must be positive")

    def __len__(self):
        return len(self.inr)


def collect_dataset(policy, cohort: Sequence, env_cfg: EnvConfig = EnvConfig(), **kwargs) -> DistillDataset:
    """One row per maintenance decision of ``policy`` rolled out on ``cohort``."""
    if len(cohort) == 0:
        raise DomainError("cannot collect a dataset from an empty cohort")
    trajs = run_policy(policy, cohort, env_cfg, **kwargs)
    inr = [r.observation.inr_current for t in trajs for r in t.records]
    act = [r.percent_change for t in trajs for r in t.records]
    return DistillDataset(np.array(inr), np.array(act))


# ---- CART ---------------------------------------------------------------------

@dataclass
class Node:
    counts: np.ndarray
    prediction: int  # class index
    feature: int = -1
    threshold: float = math.nan
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class DecisionTree:
    root: Node
    classes: np.ndarray
    n_features: int = 1

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if x[node.feature] <= node.threshold else node.right
            out[i] = self.classes[node.prediction]
        return out

    def leaves(self) -> list:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack += [node.right, node.left]
        return out

    def features_used(self) -> set:
        used, stack = set(), [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                used.add(node.feature)
                stack += [node.left, node.right]
        return used


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int):
    """Best Gini split of one feature: ``(threshold, weighted child impurity)`` or None.

    Candidate thresholds are midpoints between consecutive distinct values;
    scanning in ascending order with strict improvement keeps the smaller
    threshold on ties.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]           # counts for split after position i
    total = left[-1] + onehot[-1] if n > 1 else onehot[0]
    right = total - left
    n_left = np.arange(1, n)
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    g_left = 1.0 - np.sum(left ** 2, axis=1) / n_left ** 2
    g_right = 1.0 - np.sum(right ** 2, axis=1) / n_right ** 2
    weighted = (n_left * g_left + n_right * g_right) / n
    weighted = np.where(valid, weighted, np.inf)
    i = int(np.argmin(weighted))  # first minimum = smallest threshold
    threshold = xs[i] / 2.0 + xs[i + 1] / 2.0
    if threshold >= xs[i + 1]:
        threshold = xs[i]
    return threshold, float(weighted[i])


def fit_tree(X, y, max_depth: int = 4, min_leaf: int = 50) -> DecisionTree:
    """CART classifier with Gini impurity."""
    X = _as_matrix(X)
    y = np.asarray(y)
    if len(X) == 0:
        raise DomainError("cannot fit a tree on empty data")
    if len(X) != len(y):
        raise DomainError("X and y lengths differ")
    if max_depth < 0 or min_leaf < 1:
        raise DomainError("max_depth must be >= 0 and min_leaf >= 1")
    classes, codes = np.unique(y, return_inverse=True)
    k = len(classes)

    def grow(idx: np.ndarray, depth: int) -> Node:
        counts = np.bincount(codes[idx], minlength=k).astype(float)
        node = Node(counts=counts, prediction=int(np.argmax(counts)))
        parent = gini(counts)
        if depth >= max_depth or parent == 0.0 or len(idx) < 2 * min_leaf:
            return node
        best = None
        for f in range(X.shape[1]):
            found = best_split(X[idx, f], codes[idx], k, min_leaf)
            if found is not None and (best is None or found[1] < best[2]):
                best = (f, found[0], found[1])
        if best is None or best[2] >= parent - 1e-12:
            return node
        f, thr, _ = best
        mask = X[idx, f] <= thr
        node.feature, node.threshold = f, float(thr)
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return DecisionTree(grow(np.arange(len(X)), 0), classes, X.shape[1])


def fit_dataset(data: DistillDataset, max_depth: int = 4, min_leaf: int = 50) -> DecisionTree:
    if len(data) == 0:
        raise DomainError("empty distillation dataset")
    return fit_tree(data.inr, data.action, max_depth, min_leaf)


def tree_to_table(tree: DecisionTree, name: str = "distilled") -> ProtocolTable:
    """In-order leaf intervals, adjacent equal actions merged."""
    if tree.features_used() - {0}:
        raise DomainError("only single-feature (INR) trees can become dosing tables")
    intervals = []

    def walk(node: Node, lo: float, hi: float):
        if node.is_leaf:
            intervals.append([lo, hi, float(tree.classes[node.prediction])])
            return
        walk(node.left, lo, node.threshold)
        walk(node.right, node.threshold, hi)

    walk(tree.root, 0.0, math.inf)
    merged = [intervals[0]]
    for lo, hi, act in intervals[1:]:
        if act == merged[-1][2]:
            merged[-1][1] = hi
        else:
            merged.append([lo, hi, act])
    return ProtocolTable([ProtocolRow(lo, hi, act) for lo, hi, act in merged], name)


def table_policy(table: ProtocolTable) -> TablePolicy:
    return TablePolicy(table, table.name, lenzini_day=None)


# ---- reports ---------------------------------------------------------------------

@dataclass
class DistillReport:
    table: ProtocolTable
    train_rows: int
    train_agreement: float
    heldout_rows: int = 0
    heldout_agreement: float = math.nan
    equivalence_points: int = 0
    equivalence_mismatches: int = 0
    extra: dict = field(default_factory=dict)


def agreement(table: ProtocolTable, data: DistillDataset) -> float:
    return float(np.mean(table.percent_for(data.inr) == data.action))


def equivalence_check(tree: DecisionTree, table: ProtocolTable, n: int = 10_000, seed: int = 0,
                      low: float = 0.5, high: float = 6.0) -> int:
    """Count of INR values where table and tree disagree (includes every cut-off)."""
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.uniform(low, high, n), table.cutoffs])
    return int(np.sum(tree.predict(x) != table.percent_for(x)))


def protocol_card(report: DistillReport, metadata: dict | None = None) -> str:
    lines = ["# Explainable dosing protocol", "",
             "Maintenance dose change by current INR, applied every 7 days from day 5.", "",
             report.table.to_markdown(),
             f"- teacher agreement (training rows, n={report.train_rows}): {report.train_agreement:.3f}"]
    if report.heldout_rows:
        lines.append(f"- teacher agreement (held-out rows, n={report.heldout_rows}): {report.heldout_agreement:.3f}")
    if report.equivalence_points:
        lines.append(f"- tree/table equivalence: {report.equivalence_mismatches} mismatches "
                     f"on {report.equivalence_points} points")
    for key, value in (metadata or {}).items():
        lines.append(f"- {key}: {value}")
    return "\n".join(lines) + "\n"
