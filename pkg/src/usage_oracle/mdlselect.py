"""Greedy personalized feature selection by minimum description length.

Each candidate feature projects the working set onto one axis and is
scored by how many bits it takes to describe the per-app groups (``l_h``)
plus the points it gets wrong (``l_d_given_h``).  The cheapest feature is
kept, the points it predicts correctly are dropped, and the loop repeats on
what is left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureKind


@dataclass(frozen=True)
class FeatureColumn:
    """One candidate feature's values over the working set.

    Numeric values are floats with NaN for missing readings; categorical
    values are strings with None for missing readings.
    """

    feature: str
    kind: FeatureKind
    values: Sequence

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, mask: np.ndarray) -> "FeatureColumn":
        if self.kind is FeatureKind.NUMERIC:
            return FeatureColumn(self.feature, self.kind, np.asarray(self.values, dtype=float)[mask])
        return FeatureColumn(self.feature, self.kind, [v for v, keep in zip(self.values, mask) if keep])


@dataclass(frozen=True)
class GroupingHypothesis:
    feature: str
    bins: tuple  # numeric: bin edges; categorical: distinct values
    n_bins: int  # including the missing-value bin when used
    per_bin_majority: tuple[int, ...]
    ng: dict[int, int]
    miss: dict[int, int]
    l_h: float
    l_d_given_h: float
    assignment: np.ndarray  # bin index per point
    correct: np.ndarray  # point predicted correctly by its bin's majority

    @property
    def dl(self) -> float:
        return self.l_h + self.l_d_given_h


def n_numeric_bins(n_points: int) -> int:
    return max(1, math.ceil(math.log2(n_points)) + 1) if n_points > 0 else 1


def _numeric_assignment(values: np.ndarray) -> tuple[np.ndarray, tuple, int]:
    present = ~np.isnan(values)
    assignment = np.empty(values.size, dtype=int)
    if not present.any():
        assignment[:] = 0
        return assignment, (), 0
    lo, hi = float(values[present].min()), float(values[present].max())
    n_bins = 1 if lo == hi else n_numeric_bins(int(present.sum()))
    width = (hi - lo) / n_bins
    edges = tuple(lo + width * i for i in range(n_bins)) + (hi,)
    if n_bins == 1:
        assignment[present] = 0
    else:
        idx = np.floor((values[present] - lo) / width).astype(int)
        assignment[present] = np.clip(idx, 0, n_bins - 1)
    assignment[~present] = n_bins
    return assignment, edges, n_bins


def _categorical_assignment(values: Sequence) -> tuple[np.ndarray, tuple, int]:
    distinct = tuple(sorted({v for v in values if v is not None}))
    index = {v: i for i, v in enumerate(distinct)}
    missing_bin = len(distinct)
    assignment = np.array([index[v] if v is not None else missing_bin for v in values], dtype=int)
    return assignment, distinct, len(distinct)


def _count_runs(occupied: np.ndarray) -> int:
    """Number of maximal runs of True in a 1-D boolean array."""
    if occupied.size == 0:
        return 0
    starts = occupied & ~np.concatenate(([False], occupied[:-1]))
    return int(starts.sum())


def hypothesize(column: FeatureColumn, labels: Sequence[int]) -> GroupingHypothesis:
    """Bin one feature and score the resulting per-app grouping in bits.

    Numeric features use ``max(1, ceil(log2 N) + 1)`` equal-width bins over
    the observed range; categorical features get one bin per value.  Missing
    readings share one extra bin.  An app's group count is the number of
    maximal runs of adjacent occupied bins (categorical: occupied values).
    Each bin predicts its most populous app; ties go to the globally more
    frequent app, then the smaller id.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0 or len(column) != labels.size:
        raise ValueError("column and labels must be non-empty and of equal length")

    if column.kind is FeatureKind.NUMERIC:
        assignment, bins, n_regular = _numeric_assignment(np.asarray(column.values, dtype=float))
        ordered = True
    else:
        assignment, bins, n_regular = _categorical_assignment(column.values)
        ordered = False
    has_missing = bool((assignment == n_regular).any())
    n_bins = n_regular + (1 if has_missing else 0)

    n_apps = int(labels.max()) + 1
    counts = np.zeros((n_regular + 1, n_apps), dtype=int)
    np.add.at(counts, (assignment, labels), 1)
    freq = counts.sum(axis=0)

    # Majority: highest count, then highest global frequency, then smallest id.
    key = counts * (freq.max() + 1) + freq[None, :]
    majority = np.argmax(key, axis=1)
    occupied_bins = counts.sum(axis=1) > 0

    ng: dict[int, int] = {}
    miss: dict[int, int] = {}
    for app in np.flatnonzero(freq):
        app = int(app)
        occ = counts[:n_regular, app] > 0
        groups = _count_runs(occ) if ordered else int(occ.sum())
        if counts[n_regular, app] > 0:
            groups += 1
        ng[app] = groups
        miss[app] = int(counts[(majority != app) & occupied_bins, app].sum())

    l_h = float(sum(math.log2(ng[a]) for a in sorted(ng)))
    l_d = float(sum(math.log2(miss[a] + 1) for a in sorted(miss)))
    per_bin = tuple(int(m) if occupied_bins[b] else -1 for b, m in enumerate(majority[:n_bins]))
    correct = majority[assignment] == labels
    return GroupingHypothesis(column.feature, bins, n_bins, per_bin, ng, miss, l_h, l_d, assignment, correct)


@dataclass(frozen=True)
class SelectionRound:
    round: int
    feature: str
    l_h: float
    l_d_given_h: float
    dl: float
    removed_count: int


def selection_rounds(columns: Mapping[str, FeatureColumn] | Sequence[FeatureColumn], labels: Sequence[int], rho: float) -> list[SelectionRound]:
    """Run the greedy loop and return one record per picked feature."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho {rho!r} outside (0, 1]")
    if not isinstance(columns, Mapping):
        columns = {c.feature: c for c in columns}
    if not columns:
        raise ValueError("no candidate features")
    labels = np.asarray(labels, dtype=int)
    n_total = labels.size
    active = np.ones(n_total, dtype=bool)
    remaining = sorted(columns)
    rounds: list[SelectionRound] = []
    removed = 0
    while remaining and removed / n_total < rho:
        idx = np.flatnonzero(active)
        scored = []
        for fid in remaining:
            hyp = hypothesize(columns[fid].subset(active), labels[idx])
            scored.append(((hyp.dl, hyp.n_bins, fid), hyp))
        _, best = min(scored, key=lambda pair: pair[0])
        n_correct = int(best.correct.sum())
        if n_correct == 0:
            break
        active[idx[best.correct]] = False
        removed += n_correct
        remaining.remove(best.feature)
        rounds.append(SelectionRound(len(rounds) + 1, best.feature, best.l_h, best.l_d_given_h, best.dl, n_correct))
    return rounds


def select_features(columns: Mapping[str, FeatureColumn] | Sequence[FeatureColumn], labels: Sequence[int], rho: float) -> list[str]:
    """Feature ids in the order the greedy loop picked them."""
    return [r.feature for r in selection_rounds(columns, labels, rho)]
