"""Distance-weighted kNN over mixed numeric/categorical features, plus MFU and MRU baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import AppId, FeatureKind, SensorValue

EPS = 1e-9


@dataclass(frozen=True)
class PredictionList:
    ranked: tuple[tuple[AppId, float], ...]

    @property
    def apps(self) -> list[AppId]:
        return [app for app, _ in self.ranked]

    def __len__(self) -> int:
        return len(self.ranked)

    def truncate(self, k: int) -> "PredictionList":
        return PredictionList(self.ranked[:k])


@dataclass(frozen=True)
class Instance:
    """Ordered ``(feature id, value)`` pairs; ``label`` is set for training rows.

    Numeric values are expected already normalized to [0, 1].  ``None``
    marks a missing reading.
    """

    features: tuple[tuple[str, SensorValue], ...]
    label: AppId | None = None


def distance(a: Instance, b: Instance) -> float:
    """Euclidean over numeric dims, 0/1 mismatch for categorical; missing costs 1."""
    if [f for f, _ in a.features] != [f for f, _ in b.features]:
        raise ValueError("instances have different feature ids")
    total = 0.0
    for (_, x), (_, y) in zip(a.features, b.features):
        if x is None or y is None:
            total += 1.0
        elif isinstance(x, str) or isinstance(y, str):
            total += 0.0 if x == y else 1.0
        else:
            total += (float(x) - float(y)) ** 2
    return math.sqrt(total)


@dataclass
class Normalizer:
    """Per-column min-max statistics from the training set."""

    kinds: tuple[FeatureKind, ...]
    mins: np.ndarray
    ranges: np.ndarray

    @classmethod
    def fit(cls, kinds: Sequence[FeatureKind], numeric: np.ndarray) -> "Normalizer":
        numeric = np.asarray(numeric, dtype=float)
        n_num = numeric.shape[1] if numeric.ndim == 2 else 0
        mins = np.zeros(n_num)
        ranges = np.zeros(n_num)
        for j in range(n_num):
            col = numeric[:, j]
            col = col[~np.isnan(col)]
            if col.size:
                mins[j] = col.min()
                ranges[j] = col.max() - col.min()
        return cls(tuple(kinds), mins, ranges)

    def transform(self, numeric: np.ndarray) -> np.ndarray:
        numeric = np.asarray(numeric, dtype=float)
        safe = np.where(self.ranges > 0, self.ranges, 1.0)
        out = (numeric - self.mins) / safe
        out = np.where(self.ranges > 0, out, 0.0)
        out = np.clip(out, 0.0, 1.0)
        return np.where(np.isnan(numeric), np.nan, out)

    def to_dict(self) -> dict:
        return {"kinds": [k.value for k in self.kinds], "mins": self.mins.tolist(), "ranges": self.ranges.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(tuple(FeatureKind(k) for k in data["kinds"]), np.array(data["mins"], dtype=float), np.array(data["ranges"], dtype=float))


def normalize(numeric_train: np.ndarray, kinds: Sequence[FeatureKind] | None = None) -> tuple[Normalizer, np.ndarray]:
    """Fit min-max scaling on training columns and return the scaled copy."""
    numeric_train = np.asarray(numeric_train, dtype=float)
    if numeric_train.ndim == 1:
        numeric_train = numeric_train[:, None]
    if numeric_train.shape[0] == 0:
        raise ValueError("cannot normalize an empty training set")
    if kinds is None:
        kinds = (FeatureKind.NUMERIC,) * numeric_train.shape[1]
    norm = Normalizer.fit(kinds, numeric_train)
    return norm, norm.transform(numeric_train)


@dataclass
class TrainingSet:
    """Encoded, normalized training instances.

    ``numeric`` is ``(n, d_num)`` with NaN for missing; ``categorical`` is
    ``(n, d_cat)`` integer codes with -1 for missing.
    """

    numeric: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.size == 0:
            raise ValueError("empty training set")
        self.freq = np.bincount(self.labels)

    def __len__(self) -> int:
        return self.labels.size


def distances(train: TrainingSet, q_numeric: np.ndarray, q_categorical: np.ndarray) -> np.ndarray:
    sq = np.zeros(len(train))
    if train.numeric.shape[1]:
        diff = (train.numeric - q_numeric) ** 2
        sq += np.where(np.isnan(diff), 1.0, diff).sum(axis=1)
    if train.categorical.shape[1]:
        mismatch = (train.categorical != q_categorical) | (train.categorical < 0) | (q_categorical < 0)
        sq += mismatch.sum(axis=1)
    return np.sqrt(sq)


def _rank(scores: dict[AppId, float], freq: np.ndarray, k: int) -> PredictionList:
    """Order apps by score, then training frequency, then id; pad by frequency."""
    voted = sorted(scores, key=lambda a: (-scores[a], -freq[a], a))
    rest = sorted((a for a in np.flatnonzero(freq).tolist() if a not in scores), key=lambda a: (-freq[a], a))
    ranked = [(a, float(scores[a])) for a in voted] + [(a, 0.0) for a in rest]
    n_train_apps = int(np.count_nonzero(freq))
    return PredictionList(tuple(ranked[: min(k, n_train_apps)]))


def neighbor_count(knn_fraction: float, n_train: int) -> int:
    # Guard against 0.4 * 5 landing a hair above 2.
    return max(1, math.ceil(knn_fraction * n_train - 1e-9))


def predict_knn(train: TrainingSet, q_numeric: np.ndarray, q_categorical: np.ndarray, knn_fraction: float = 0.4, top_k: int = 4) -> PredictionList:
    """Rank apps by inverse-distance votes of the nearest ``knn_fraction`` of training rows.

    Distance ties keep the earlier training row.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    d = distances(train, np.asarray(q_numeric, dtype=float), np.asarray(q_categorical, dtype=int))
    K = neighbor_count(knn_fraction, len(train))
    nearest = np.argsort(d, kind="stable")[:K]
    votes = np.bincount(train.labels[nearest], weights=1.0 / (d[nearest] + EPS), minlength=train.freq.size)
    scores = {int(a): float(votes[a]) for a in np.flatnonzero(votes)}
    return _rank(scores, train.freq, top_k)


def _frequencies(train_labels: Iterable[AppId]) -> np.ndarray:
    labels = np.asarray(list(train_labels), dtype=int)
    if labels.size == 0:
        raise ValueError("training labels are empty")
    return np.bincount(labels)


def predict_mfu(train_labels: Iterable[AppId], k: int) -> PredictionList:
    freq = _frequencies(train_labels)
    return _rank({}, freq, k)


def predict_mru(recent_apps: Sequence[AppId], train_labels: Iterable[AppId], k: int) -> PredictionList:
    """Most recently used first (oldest-to-newest input), padded in MFU order.

    Apps never seen in training are skipped.
    """
    freq = _frequencies(train_labels)
    seen: list[AppId] = []
    for app in reversed(recent_apps):
        if app < freq.size and freq[app] > 0 and app not in seen:
            seen.append(app)
            if len(seen) >= k:
                break
    # Descending pseudo-scores keep recency order through _rank.
    scores = {app: float(len(seen) - i) for i, app in enumerate(seen)}
    return _rank(scores, freq, k)
