"""Apps Usage Graph: per-edge transition weights and bucketed exponential interval models."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AppId, UsageEvent

BETA_MIN = 1e-4
BETA_MAX = 10.0
GRID_POINTS = 1000
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EdgeModel:
    """Launch-interval model of one directed edge.

    ``histogram`` maps integer bucket ``i`` (interval in ``[i, i+1)`` minutes)
    to an observation count.  ``weight`` is the share of the source app's
    outgoing transitions that land on this edge.
    """

    alpha: float
    beta: float
    weight: float
    histogram: Mapping[int, int] = field(default_factory=dict)

    def prob(self, interval_min: float) -> float:
        return self.weight * self.alpha * math.exp(-self.beta * math.floor(interval_min))

    @property
    def mean_interval(self) -> float:
        return 1.0 / self.beta

    @property
    def count(self) -> int:
        return sum(self.histogram.values())


def _dense_probabilities(histogram: Mapping[int, int] | Sequence[int]) -> np.ndarray:
    if isinstance(histogram, Mapping):
        if not histogram:
            raise ValueError("histogram is empty")
        if min(histogram) < 0:
            raise ValueError("histogram buckets must be non-negative")
        counts = np.zeros(max(histogram) + 1)
        for bucket, n in histogram.items():
            counts[bucket] += n
    else:
        counts = np.asarray(histogram, dtype=float)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise ValueError("histogram is empty")
    if np.any(counts < 0):
        raise ValueError("histogram counts must be non-negative")
    return counts / total


def covered_buckets(probs: np.ndarray, coverage_threshold: float) -> int:
    """Number of leading buckets needed for cumulative mass >= threshold."""
    cum = np.cumsum(probs)
    # Tolerate round-off so e.g. 0.5 + 0.25 meets a 0.75 threshold.
    idx = int(np.searchsorted(cum, coverage_threshold - 1e-12))
    return min(idx + 1, probs.size)


def fit_objective(alpha: float, beta, buckets: np.ndarray, probs: np.ndarray):
    """Sum of absolute errors between ``alpha*exp(-beta*i)`` and ``probs[i]``."""
    beta = np.asarray(beta, dtype=float)
    model = alpha * np.exp(-np.multiply.outer(beta, buckets))
    return np.abs(model - probs).sum(axis=-1)


def _golden_section(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def fit_exponential(histogram: Mapping[int, int] | Sequence[int], coverage_threshold: float = 0.75) -> tuple[float, float]:
    """Fit ``p(i) ~ alpha * exp(-beta * i)`` to a bucketed interval histogram.

    Buckets 0, 1, 2, ... are included until their cumulative probability
    reaches ``coverage_threshold``. ``alpha`` is the bucket-0 probability and
    ``beta`` minimises the L1 error over the included buckets: a log-spaced
    grid scan over ``[BETA_MIN, BETA_MAX]`` followed by golden-section
    refinement between the neighbours of the best grid point.  Ties go to the
    smallest beta.
    """
    probs = _dense_probabilities(histogram)
    n = covered_buckets(probs, coverage_threshold)
    buckets = np.arange(n, dtype=float)
    target = probs[:n]
    alpha = float(probs[0])

    grid = np.geomspace(BETA_MIN, BETA_MAX, GRID_POINTS)
    values = fit_objective(alpha, grid, buckets, target)
    best = int(np.argmin(values))
    beta, best_value = float(grid[best]), float(values[best])

    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, GRID_POINTS - 1)]
    refined = _golden_section(lambda b: float(fit_objective(alpha, b, buckets, target)), lo, hi)
    refined_value = float(fit_objective(alpha, refined, buckets, target))
    if refined_value < best_value:
        beta = refined
    return alpha, beta


class Aug:
    """Directed per-user graph; ``edges[src][dst]`` is an :class:`EdgeModel`."""

    def __init__(self, n_apps: int, edges: Mapping[AppId, Mapping[AppId, EdgeModel]] | None = None):
        self.n_apps = n_apps
        self.edges: dict[AppId, dict[AppId, EdgeModel]] = {
            src: dict(sorted(out.items())) for src, out in sorted((edges or {}).items()) if out
        }

    def edge(self, src: AppId, dst: AppId) -> EdgeModel | None:
        return self.edges.get(src, {}).get(dst)

    def iter_edges(self) -> Iterable[tuple[AppId, AppId, EdgeModel]]:
        for src, out in self.edges.items():
            for dst, model in out.items():
                yield src, dst, model

    def restrict_sources(self, keep: Iterable[AppId]) -> "Aug":
        keep = set(keep)
        return Aug(self.n_apps, {s: out for s, out in self.edges.items() if s in keep})

    def to_dict(self) -> dict:
        return {
            "n_apps": self.n_apps,
            "edges": [
                {
                    "src": src,
                    "dst": dst,
                    "weight": m.weight,
                    "alpha": m.alpha,
                    "beta": m.beta,
                    "histogram": {str(k): v for k, v in sorted(m.histogram.items())},
                }
                for src, dst, m in self.iter_edges()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Aug":
        edges: dict[int, dict[int, EdgeModel]] = defaultdict(dict)
        for e in data["edges"]:
            hist = {int(k): int(v) for k, v in e["histogram"].items()}
            edges[int(e["src"])][int(e["dst"])] = EdgeModel(float(e["alpha"]), float(e["beta"]), float(e["weight"]), hist)
        return cls(int(data["n_apps"]), edges)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Aug) and self.n_apps == other.n_apps and self.edges == other.edges

    def __repr__(self) -> str:
        n_edges = sum(len(out) for out in self.edges.values())
        return f"Aug(n_apps={self.n_apps}, edges={n_edges})"


def build_aug(train_events: Sequence[UsageEvent], n_apps: int | None = None, coverage_threshold: float = 0.75) -> Aug:
    """Build the usage graph from one user's time-sorted training events.

    Every consecutive pair of launches is one observation on edge
    ``prev.app -> next.app`` with interval ``next.timestamp - prev.timestamp``.
    """
    if n_apps is None:
        n_apps = max((e.app for e in train_events), default=-1) + 1
    hists: dict[AppId, dict[AppId, Counter]] = defaultdict(lambda: defaultdict(Counter))
    for prev, nxt in zip(train_events, train_events[1:]):
        interval = nxt.timestamp - prev.timestamp
        if interval < 0:
            raise ValueError("train_events must be sorted by timestamp")
        hists[prev.app][nxt.app][math.floor(interval)] += 1

    edges: dict[AppId, dict[AppId, EdgeModel]] = {}
    for src, out in hists.items():
        total = sum(sum(c.values()) for c in out.values())
        edges[src] = {}
        for dst, counts in out.items():
            alpha, beta = fit_exponential(counts, coverage_threshold)
            edges[src][dst] = EdgeModel(alpha, beta, sum(counts.values()) / total, dict(sorted(counts.items())))
    return Aug(n_apps, edges)


def edge_prob(aug: Aug, src: AppId, dst: AppId, interval_min: float) -> float:
    """Probability of launching ``dst`` ``interval_min`` minutes after ``src``."""
    if interval_min < 0:
        raise ValueError(f"negative interval {interval_min!r}")
    model = aug.edge(src, dst)
    if model is None:
        return 0.0
    return model.prob(interval_min)
