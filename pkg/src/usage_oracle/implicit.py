"""Implicit (app-transition) features derived from an :class:`~usage_oracle.aug.Aug`.

An implicit feature for a target app is a vector over apps. Entry ``i`` sums,
over every occurrence of app ``i`` in the recent history, the probability of
every observed forward path from that occurrence to the target: the direct
edge plus every chain through later launches in the window.  A path is
dropped once its probability product falls below ``min_tp``; since every
factor is at most 1, extending a dropped path can never bring it back.

Only the last ``max_lookback`` launches take part.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aug import Aug, edge_prob
from .core import AppId, UsageEvent

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_HISTORY = 12


def _window(history: Sequence[UsageEvent], max_lookback: int) -> Sequence[UsageEvent]:
    return history[-max_lookback:] if max_lookback < len(history) else history


def _hop_table(window: Sequence[UsageEvent], aug: Aug) -> list[list[float]]:
    n = len(window)
    return [
        [edge_prob(aug, window[j].app, window[k].app, window[k].timestamp - window[j].timestamp) if k > j else 0.0 for k in range(n)]
        for j in range(n)
    ]


def _chain_values(window, hops, target: AppId, at: float, aug: Aug, min_tp: float) -> list[float]:
    """Per-position sums of surviving path products to ``target``.

    Positions are solved latest-first, so the surviving path products out of
    every later position are already known and get reused.
    """
    n = len(window)
    products: list[list[float]] = [[] for _ in range(n)]
    for j in range(n - 1, -1, -1):
        ev = window[j]
        out = []
        direct = edge_prob(aug, ev.app, target, at - ev.timestamp)
        if direct > 0.0 and direct >= min_tp:
            out.append(direct)
        row = hops[j]
        for k in range(j + 1, n):
            h = row[k]
            if h == 0.0:
                continue
            for tail in products[k]:
                v = h * tail
                if v > 0.0 and v >= min_tp:
                    out.append(v)
        products[j] = out
    return [sum(p) for p in products]


def _accumulate(window, values, n_apps: int) -> np.ndarray:
    feature = np.zeros(n_apps)
    for ev, v in zip(window, values):
        feature[ev.app] += v
    return feature


def _check_at(history, at):
    if history and at < history[-1].timestamp:
        raise ValueError("target time precedes the last history event")


def implicit_for_training(
    history: Sequence[UsageEvent],
    target: AppId,
    at: float,
    aug: Aug,
    min_tp: float = 0.001,
    max_lookback: int = 5,
) -> np.ndarray:
    """Implicit feature of a launch of ``target`` at time ``at`` given ``history``.

    ``history`` holds the events strictly before the target, sorted by time.
    An empty history yields the zero vector.
    """
    _check_at(history, at)
    window = _window(history, max_lookback)
    if not window:
        return np.zeros(aug.n_apps)
    values = _chain_values(window, _hop_table(window, aug), target, at, aug, min_tp)
    feature = _accumulate(window, values, aug.n_apps)
    if feature.max() > 1.0:
        log.debug("implicit feature entry %.4f exceeds 1 for target %d", feature.max(), target)
    return feature


def brute_force_if(
    history: Sequence[UsageEvent],
    target: AppId,
    at: float,
    aug: Aug,
    min_tp: float = 0.001,
    max_lookback: int = 5,
) -> np.ndarray:
    """Reference implementation by explicit path enumeration (no reuse).

    Every increasing sequence of window positions ``j < k1 < ... < km`` is a
    path ``j -> k1 -> ... -> km -> target``; its probability is the product
    of the edge probabilities along it.
    """
    if len(history) > BRUTE_FORCE_MAX_HISTORY:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_HISTORY} history events")
    window = list(_window(history, max_lookback))
    feature = np.zeros(aug.n_apps)
    n = len(window)
    for j in range(n):
        later = range(j + 1, n)
        for size in range(len(later) + 1):
            for mids in itertools.combinations(later, size):
                path = (j, *mids)
                p = 1.0
                for a, b in zip(path, path[1:]):
                    ea, eb = window[a], window[b]
                    p *= edge_prob(aug, ea.app, eb.app, eb.timestamp - ea.timestamp)
                last = window[path[-1]]
                p *= edge_prob(aug, last.app, target, at - last.timestamp)
                if p > 0.0 and p >= min_tp:
                    feature[window[j].app] += p
    return feature


def build_transition_matrix(
    history: Sequence[UsageEvent],
    at: float,
    aug: Aug,
    min_tp: float = 0.001,
    max_lookback: int = 5,
) -> np.ndarray:
    """Matrix whose column ``j`` is the implicit feature had app ``j`` launched at ``at``."""
    _check_at(history, at)
    n = aug.n_apps
    matrix = np.zeros((n, n))
    window = _window(history, max_lookback)
    if not window:
        return matrix
    hops = _hop_table(window, aug)
    for target in range(n):
        values = _chain_values(window, hops, target, at, aug, min_tp)
        matrix[:, target] = _accumulate(window, values, n)
    return matrix


@dataclass(frozen=True)
class RefinementStep:
    implicit: np.ndarray
    theta_raw: np.ndarray
    theta: np.ndarray


def _normalize(theta: np.ndarray) -> np.ndarray:
    total = theta.sum()
    if total <= 0.0:
        return np.full(theta.shape, 1.0 / theta.size)
    return theta / total


def refine(matrix: np.ndarray, refine_iters: int = 3, theta0: np.ndarray | None = None) -> list[RefinementStep]:
    """Alternate the mixture and one-step-walk updates on ``matrix``.

    Each iteration mixes the columns by the current next-app distribution
    (``M @ theta``), then recomputes the distribution from scratch as one
    walk step from that mixture (``if_t @ M``) and normalises it.  Stops
    early once the most likely next app is the same for two consecutive
    refined distributions.
    """
    n = matrix.shape[1]
    theta = np.full(n, 1.0 / n) if theta0 is None else np.asarray(theta0, dtype=float)
    steps: list[RefinementStep] = []
    for _ in range(refine_iters):
        implicit = matrix @ theta
        raw = implicit @ matrix
        new_theta = _normalize(raw)
        steps.append(RefinementStep(implicit, raw, new_theta))
        if len(steps) >= 2 and int(np.argmax(new_theta)) == int(np.argmax(theta)):
            break
        theta = new_theta
    return steps


def implicit_for_testing(
    history: Sequence[UsageEvent],
    at: float,
    aug: Aug,
    min_tp: float = 0.001,
    max_lookback: int = 5,
    refine_iters: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Estimate ``(implicit feature, next-app distribution)`` for a query at ``at``."""
    matrix = build_transition_matrix(history, at, aug, min_tp, max_lookback)
    last = refine(matrix, refine_iters)[-1]
    return last.implicit, last.theta
