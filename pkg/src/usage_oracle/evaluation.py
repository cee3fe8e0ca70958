"""Recall / nDCG metrics, per-user evaluation, cohort breakdowns and parameter sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import AppId, Config, InputError
from .ingest import Dataset
from .knn import PredictionList
from .model import PredictorFactory

log = logging.getLogger(__name__)

Case = tuple[AppId, "PredictionList | Sequence[AppId]"]


def _apps(listing) -> list[AppId]:
    return listing.apps if isinstance(listing, PredictionList) else list(listing)


def _require_cases(cases):
    cases = list(cases)
    if not cases:
        raise ValueError("no cases to score")
    return cases


def recall(cases: Iterable[Case]) -> float:
    """Fraction of cases whose true app appears anywhere in its list."""
    cases = _require_cases(cases)
    return sum(truth in _apps(listing) for truth, listing in cases) / len(cases)


def dcg_at(position: int | None) -> float:
    return 0.0 if position is None else 1.0 / math.log2(position + 1)


def ndcg(cases: Iterable[Case]) -> float:
    """Mean of ``1/log2(i+1)`` for truth at 1-indexed position ``i`` (0 if absent)."""
    cases = _require_cases(cases)
    total = 0.0
    for truth, listing in cases:
        apps = _apps(listing)
        total += dcg_at(apps.index(truth) + 1 if truth in apps else None)
    return total / len(cases)


def usage_entropy(labels: Iterable[AppId]) -> float:
    counts = np.array(list(Counter(labels).values()), dtype=float)
    if counts.size == 0:
        raise ValueError("no labels")
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def top_k_frequency(labels_or_counts, k: int) -> float:
    """Share of usage taken by the ``k`` most frequent apps.

    Accepts either a sequence of labels or a mapping app -> count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = labels_or_counts if isinstance(labels_or_counts, Mapping) else Counter(labels_or_counts)
    values = sorted(counts.values(), reverse=True)
    total = sum(values)
    if total == 0:
        raise ValueError("no usage")
    return sum(values[:k]) / total


@dataclass
class Score:
    recall: float
    ndcg: float
    n_cases: int


@dataclass
class UserResult:
    user: str
    n_train: int
    n_installed: int
    entropy: float
    scores: dict[str, dict[int, Score]]  # predictor -> k -> score


@dataclass
class EvalReport:
    per_user: dict[str, UserResult]
    aggregate: dict[str, dict[int, Score]]
    cohorts: list[dict] = field(default_factory=list)
    sweep_rows: list[dict] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for pred, by_k in self.aggregate.items():
            for k, s in by_k.items():
                out.append(_row("aggregate", "all", pred, k, s))
        for user, res in sorted(self.per_user.items()):
            for pred, by_k in res.scores.items():
                for k, s in by_k.items():
                    out.append(_row("user", user, pred, k, s))
        out.extend(self.cohorts)
        return out

    def to_csv(self) -> str:
        return rows_to_csv(self.rows(), REPORT_COLUMNS)

    def recall_of(self, predictor: str, k: int) -> float:
        return self.aggregate[predictor][k].recall


REPORT_COLUMNS = ["scope", "cohort", "predictor", "k", "recall", "ndcg", "n_cases"]
SWEEP_COLUMNS = ["axis", "value", "predictor", "k", "recall", "ndcg", "n_cases"]


def _row(scope, cohort, pred, k, s: Score) -> dict:
    return {"scope": scope, "cohort": cohort, "predictor": pred, "k": k, "recall": s.recall, "ndcg": s.ndcg, "n_cases": s.n_cases}


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in row.items()})
    return buf.getvalue()


def _mean_scores(results: Sequence[UserResult]) -> dict[str, dict[int, Score]]:
    """Unweighted mean over users; ``n_cases`` is pooled."""
    out: dict[str, dict[int, Score]] = {}
    if not results:
        return out
    for pred, by_k in results[0].scores.items():
        out[pred] = {}
        for k in by_k:
            scores = [r.scores[pred][k] for r in results]
            out[pred][k] = Score(
                float(np.mean([s.recall for s in scores])),
                float(np.mean([s.ndcg for s in scores])),
                sum(s.n_cases for s in scores),
            )
    return out


def app_count_bucket(n: int, edges: Sequence[int]) -> str:
    lo = 1
    for edge in edges:
        if n <= edge:
            return f"{lo}-{edge}"
        lo = edge + 1
    return f">{edges[-1]}"


def entropy_bucket(h: float, step: float) -> str:
    lo = math.floor(h / step + 1e-12) * step
    return f"[{lo:g},{lo + step:g})"


def usage_count_buckets(counts: Sequence[int]) -> list[str]:
    """Quartile labels Q1..Q4 of the users' training sizes."""
    q1, q2, q3 = np.quantile(np.asarray(counts, dtype=float), [0.25, 0.5, 0.75])
    labels = []
    for c in counts:
        labels.append("Q1" if c <= q1 else "Q2" if c <= q2 else "Q3" if c <= q3 else "Q4")
    return labels


def cohort_rows(results: Sequence[UserResult], config: Config) -> list[dict]:
    results = sorted(results, key=lambda r: r.user)
    if not results:
        return []
    axes = {
        "installed_apps": [app_count_bucket(r.n_installed, config.cohort_app_edges) for r in results],
        "usage_count": usage_count_buckets([r.n_train for r in results]),
        "entropy": [entropy_bucket(r.entropy, config.cohort_entropy_step) for r in results],
    }
    rows = []
    for scope, labels in axes.items():
        for label in sorted(set(labels)):
            members = [r for r, lab in zip(results, labels) if lab == label]
            for pred, by_k in _mean_scores(members).items():
                for k, s in by_k.items():
                    rows.append(_row(scope, label, pred, k, s))
    return rows


def evaluate_user(trace, dataset: Dataset, config: Config, predictors: Mapping[str, PredictorFactory], ks: Sequence[int]) -> UserResult:
    train = trace.train
    fitted = {name: factory(trace.user, train, dataset.feature_schema, dataset.apps, config) for name, factory in predictors.items()}
    k_max = max(ks)
    cases: dict[str, list[tuple[AppId, PredictionList]]] = {name: [] for name in predictors}
    events = trace.events
    for i in range(trace.split_index, len(events)):
        history, event = events[:i], events[i]
        for name, predictor in fitted.items():
            cases[name].append((event.app, predictor.predict(history, event, k_max)))
    scores: dict[str, dict[int, Score]] = {}
    for name, pred_cases in cases.items():
        scores[name] = {}
        for k in ks:
            truncated = [(truth, pl.truncate(k)) for truth, pl in pred_cases]
            scores[name][k] = Score(recall(truncated), ndcg(truncated), len(truncated))
    labels = [e.app for e in train]
    return UserResult(trace.user, len(train), len(set(labels)), usage_entropy(labels), scores)


def run_evaluation(
    dataset: Dataset,
    config: Config,
    predictors: Mapping[str, PredictorFactory],
    ks: Sequence[int] | None = None,
) -> EvalReport:
    """Evaluate every predictor on every included user of a split dataset.

    Each test launch is predicted from all events before it; models are fit
    on the training prefix only.
    """
    if any(t.split_index is None for t in dataset.users):
        raise InputError("dataset is not split")
    ks = sorted(set(ks or [config.top_k]))
    results = []
    for trace in sorted(dataset.users, key=lambda t: t.user):
        if trace.excluded or trace.split_index >= len(trace.events):
            log.info("skipping user %s: not enough train/test events", trace.user)
            continue
        results.append(evaluate_user(trace, dataset, config, predictors, ks))
    per_user = {r.user: r for r in results}
    return EvalReport(per_user, _mean_scores(results), cohort_rows(results, config))


SWEEP_AXES = ("top_k", "rho", "min_tp", "refine_iters", "knn_fraction", "coverage_threshold", "max_lookback")


def run_sweep(
    dataset: Dataset,
    config: Config,
    axis: str,
    values: Sequence,
    predictors: Mapping[str, PredictorFactory],
) -> list[dict]:
    """One aggregate row per (value, predictor) along a config axis."""
    if axis not in SWEEP_AXES:
        raise InputError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    rows = []
    if axis == "top_k":
        ks = [int(v) for v in values]
        report = run_evaluation(dataset, config, predictors, ks)
        for k in ks:
            for pred in predictors:
                s = report.aggregate[pred][k]
                rows.append({"axis": axis, "value": k, "predictor": pred, "k": k, "recall": s.recall, "ndcg": s.ndcg, "n_cases": s.n_cases})
        return rows
    for value in values:
        cfg = config.replace(**{axis: value})
        report = run_evaluation(dataset, cfg, predictors)
        for pred in predictors:
            s = report.aggregate[pred][cfg.top_k]
            rows.append({"axis": axis, "value": value, "predictor": pred, "k": cfg.top_k, "recall": s.recall, "ndcg": s.ndcg, "n_cases": s.n_cases})
    return rows
