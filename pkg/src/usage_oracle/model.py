"""Per-user KAP model: graph + training implicit features + selection + kNN.

Also hosts the baseline predictors and the on-disk model bundle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .aug import Aug, build_aug
from .core import Config, FeatureKind, InputError, InternTable, UsageEvent
from .implicit import build_transition_matrix, implicit_for_training, refine
from .knn import Normalizer, PredictionList, TrainingSet, predict_knn, predict_mfu, predict_mru
from .mdlselect import FeatureColumn, SelectionRound, selection_rounds

SCHEMA_VERSION = 1


def implicit_feature_id(app_name: str) -> str:
    return f"IF[{app_name}]"


def training_implicit_features(events: Sequence[UsageEvent], aug: Aug, config: Config) -> np.ndarray:
    """Row ``i``: implicit feature of event ``i`` given the events before it."""
    out = np.zeros((len(events), aug.n_apps))
    lookback = config.max_lookback
    for i, ev in enumerate(events):
        history = events[max(0, i - lookback) : i]
        out[i] = implicit_for_training(history, ev.app, ev.timestamp, aug, config.min_tp, lookback)
    return out


@dataclass
class FeatureSpace:
    """Selected features in pick order, split into numeric and categorical blocks."""

    features: list[str]
    kinds: list[FeatureKind]
    implicit_apps: dict[str, int]  # feature id -> app id
    categories: dict[str, list[str]] = field(default_factory=dict)

    @property
    def numeric(self) -> list[str]:
        return [f for f, k in zip(self.features, self.kinds) if k is FeatureKind.NUMERIC]

    @property
    def categorical(self) -> list[str]:
        return [f for f, k in zip(self.features, self.kinds) if k is FeatureKind.CATEGORICAL]

    def encode(self, sensors: Sequence[Mapping], implicit: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw (unnormalized) numeric block and categorical codes for rows of events."""
        numeric_ids = self.numeric
        num = np.empty((len(sensors), len(numeric_ids)))
        for j, fid in enumerate(numeric_ids):
            if fid in self.implicit_apps:
                num[:, j] = implicit[:, self.implicit_apps[fid]]
            else:
                num[:, j] = [np.nan if s.get(fid) is None else float(s[fid]) for s in sensors]
        cat_ids = self.categorical
        cat = np.empty((len(sensors), len(cat_ids)), dtype=int)
        for j, fid in enumerate(cat_ids):
            index = {v: i for i, v in enumerate(self.categories[fid])}
            cat[:, j] = [-1 if s.get(fid) is None else index.get(s[fid], -2) for s in sensors]
        return num, cat


@dataclass
class KapModel:
    user: str
    config: Config
    space: FeatureSpace
    aug: Aug
    normalizer: Normalizer
    train: TrainingSet
    rounds: list[SelectionRound] = field(default_factory=list)

    @property
    def selected(self) -> list[str]:
        return list(self.space.features)

    def query_features(self, history: Sequence[UsageEvent], event: UsageEvent) -> tuple[np.ndarray, np.ndarray, dict]:
        cfg = self.config
        debug: dict = {}
        implicit = np.zeros((1, self.aug.n_apps))
        if self.space.implicit_apps:
            window = history[-cfg.max_lookback :]
            matrix = build_transition_matrix(window, event.timestamp, self.aug, cfg.min_tp, cfg.max_lookback)
            last = refine(matrix, cfg.refine_iters)[-1]
            implicit[0] = last.implicit
            debug = {"matrix": matrix.tolist(), "theta": last.theta.tolist(), "implicit": last.implicit.tolist()}
        num, cat = self.space.encode([event.sensors], implicit)
        return self.normalizer.transform(num)[0], cat[0], debug

    def predict(self, history: Sequence[UsageEvent], event: UsageEvent, k: int) -> PredictionList:
        num, cat, _ = self.query_features(history, event)
        return predict_knn(self.train, num, cat, self.config.knn_fraction, k)

    def to_dict(self) -> dict:
        return {
            "user": self.user,
            "selected": self.space.features,
            "kinds": [k.value for k in self.space.kinds],
            "implicit_apps": self.space.implicit_apps,
            "categories": self.space.categories,
            "aug": self.aug.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "train_numeric": [[None if np.isnan(x) else float(x) for x in row] for row in self.train.numeric],
            "train_categorical": self.train.categorical.tolist(),
            "labels": self.train.labels.tolist(),
            "rounds": [r.__dict__ for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, data: Mapping, config: Config) -> "KapModel":
        space = FeatureSpace(
            list(data["selected"]),
            [FeatureKind(k) for k in data["kinds"]],
            {k: int(v) for k, v in data["implicit_apps"].items()},
            {k: list(v) for k, v in data["categories"].items()},
        )
        n = len(data["labels"])
        numeric = np.array([[np.nan if x is None else x for x in row] for row in data["train_numeric"]], dtype=float).reshape(n, len(space.numeric))
        categorical = np.array(data["train_categorical"], dtype=int).reshape(n, len(space.categorical))
        return cls(
            data["user"],
            config,
            space,
            Aug.from_dict(data["aug"]),
            Normalizer.from_dict(data["normalizer"]),
            TrainingSet(numeric, categorical, np.array(data["labels"], dtype=int)),
            [SelectionRound(**r) for r in data["rounds"]],
        )


def candidate_columns(events: Sequence[UsageEvent], implicit: np.ndarray, schema, apps: InternTable) -> dict[str, FeatureColumn]:
    columns: dict[str, FeatureColumn] = {}
    for name, kind in schema:
        if kind is FeatureKind.NUMERIC:
            values = np.array([np.nan if e.sensors.get(name) is None else float(e.sensors[name]) for e in events])
        else:
            values = [e.sensors.get(name) for e in events]
        columns[name] = FeatureColumn(name, kind, values)
    for app in sorted({e.app for e in events}):
        fid = implicit_feature_id(apps.resolve(app))
        columns[fid] = FeatureColumn(fid, FeatureKind.NUMERIC, implicit[:, app])
    return columns


def train_user(
    user: str,
    train_events: Sequence[UsageEvent],
    schema,
    apps: InternTable,
    config: Config,
    select: bool = True,
) -> KapModel:
    """Fit one user's model from their chronologically first events."""
    if not train_events:
        raise InputError(f"user {user}: no training events")
    n_apps = len(apps)
    full_aug = build_aug(train_events, n_apps, config.coverage_threshold)
    implicit = training_implicit_features(train_events, full_aug, config)
    labels = np.array([e.app for e in train_events], dtype=int)
    columns = candidate_columns(train_events, implicit, schema, apps)

    if select:
        rounds = selection_rounds(columns, labels, config.rho)
        features = [r.feature for r in rounds]
    else:
        rounds = []
        features = list(columns)

    implicit_apps = {fid: apps.get(fid[3:-1]) for fid in features if fid.startswith("IF[") and fid not in dict(schema)}
    aug = full_aug
    if select:
        # Only the picked apps' outgoing transitions are kept.
        aug = full_aug.restrict_sources(implicit_apps.values())
        if implicit_apps and aug != full_aug:
            implicit = training_implicit_features(train_events, aug, config)

    kinds = [columns[f].kind for f in features]
    categories = {
        f: sorted({v for v in columns[f].values if v is not None}) for f, k in zip(features, kinds) if k is FeatureKind.CATEGORICAL
    }
    space = FeatureSpace(features, kinds, implicit_apps, categories)
    num, cat = space.encode([e.sensors for e in train_events], implicit)
    normalizer = Normalizer.fit(kinds, num)
    train = TrainingSet(normalizer.transform(num), cat, labels)
    return KapModel(user, config, space, aug, normalizer, train, rounds)


# ---------------------------------------------------------------------------
# Predictors used by the evaluation harness


class Predictor:
    name = "base"

    def predict(self, history: Sequence[UsageEvent], event: UsageEvent, k: int) -> PredictionList:
        raise NotImplementedError


class KapPredictor(Predictor):
    name = "kap"

    def __init__(self, model: KapModel):
        self.model = model

    @classmethod
    def fit(cls, user, train_events, schema, apps, config, select: bool = True):
        return cls(train_user(user, train_events, schema, apps, config, select=select))

    def predict(self, history, event, k):
        return self.model.predict(history, event, k)


class MfuPredictor(Predictor):
    name = "mfu"

    def __init__(self, labels):
        self.labels = list(labels)
        self._ranking = predict_mfu(self.labels, len(set(self.labels)))

    @classmethod
    def fit(cls, user, train_events, schema, apps, config):
        return cls(e.app for e in train_events)

    def predict(self, history, event, k):
        return self._ranking.truncate(k)


class MruPredictor(Predictor):
    name = "mru"

    def __init__(self, labels):
        self.labels = list(labels)

    @classmethod
    def fit(cls, user, train_events, schema, apps, config):
        return cls(e.app for e in train_events)

    def predict(self, history, event, k):
        # Enough recent launches to find k distinct apps in practice.
        recent = [e.app for e in history[-50 * k :]]
        return predict_mru(recent, self.labels, k)


class KapAllFeaturesPredictor(KapPredictor):
    name = "kap_all"

    @classmethod
    def fit(cls, user, train_events, schema, apps, config, select: bool = False):
        return super().fit(user, train_events, schema, apps, config, select=False)


PredictorFactory = Callable[..., Predictor]

PREDICTORS: dict[str, PredictorFactory] = {
    "kap": KapPredictor.fit,
    "kap_all": KapAllFeaturesPredictor.fit,
    "mfu": MfuPredictor.fit,
    "mru": MruPredictor.fit,
}


def resolve_predictors(names: Sequence[str]) -> dict[str, PredictorFactory]:
    unknown = [n for n in names if n not in PREDICTORS]
    if unknown:
        raise InputError(f"unknown predictor(s): {', '.join(unknown)}; choose from {', '.join(PREDICTORS)}")
    return {n: PREDICTORS[n] for n in names}


# ---------------------------------------------------------------------------
# Bundle persistence


@dataclass
class ModelBundle:
    config: Config
    apps: InternTable
    schema: list
    users: dict[str, KapModel]

    def to_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "apps": self.apps.names,
            "feature_schema": [[n, k.value] for n, k in self.schema],
            "users": {u: m.to_dict() for u, m in sorted(self.users.items())},
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "bundle.json"
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, model_dir: str | Path) -> "ModelBundle":
        path = Path(model_dir)
        if path.is_dir():
            path = path / "bundle.json"
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read model bundle {path}: {exc}") from None
        if data.get("schema_version") != SCHEMA_VERSION:
            raise InputError(f"{path}: unsupported bundle schema_version {data.get('schema_version')!r}")
        config = Config.from_dict(data["config"])
        users = {u: KapModel.from_dict(m, config) for u, m in data["users"].items()}
        schema = [(n, FeatureKind(k)) for n, k in data["feature_schema"]]
        return cls(config, InternTable(data["apps"]), schema, users)
