"""Shared domain types: app interning, usage events, configuration, seeded RNG."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

AppId = int
# A sensor reading: float for numeric features, str for categorical ones,
# None when the reading is missing.
SensorValue = Union[float, str, None]
MISSING = None


class InputError(ValueError):
    """Bad user input: malformed file, invalid config value, unknown name."""


class InvariantError(RuntimeError):
    """An internal invariant was breached."""


class FeatureKind(str, enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class InternTable:
    """Bijection between string names and dense integer ids 0..n-1."""

    def __init__(self, names=()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        if not isinstance(name, str) or not name:
            raise InputError(f"cannot intern empty name {name!r}")
        try:
            return self._ids[name]
        except KeyError:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
            return idx

    def resolve(self, idx: int) -> str:
        return self._names[idx]

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, InternTable) and self._names == other._names

    def __repr__(self) -> str:
        return f"InternTable({self._names!r})"


def intern(name: str, table: InternTable) -> AppId:
    return table.intern(name)


@dataclass(frozen=True)
class UsageEvent:
    """One app launch. ``timestamp`` is in minutes since the epoch."""

    user: str
    timestamp: float
    app: AppId
    sensors: Mapping[str, SensorValue] = field(default_factory=dict)


def minutes_from_epoch_seconds(seconds: float) -> float:
    return float(seconds) / 60.0


@dataclass(frozen=True)
class Config:
    top_k: int = 4
    knn_fraction: float = 0.40
    rho: float = 0.70
    min_tp: float = 0.001
    max_lookback: int = 5
    refine_iters: int = 3
    coverage_threshold: float = 0.75
    rng_seed: int = 0
    train_fraction: float = 2.0 / 3.0
    cohort_app_edges: tuple[int, ...] = (5, 10, 20, 30)
    cohort_entropy_step: float = 0.5

    def __post_init__(self):
        _check_int(self, "top_k", lo=1)
        _check_real(self, "knn_fraction", 0.0, 1.0, lo_open=True)
        _check_real(self, "rho", 0.0, 1.0, lo_open=True)
        _check_real(self, "min_tp", 0.0, 1.0, lo_open=False, hi_open=True)
        _check_int(self, "max_lookback", lo=1)
        _check_int(self, "refine_iters", lo=1)
        _check_real(self, "coverage_threshold", 0.0, 1.0, lo_open=True)
        _check_int(self, "rng_seed", lo=0)
        _check_real(self, "train_fraction", 0.0, 1.0, lo_open=True, hi_open=True)
        edges = self.cohort_app_edges
        if not edges or any(not isinstance(e, int) or e < 1 for e in edges) or list(edges) != sorted(set(edges)):
            raise InputError(f"cohort_app_edges: expected increasing positive integers, got {edges!r}")
        _check_real(self, "cohort_entropy_step", 0.0, float("inf"), lo_open=True)

    def replace(self, **changes: Any) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["cohort_app_edges"] = list(self.cohort_app_edges)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        values = {k: coerce_config_value(k, v) for k, v in data.items()}
        return cls(**values)


# min_tp lives in [0, 1); 0 disables truncation.
def _check_real(cfg, name, lo, hi, lo_open=False, hi_open=False):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{name}: expected a real number, got {value!r}")
    bad = (value <= lo if lo_open else value < lo) or (value >= hi if hi_open else value > hi)
    if bad or value != value:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise InputError(f"{name}: {value!r} outside {lb}{lo}, {hi}{rb}")


def _check_int(cfg, name, lo):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InputError(f"{name}: expected an integer, got {value!r}")
    if value < lo:
        raise InputError(f"{name}: {value!r} must be >= {lo}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(Config)}


def coerce_config_value(name: str, raw: Any) -> Any:
    """Convert a raw (usually string) config value to the field's type."""
    if name not in _FIELD_TYPES:
        raise InputError(f"unknown config key: {name}")
    kind = _FIELD_TYPES[name]
    try:
        if name == "cohort_app_edges":
            if isinstance(raw, str):
                return tuple(int(x) for x in raw.split(",") if x.strip())
            return tuple(int(x) for x in raw)
        if not isinstance(raw, str):
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except (TypeError, ValueError):
        raise InputError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> Config:
    """Read a flat key=value config file, then apply overrides (e.g. CLI flags)."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return Config.from_dict(values)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(seed))
