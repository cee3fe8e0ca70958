"""Usage-log ingestion, chronological train/test split, and synthetic traces.

Log format is JSONL. The first line carries the feature schema::

    {"schema": [["location", "categorical"], ["hour", "numeric"]]}

followed by one event per line::

    {"user": "u0", "ts_min": 21255840.5, "app": "Maps", "sensors": {"location": "home", "hour": 7.5}}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureKind, InputError, InternTable, UsageEvent

Schema = list[tuple[str, FeatureKind]]


@dataclass
class UserTrace:
    user: str
    events: list[UsageEvent]
    split_index: int | None = None
    excluded: bool = False

    @property
    def train(self) -> list[UsageEvent]:
        return self.events[: self.split_index]

    @property
    def test(self) -> list[UsageEvent]:
        return self.events[self.split_index :]


@dataclass
class Dataset:
    users: list[UserTrace]
    feature_schema: Schema
    apps: InternTable = field(default_factory=InternTable)

    @property
    def n_apps(self) -> int:
        return len(self.apps)

    def kind_of(self, name: str) -> FeatureKind:
        return dict(self.feature_schema)[name]

    def user(self, user_id: str) -> UserTrace:
        for trace in self.users:
            if trace.user == user_id:
                return trace
        raise KeyError(user_id)


def parse_schema(raw) -> Schema:
    schema: Schema = []
    seen = set()
    for item in raw:
        try:
            name, kind = item
        except (TypeError, ValueError):
            raise InputError(f"schema entry {item!r} is not a [name, kind] pair") from None
        try:
            kind = FeatureKind(kind)
        except ValueError:
            raise InputError(f"schema: unknown feature kind {kind!r} for {name!r}") from None
        if name in seen:
            raise InputError(f"schema: duplicate feature {name!r}")
        seen.add(name)
        schema.append((str(name), kind))
    return schema


def _coerce_sensor(value, kind: FeatureKind, name: str, lineno: int):
    if value is None:
        return None
    if kind is FeatureKind.NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"line {lineno}: sensor {name!r} expects a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise InputError(f"line {lineno}: sensor {name!r} is not finite")
        return value
    if not isinstance(value, str):
        raise InputError(f"line {lineno}: sensor {name!r} expects a string, got {value!r}")
    return value


def _sort_traces(by_user: dict[str, list[UsageEvent]]) -> list[UserTrace]:
    # Stable sort keeps file order for equal timestamps.
    return [
        UserTrace(user, sorted(events, key=lambda e: e.timestamp))
        for user, events in sorted(by_user.items())
    ]


def load_log(path: str | Path, schema: Schema | None = None) -> Dataset:
    """Parse a JSONL usage log into per-user, time-sorted traces.

    If ``schema`` is given it must agree with the file's header line.
    App ids are interned in sorted name order, so shuffled input (or a
    write/load round trip) yields the same Dataset.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read log {path}: {exc}") from None
    if not lines:
        raise InputError(f"{path}: empty log (missing schema header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise InputError(f"line 1: bad JSON ({exc.msg})") from None
    if not isinstance(header, dict) or "schema" not in header:
        raise InputError("line 1: expected a schema header")
    file_schema = parse_schema(header["schema"])
    if schema is not None and list(schema) != file_schema:
        raise InputError(f"line 1: schema {file_schema!r} does not match expected {list(schema)!r}")
    kinds = dict(file_schema)

    raw_rows: dict[str, list[tuple[float, str, dict, int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: bad JSON ({exc.msg})") from None
        if not isinstance(row, dict):
            raise InputError(f"line {lineno}: expected an object")
        try:
            user, ts, app = row["user"], row["ts_min"], row["app"]
        except KeyError as exc:
            raise InputError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        if not isinstance(user, str) or not user:
            raise InputError(f"line {lineno}: bad user {user!r}")
        if not isinstance(app, str) or not app:
            raise InputError(f"line {lineno}: bad app {app!r}")
        if isinstance(ts, bool) or not isinstance(ts, (int, float)) or not math.isfinite(ts):
            raise InputError(f"line {lineno}: bad ts_min {ts!r}")
        sensors_in = row.get("sensors") or {}
        if not isinstance(sensors_in, dict):
            raise InputError(f"line {lineno}: sensors must be an object")
        extra = set(sensors_in) - set(kinds)
        if extra:
            raise InputError(f"line {lineno}: sensor(s) not in schema: {', '.join(sorted(extra))}")
        sensors = {
            name: _coerce_sensor(sensors_in.get(name), kind, name, lineno)
            for name, kind in file_schema
        }
        raw_rows.setdefault(user, []).append((float(ts), app, sensors, lineno))

    apps = InternTable(sorted({r[1] for rows in raw_rows.values() for r in rows}))
    by_user: dict[str, list[UsageEvent]] = {}
    for user in sorted(raw_rows):
        rows = sorted(raw_rows[user], key=lambda r: (r[0], r[3]))
        by_user[user] = [UsageEvent(user, ts, apps.intern(app), sensors) for ts, app, sensors, _ in rows]
    return Dataset(_sort_traces(by_user), file_schema, apps)


def _event_json(event: UsageEvent, apps: InternTable, schema: Schema) -> str:
    sensors = {name: event.sensors.get(name) for name, _ in schema}
    return json.dumps(
        {"user": event.user, "ts_min": event.timestamp, "app": apps.resolve(event.app), "sensors": sensors},
    )


def write_log(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` in the JSONL format read by :func:`load_log`."""
    lines = [json.dumps({"schema": [[name, kind.value] for name, kind in dataset.feature_schema]})]
    for trace in dataset.users:
        lines.extend(_event_json(e, dataset.apps, dataset.feature_schema) for e in trace.events)
    Path(path).write_text("\n".join(lines) + "\n")


def split(dataset: Dataset, train_fraction: float) -> Dataset:
    """Chronological per-user split; sets ``split_index`` and ``excluded``."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError(f"train_fraction {train_fraction!r} outside (0, 1)")
    users = []
    for trace in dataset.users:
        n = len(trace.events)
        idx = math.floor(train_fraction * n)
        excluded = idx < 2 or n - idx < 1
        users.append(UserTrace(trace.user, trace.events, idx, excluded))
    return Dataset(users, dataset.feature_schema, dataset.apps)


# ---------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class ContextRule:
    """Boost the weight of ``app`` as a session opener when a sensor matches.

    Categorical sensors match on ``equals``; numeric ones on ``low <= x < high``.
    """

    sensor: str
    app: int
    boost: float
    equals: str | None = None
    low: float | None = None
    high: float | None = None

    def matches(self, sensors) -> bool:
        value = sensors.get(self.sensor)
        if value is None:
            return False
        if self.equals is not None:
            return value == self.equals
        if self.low is not None and value < self.low:
            return False
        if self.high is not None and value >= self.high:
            return False
        return True


@dataclass(frozen=True)
class GeneratorSpec:
    n_users: int
    n_apps: int
    n_events_per_user: int
    planted_chains: tuple[tuple[tuple[int, ...], float], ...] = ()
    context_rules: tuple[ContextRule, ...] = ()
    noise_rate: float = 0.0
    session_gap_mean: float = 45.0
    locations: tuple[str, ...] = ("home", "work", "gym", "cafe")
    start_minute: float = 21255840.0  # 2010-06-01T00:00Z

    def __post_init__(self):
        for name in ("n_users", "n_apps", "n_events_per_user"):
            if getattr(self, name) < 1:
                raise InputError(f"GeneratorSpec.{name} must be positive")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise InputError("GeneratorSpec.noise_rate must lie in [0, 1]")
        heads = set()
        for apps, mean in self.planted_chains:
            if not apps or any(not 0 <= a < self.n_apps for a in apps):
                raise InputError(f"planted chain {apps!r} references apps outside [0, {self.n_apps})")
            if mean <= 0:
                raise InputError("planted chain mean interval must be positive")
            if apps[0] in heads:
                raise InputError(f"two planted chains start with app {apps[0]}")
            heads.add(apps[0])
        for rule in self.context_rules:
            if not 0 <= rule.app < self.n_apps:
                raise InputError(f"context rule app {rule.app} outside [0, {self.n_apps})")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        data["planted_chains"] = tuple((tuple(c["apps"]), float(c["mean_interval"])) for c in data.get("planted_chains", ()))
        data["context_rules"] = tuple(ContextRule(**r) for r in data.get("context_rules", ()))
        if "locations" in data:
            data["locations"] = tuple(data["locations"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InputError(f"bad generator spec: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read generator spec {path}: {exc}") from None


GENERATED_SCHEMA: Schema = [
    ("location", FeatureKind.CATEGORICAL),
    ("hour", FeatureKind.NUMERIC),
    ("battery", FeatureKind.NUMERIC),
    ("wifi", FeatureKind.NUMERIC),
    ("charging", FeatureKind.CATEGORICAL),
]

_WIFI_BY_LOCATION = {"home": -45.0, "work": -60.0, "gym": -80.0, "cafe": -70.0}


def planted_spec(n_users: int = 10, n_events_per_user: int = 2000, noise_rate: float = 0.2) -> GeneratorSpec:
    """Default planted dataset used by the acceptance suite.

    Apps 0-8 form three 3-app chains with a one-minute mean gap; apps 9-11
    are standalone.  The day is cut into six 4-hour blocks and each block
    favours one standalone app and one chain head.  Sessions are ~2 hours
    apart, so a chain rarely carries over from one session to the next.
    """
    chains = tuple(((3 * c, 3 * c + 1, 3 * c + 2), 1.0) for c in range(3))
    rules = []
    for block in range(6):
        low, high = 4.0 * block, 4.0 * block + 4.0
        rules.append(ContextRule("hour", app=9 + block % 3, boost=10.0, low=low, high=high))
        rules.append(ContextRule("hour", app=3 * (block % 3), boost=10.0, low=low, high=high))
    return GeneratorSpec(
        n_users=n_users,
        n_apps=12,
        n_events_per_user=n_events_per_user,
        planted_chains=chains,
        context_rules=tuple(rules),
        noise_rate=noise_rate,
        session_gap_mean=120.0,
    )


def _session_sensors(rng, spec, t, battery, charging):
    location = spec.locations[int(rng.integers(len(spec.locations)))]
    wifi = _WIFI_BY_LOCATION.get(location, -75.0) + float(rng.normal(0.0, 4.0))
    return {
        "location": location,
        "hour": round(((t - spec.start_minute) % 1440.0) / 60.0, 4),
        "battery": round(battery, 2),
        "wifi": round(wifi, 2),
        "charging": "yes" if charging else "no",
    }


def _generate_user(spec: GeneratorSpec, user: str, rng: np.random.Generator, noise_rng: np.random.Generator) -> list[UsageEvent]:
    chains = {apps[0]: (apps, mean) for apps, mean in spec.planted_chains}
    events: list[UsageEvent] = []
    t = spec.start_minute + float(rng.uniform(0.0, 60.0))
    battery = 80.0
    while len(events) < spec.n_events_per_user:
        charging = bool(rng.random() < 0.2)
        sensors = _session_sensors(rng, spec, t, battery, charging)
        weights = np.ones(spec.n_apps)
        for rule in spec.context_rules:
            if rule.matches(sensors):
                weights[rule.app] += rule.boost
        opener = int(rng.choice(spec.n_apps, p=weights / weights.sum()))
        planned, mean = chains.get(opener, ((opener,), 1.0))
        for pos, app in enumerate(planned):
            if pos:
                t += float(rng.exponential(mean))
                sensors = dict(sensors, hour=round(((t - spec.start_minute) % 1440.0) / 60.0, 4))
            if noise_rng.random() < spec.noise_rate:
                app = int(noise_rng.integers(spec.n_apps))
            events.append(UsageEvent(user, round(t, 6), app, sensors))
            if len(events) == spec.n_events_per_user:
                break
        t += float(rng.exponential(spec.session_gap_mean))
        battery = min(100.0, battery + 15.0) if charging else max(5.0, battery - float(rng.uniform(0.0, 6.0)))
    return events


def generate(spec: GeneratorSpec, seed: int) -> Dataset:
    """Draw a synthetic dataset; deterministic for a fixed ``seed``.

    Sessions open with an app drawn from context-boosted weights. An opener
    that heads a planted chain is followed by the rest of the chain, with
    exponential gaps of the chain's mean. Each emitted event is replaced by a
    uniformly random app with probability ``noise_rate``.  Replacements
    come from their own random stream, so changing ``noise_rate`` alone
    keeps every session's opener, length and timing.
    """
    apps = InternTable(f"app{i:02d}" for i in range(spec.n_apps))
    root = np.random.SeedSequence(seed)
    traces = []
    for idx, child in enumerate(root.spawn(spec.n_users)):
        user = f"user{idx:03d}"
        main, noise = child.spawn(2)
        traces.append(UserTrace(user, _generate_user(spec, user, make_rng_from(main), make_rng_from(noise))))
    return Dataset(traces, list(GENERATED_SCHEMA), apps)


def make_rng_from(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))
