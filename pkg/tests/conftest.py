import functools

import numpy as np
import pytest

from usage_oracle.aug import Aug, EdgeModel
from usage_oracle.core import Config, UsageEvent
from usage_oracle.evaluation import run_evaluation
from usage_oracle.ingest import generate, planted_spec, split
from usage_oracle.model import resolve_predictors

PLANTED_SEED = 7

# Filled by the acceptance tests; printed once at the end of the session.
ACCEPTANCE_LINES: dict[int, str] = {}


def ev(app, t, user="u", **sensors):
    return UsageEvent(user, float(t), app, sensors)


def events(*pairs, user="u"):
    """``events((0, 0.0), (1, 1.5))`` -> launches of app 0 at 0 and app 1 at 1.5."""
    return [ev(a, t, user) for a, t in pairs]


@functools.lru_cache(maxsize=None)
def planted_dataset():
    cfg = Config()
    return split(generate(planted_spec(), PLANTED_SEED), cfg.train_fraction)


@functools.lru_cache(maxsize=None)
def planted_report(predictors: tuple[str, ...], **overrides):
    """Evaluation report on the planted dataset, cached across test modules."""
    return run_evaluation(planted_dataset(), Config(**overrides), resolve_predictors(list(predictors)))


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def cfg():
    return Config()


def random_aug(rng: np.random.Generator, n_apps: int, density: float = 0.6) -> Aug:
    """Random graph with per-source weights summing to 1 and varied decay."""
    edges = {}
    for src in range(n_apps):
        dsts = [d for d in range(n_apps) if rng.random() < density]
        if not dsts:
            continue
        w = rng.random(len(dsts)) + 0.05
        w /= w.sum()
        edges[src] = {d: EdgeModel(float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.01, 2.0)), float(wi)) for d, wi in zip(dsts, w)}
    return Aug(n_apps, edges)


def random_history(rng: np.random.Generator, n_apps: int, n_events: int) -> list[UsageEvent]:
    t, out = 0.0, []
    for _ in range(n_events):
        t += float(rng.exponential(1.0))
        out.append(UsageEvent("u", t, int(rng.integers(n_apps)), {}))
    return out
