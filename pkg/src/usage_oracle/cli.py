"""``usage-oracle`` command line: generate, train, predict, evaluate, sweep.

Exit status is 0 on success, 2 for bad input (paths, config, data) and 3
when an internal invariant breaks.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .core import Config, InputError, InvariantError, UsageEvent, coerce_config_value, load_config, parse_config_text
from .evaluation import SWEEP_AXES, SWEEP_COLUMNS, rows_to_csv, run_evaluation, run_sweep
from .ingest import Dataset, GeneratorSpec, generate, load_log, planted_spec, split, write_log
from .knn import predict_knn
from .mdlselect import SelectionRound
from .model import ModelBundle, resolve_predictors, train_user

log = logging.getLogger("usage_oracle")

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3

# (flag, config field, type, help)
OVERRIDES = [
    ("--top-k", "top_k", int, "length of each prediction list"),
    ("--knn-fraction", "knn_fraction", float, "share of training rows used as neighbours"),
    ("--rho", "rho", float, "stop selecting once this share of training rows is explained"),
    ("--min-tp", "min_tp", float, "drop transition paths less likely than this"),
    ("--max-lookback", "max_lookback", int, "recent launches used for implicit features"),
    ("--refine-iters", "refine_iters", int, "refinement iterations at query time"),
    ("--coverage-threshold", "coverage_threshold", float, "interval mass used when fitting edge decay"),
]

SELECTION_COLUMNS = ["user", "round", "feature", "l_h", "l_d_given_h", "dl", "removed_count"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the same flag appear before or after the subcommand.
    group = parser.add_argument_group("common options")
    group.add_argument("--config", default=argparse.SUPPRESS, help="key=value config file")
    group.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (config rng_seed)")
    group.add_argument("--debug-dump", default=argparse.SUPPRESS, metavar="PATH", help="write intermediate state as JSON")
    group.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for flag, dest, typ, text in OVERRIDES:
        group.add_argument(flag, dest=dest, type=typ, default=None, help=f"{text} (config {dest})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usage-oracle", description="Next-app prediction from usage logs.")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic usage log")
    p.add_argument("--out", required=True, help="output JSONL log")
    p.add_argument("--spec", help="generator spec JSON (default: the planted dataset)")
    p.add_argument("--users", type=int, help="number of users (planted dataset only)")
    p.add_argument("--events-per-user", type=int, help="launches per user (planted dataset only)")
    p.add_argument("--noise-rate", type=float, help="random-app replacement rate (planted dataset only)")

    p = sub.add_parser("train", help="fit per-user models and save a bundle")
    p.add_argument("--data", required=True, help="JSONL usage log")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--emit-selection", metavar="CSV", help="write per-round selection records")
    p.add_argument("--graph-dump", metavar="JSON", help="write each user's transition graph")

    p = sub.add_parser("predict", help="rank next apps for each launch in an event log")
    p.add_argument("--model", required=True, help="bundle directory or bundle.json")
    p.add_argument("--events", required=True, help="JSONL log of launches to predict")
    p.add_argument("--k", type=int, help="list length (default: config top_k)")

    p = sub.add_parser("evaluate", help="score predictors on the chronological test split")
    p.add_argument("--data", required=True, help="JSONL usage log")
    p.add_argument("--out", help="CSV report (default: stdout)")
    p.add_argument("--predictors", default="mfu,mru,kap", help="comma list from: kap, kap_all, mfu, mru")
    p.add_argument("--ks", help="comma list of list lengths (default: config top_k)")

    p = sub.add_parser("sweep", help="aggregate scores along one config axis")
    p.add_argument("--data", required=True, help="JSONL usage log")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma list of axis values")
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.add_argument("--predictors", default="kap", help="comma list from: kap, kap_all, mfu, mru")
    p.add_argument("--gnuplot", action="store_true", help="whitespace-separated columns with a '#' header instead of CSV")

    for child in sub.choices.values():
        _add_common(child)
        _add_overrides(child)
    return parser


def _config(args) -> Config:
    overrides = {dest: getattr(args, dest, None) for _, dest, _, _ in OVERRIDES}
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None


def _dump(args, payload) -> None:
    path = getattr(args, "debug_dump", None)
    if path:
        _write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _split_list(raw: str) -> list[str]:
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise InputError(f"empty list {raw!r}")
    return items


def _load_split(path: str, config: Config) -> Dataset:
    return split(load_log(path), config.train_fraction)


def cmd_generate(args, config: Config) -> int:
    if args.spec:
        if any(v is not None for v in (args.users, args.events_per_user, args.noise_rate)):
            raise InputError("--users/--events-per-user/--noise-rate only apply to the planted dataset")
        spec = GeneratorSpec.from_file(args.spec)
    else:
        kwargs = {"n_users": args.users, "n_events_per_user": args.events_per_user, "noise_rate": args.noise_rate}
        spec = planted_spec(**{k: v for k, v in kwargs.items() if v is not None})
    dataset = generate(spec, config.rng_seed)
    write_log(dataset, args.out)
    n_events = sum(len(t.events) for t in dataset.users)
    print(f"wrote {n_events} events for {len(dataset.users)} users to {args.out}")
    _dump(args, {"config": config.to_dict(), "n_events": n_events, "users": [t.user for t in dataset.users]})
    return EXIT_OK


def cmd_train(args, config: Config) -> int:
    dataset = _load_split(args.data, config)
    models = {}
    selection_rows = []
    for trace in dataset.users:
        if trace.excluded:
            print(f"{trace.user}: skipped ({len(trace.events)} events is too few to split)")
            continue
        model = train_user(trace.user, trace.train, dataset.feature_schema, dataset.apps, config)
        models[trace.user] = model
        print(f"{trace.user}: {len(model.selected)} features selected: {', '.join(model.selected) or '-'}")
        selection_rows.extend(_selection_row(trace.user, r) for r in model.rounds)
    if not models:
        raise InputError("no user has enough events to train on")
    bundle = ModelBundle(config, dataset.apps, list(dataset.feature_schema), models)
    path = bundle.save(args.out)
    print(f"saved {len(models)} user model(s) to {path}")
    if args.emit_selection:
        _write(args.emit_selection, rows_to_csv(selection_rows, SELECTION_COLUMNS))
    if args.graph_dump:
        graphs = {u: _named_graph(m.aug.to_dict(), dataset.apps.names) for u, m in sorted(models.items())}
        _write(args.graph_dump, json.dumps(graphs, indent=1, sort_keys=True) + "\n")
    _dump(args, {u: {"selected": m.selected, "rounds": [r.__dict__ for r in m.rounds]} for u, m in sorted(models.items())})
    return EXIT_OK


def _selection_row(user: str, r: SelectionRound) -> dict:
    return {"user": user, **r.__dict__}


def _named_graph(graph: dict, names: Sequence[str]) -> dict:
    edges = [dict(e, src=names[e["src"]], dst=names[e["dst"]]) for e in graph["edges"]]
    return {"n_apps": graph["n_apps"], "edges": edges}


def cmd_predict(args, config: Config) -> int:
    bundle = ModelBundle.load(args.model)
    # Flags and the config file refine the saved settings; unset ones keep them.
    saved = bundle.config.to_dict()
    explicit = dict(parse_config_text(Path(args.config).read_text())) if getattr(args, "config", None) else {}
    explicit.update({dest: getattr(args, dest) for _, dest, _, _ in OVERRIDES if getattr(args, dest) is not None})
    run_config = Config.from_dict({**saved, **explicit})
    k = args.k if args.k is not None else run_config.top_k
    if k < 1:
        raise InputError(f"--k must be >= 1, got {k}")
    stream = load_log(args.events, bundle.schema)
    names = bundle.apps.names
    debug = []
    for trace in stream.users:
        model = bundle.users.get(trace.user)
        if model is None:
            log.warning("no model for user %s; skipping", trace.user)
            continue
        model.config = run_config
        history: list[UsageEvent] = []
        for ev in trace.events:
            app_name = stream.apps.resolve(ev.app)
            known = bundle.apps.get(app_name)
            query = UsageEvent(ev.user, ev.timestamp, known if known is not None else -1, ev.sensors)
            num, cat, info = model.query_features(history, query)
            ranked = predict_knn(model.train, num, cat, run_config.knn_fraction, k)
            print(json.dumps({"user": trace.user, "ts": ev.timestamp, "truth": app_name, "ranked": [names[a] for a in ranked.apps]}))
            if getattr(args, "debug_dump", None):
                debug.append({"user": trace.user, "ts": ev.timestamp, **info})
            # Apps the model never saw have no transitions; leave them out of the history.
            if known is not None:
                history.append(UsageEvent(ev.user, ev.timestamp, known, ev.sensors))
    _dump(args, debug)
    return EXIT_OK


def cmd_evaluate(args, config: Config) -> int:
    dataset = _load_split(args.data, config)
    predictors = resolve_predictors(_split_list(args.predictors))
    ks = [int(coerce_config_value("top_k", x)) for x in _split_list(args.ks)] if args.ks else None
    report = run_evaluation(dataset, config, predictors, ks)
    if not report.per_user:
        raise InputError("no user has enough events to evaluate")
    _write(args.out, report.to_csv())
    if args.out:
        for pred, by_k in report.aggregate.items():
            for k, s in by_k.items():
                print(f"{pred}: recall@{k}={s.recall:.4f} ndcg@{k}={s.ndcg:.4f} cases={s.n_cases}")
    _dump(args, {"config": config.to_dict(), "rows": report.rows()})
    return EXIT_OK


def rows_to_gnuplot(rows: Sequence[dict], columns: Sequence[str]) -> str:
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def cmd_sweep(args, config: Config) -> int:
    dataset = _load_split(args.data, config)
    predictors = resolve_predictors(_split_list(args.predictors))
    values = [coerce_config_value(args.axis, v) for v in _split_list(args.values)]
    rows = run_sweep(dataset, config, args.axis, values, predictors)
    _write(args.out, rows_to_gnuplot(rows, SWEEP_COLUMNS) if args.gnuplot else rows_to_csv(rows, SWEEP_COLUMNS))
    _dump(args, {"config": config.to_dict(), "rows": rows})
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        return COMMANDS[args.command](args, config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
