import csv
import io
import json

import pytest

from usage_oracle import cli
from usage_oracle.core import InvariantError
from usage_oracle.evaluation import REPORT_COLUMNS


@pytest.fixture(scope="module")
def log_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "log.jsonl"
    assert cli.main(["generate", "--out", str(path), "--users", "3", "--events-per-user", "450", "--seed", "1"]) == 0
    return path


@pytest.fixture(scope="module")
def bundle_dir(log_path):
    out = log_path.parent / "model"
    assert cli.main(["train", "--data", str(log_path), "--out", str(out)]) == 0
    return out


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_generate_train_evaluate(capsys, log_path, tmp_path):
    code, out, _ = run(capsys, "train", "--data", log_path, "--out", tmp_path / "m", "--emit-selection", tmp_path / "sel.csv", "--graph-dump", tmp_path / "g.json")
    assert code == 0 and "features selected" in out
    rows = list(csv.DictReader(io.StringIO((tmp_path / "sel.csv").read_text())))
    assert list(rows[0]) == ["user", "round", "feature", "l_h", "l_d_given_h", "dl", "removed_count"]
    assert [int(r["round"]) for r in rows if r["user"] == "user000"][:2] == [1, 2]
    graph = json.loads((tmp_path / "g.json").read_text())
    edge = graph["user000"]["edges"][0]
    assert {"src", "dst", "weight", "alpha", "beta", "histogram"} <= set(edge)
    assert edge["src"].startswith("app")

    code, out, _ = run(capsys, "evaluate", "--data", log_path, "--out", tmp_path / "r.csv")
    assert code == 0 and "recall@4=" in out
    report = list(csv.DictReader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert list(report[0]) == REPORT_COLUMNS
    assert all(0.0 <= float(r["recall"]) <= 1.0 for r in report)


def test_three_predictor_rows_per_cohort(capsys, log_path):
    code, out, _ = run(capsys, "evaluate", "--data", log_path, "--predictors", "mfu,mru,kap")
    assert code == 0
    per_cohort = {}
    for row in csv.DictReader(io.StringIO(out)):
        per_cohort.setdefault((row["scope"], row["cohort"], row["k"]), []).append(row["predictor"])
    assert per_cohort and all(sorted(v) == ["kap", "mfu", "mru"] for v in per_cohort.values())


def test_refine_iters_sweep(capsys, log_path):
    code, out, _ = run(capsys, "sweep", "--data", log_path, "--axis", "refine_iters", "--values", "1,2,3,4,5")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["value"] for r in rows] == ["1", "2", "3", "4", "5"]
    assert float(rows[1]["recall"]) >= float(rows[0]["recall"])


def test_gnuplot_output(capsys, log_path):
    code, out, _ = run(capsys, "sweep", "--data", log_path, "--axis", "top_k", "--values", "1,4", "--predictors", "mfu", "--gnuplot")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# axis value predictor")
    assert len(lines) == 3 and len(lines[1].split()) == 7


def test_predict_lines(capsys, bundle_dir, log_path, tmp_path):
    lines = log_path.read_text().splitlines()
    mine = [l for l in lines[1:] if json.loads(l)["user"] == "user001"][-6:]
    query = tmp_path / "q.jsonl"
    query.write_text("\n".join([lines[0], *mine]) + "\n")
    code, out, _ = run(capsys, "predict", "--model", bundle_dir, "--events", query, "--k", "3", "--debug-dump", tmp_path / "d.json")
    assert code == 0
    preds = [json.loads(l) for l in out.splitlines()]
    assert len(preds) == 6
    for p, raw in zip(preds, mine):
        assert {"ts", "truth", "ranked"} <= set(p)
        assert p["truth"] == json.loads(raw)["app"]
        assert len(p["ranked"]) == 3 and len(set(p["ranked"])) == 3
    dump = json.loads((tmp_path / "d.json").read_text())
    assert len(dump) == 6


def test_single_user_bundle(capsys, tmp_path):
    log = tmp_path / "one.jsonl"
    assert run(capsys, "generate", "--out", log, "--users", "1", "--events-per-user", "30")[0] == 0
    assert run(capsys, "train", "--data", log, "--out", tmp_path / "m")[0] == 0
    bundle = json.loads((tmp_path / "m" / "bundle.json").read_text())
    assert list(bundle["users"]) == ["user000"]
    assert bundle["schema_version"] == 1


def test_every_subcommand_lists_the_overrides(capsys):
    flags = [f for f, *_ in cli.OVERRIDES] + ["--seed", "--config", "--debug-dump"]
    for command in cli.COMMANDS:
        with pytest.raises(SystemExit) as exc:
            cli.main([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert all(f in text for f in flags), command


def test_config_file_and_flags(capsys, log_path, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("top_k = 2\n")
    code, out, _ = run(capsys, "evaluate", "--data", log_path, "--predictors", "mfu", "--config", cfg)
    assert code == 0 and {r["k"] for r in csv.DictReader(io.StringIO(out))} == {"2"}
    code, out, _ = run(capsys, "--config", cfg, "evaluate", "--data", log_path, "--predictors", "mfu", "--top-k", "3")
    assert code == 0 and {r["k"] for r in csv.DictReader(io.StringIO(out))} == {"3"}


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--data", "/nonexistent/log.jsonl"],
        ["evaluate", "--data", "{log}", "--rho", "2"],
        ["evaluate", "--data", "{log}", "--predictors", "svm"],
        ["predict", "--model", "/nonexistent", "--events", "{log}"],
        ["evaluate", "--data", "{log}", "--config", "/nonexistent.cfg"],
        ["sweep", "--data", "{log}", "--axis", "rho", "--values", "x"],
    ],
)
def test_input_errors_exit_2(capsys, log_path, argv):
    code, _, err = run(capsys, *[a.replace("{log}", str(log_path)) for a in argv])
    assert code == 2 and err.startswith("error:")


def test_invariant_breach_exits_3(capsys, monkeypatch, log_path):
    def broken(args, config):
        raise InvariantError("theta lost its mass")

    monkeypatch.setitem(cli.COMMANDS, "evaluate", broken)
    code, _, err = run(capsys, "evaluate", "--data", log_path)
    assert code == 3 and "theta" in err
