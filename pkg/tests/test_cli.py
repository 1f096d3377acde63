import csv
import json

import pytest

from conftest import corpus_path
from fedbayes.cli import main
from fedbayes.dataset import load_dataset
from fedbayes.federation import WeightMessage
from fedbayes.generative import ParamTable, fit_counts, normalize


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_writes_a_loadable_table(tmp_path):
    out = tmp_path / "nb.json"
    assert main(["fit", "--data", str(corpus_path("car")), "--alpha", "0.5", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    table = ParamTable.from_dict(doc)
    ref = normalize(fit_counts(load_dataset(corpus_path("car"))), 0.5)
    assert table.log_theta.tobytes() == ref.log_theta.tobytes()
    assert doc["class_labels"] == ["unacc", "acc", "good", "vgood"]
    assert len(doc["feature_names"]) == 6


def test_fit_on_csv_with_named_class_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("label,a,b\n+,x,y\n-,x,z\n+,w,y\n")
    out = tmp_path / "nb.json"
    assert main(["fit", "--data", str(path), "--header", "--class-col", "label", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["class_labels"] == ["+", "-"]


@pytest.mark.parametrize("fmt, suffix", [("binary", ".fnbw"), ("json", ".json")])
def test_federate_writes_traces_and_messages(tmp_path, capsys, fmt, suffix):
    argv = [
        "federate", "--data", str(corpus_path("tic-tac-toe")), "--clients", "4", "--rounds", "3",
        "--opt-iters", "2", "--seed", "1", "--message-format", fmt,
        "--message-dir", str(tmp_path / "msg"), "--trace-dir", str(tmp_path / "tr"),
        "--dump-splits", str(tmp_path / "splits.json"), "--out", str(tmp_path / "w.json"),
    ]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert out.count("round ") == 3 and "final global test accuracy" in out

    rows = read_csv(tmp_path / "tr" / "rounds.csv")
    assert len(rows) == 3 * 4
    assert {(int(r["round"]), int(r["client_id"])) for r in rows} == {(t, c) for t in (1, 2, 3) for c in range(4)}
    assert all(int(r["iters_used"]) <= 2 for r in rows)

    files = sorted((tmp_path / "msg").iterdir())
    assert len(files) == 12 and all(f.suffix == suffix for f in files)
    decode = WeightMessage.from_json if fmt == "json" else WeightMessage.from_bytes
    m = decode(files[-1].read_text() if fmt == "json" else files[-1].read_bytes())
    assert (m.round, m.client_id) == (3, 3)

    weights = json.loads((tmp_path / "w.json").read_text())
    assert weights["rounds"] == 3 and len(weights["weights"]) == m.payload.size
    splits = json.loads((tmp_path / "splits.json").read_text())
    assert (splits["client_count"], splits["fold_count"], splits["seed"]) == (4, 5, 1)
    assert len(splits["assignments"]) == 958


def test_federate_is_reproducible(tmp_path):
    def run(name):
        argv = [
            "federate", "--data", str(corpus_path("car")), "--clients", "3", "--rounds", "2",
            "--seed", "7", "--out", str(tmp_path / name),
        ]
        assert main(argv) == 0
        return (tmp_path / name).read_bytes()

    assert run("a.json") == run("b.json")


def test_federate_too_many_clients_fails_cleanly(capsys):
    argv = ["federate", "--data", str(corpus_path("house-votes-84")), "--clients", "100", "--min-client-size", "5"]
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("fedbayes: error:") and "435 instances" in err


def test_missing_file_fails_cleanly(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x")]) == 1
    assert "fedbayes: error:" in capsys.readouterr().err


def test_experiment_and_compare(tmp_path, capsys):
    config = {
        "datasets": [str(corpus_path("tic-tac-toe")), str(corpus_path("house-votes-84"))],
        "algorithms": ["nb", "nb_fed", "fednbw"],
        "client_counts": [5, 100],
        "folds": 3,
        "repetitions": 1,
        "rounds": 2,
        "opt_iters": [2],
        "output_dir": str(tmp_path / "default"),
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(config))
    assert main(["experiment", "--config", str(cfg), "--output-dir", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "skipped: dataset=house-votes-84 clients=100" in out
    assert not (tmp_path / "default").exists()
    summary = read_csv(tmp_path / "run" / "summary.csv")
    assert {r["dataset"] for r in summary} == {"tic-tac-toe", "house-votes-84", "Mean"}

    assert main(["compare", "--records", str(tmp_path / "run"), "--out", str(tmp_path / "cmp.csv"),
                 "--text", str(tmp_path / "cmp.txt")]) == 0
    assert (tmp_path / "cmp.csv").read_bytes() == (tmp_path / "run" / "summary.csv").read_bytes()
    assert (tmp_path / "cmp.txt").read_text() == (tmp_path / "run" / "summary.txt").read_text()


def test_parser_requires_a_command(capsys):
    with pytest.raises(SystemExit):
        main([])
