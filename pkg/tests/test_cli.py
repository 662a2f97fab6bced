import json

import pytest

from prvfln import Learner
from prvfln.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def csv_file(tmp_path, capsys):
    path = tmp_path / "stream.csv"
    assert main(["synth", "abrupt", "--gen-param", "length=300", "--out", str(path), "-q"]) == EXIT_OK
    assert last_json(capsys) == {"path": str(path), "rows": 300}
    return path


def test_synth_writes_requested_rows(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["synth", "sparse", "--limit", "40", "--seed", "2", "--out", str(out), "-q"]) == EXIT_OK
    assert last_json(capsys)["rows"] == 40
    assert len(out.read_text().splitlines()) == 41


def test_train_writes_snapshot_and_metrics(tmp_path, csv_file, capsys):
    snap, metrics = tmp_path / "m.bin", tmp_path / "metrics"
    code = main(["train", "--data", str(csv_file), "--targets", "y", "--snapshot", str(snap),
                 "--metrics", str(metrics), "-q"])
    assert code == EXIT_OK
    summary = last_json(capsys)
    assert summary["samples"] == 300 and not summary["unstable"]
    assert snap.stat().st_size > 0
    assert json.loads((metrics / "summary.json").read_text()) == summary
    assert len((metrics / "metrics.jsonl").read_text().splitlines()) == 300


def test_holdout_protocol(tmp_path, capsys):
    code = main(["train", "--generator", "abrupt", "--gen-param", "length=200", "--protocol", "holdout",
                 "--train-fraction", "0.75", "--snapshot", str(tmp_path / "m.bin"),
                 "--metrics", str(tmp_path / "h"), "-q"])
    assert code == EXIT_OK and last_json(capsys)["samples"] == 50


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PRVFLN_OUTPUT_DIR", str(tmp_path))
    assert main(["train", "--generator", "sparse", "--limit", "50", "-q"]) == EXIT_OK
    assert (tmp_path / "model.bin").exists() and (tmp_path / "metrics" / "summary.json").exists()


def test_out_of_range_threshold_warns_but_runs(tmp_path):
    with pytest.warns(UserWarning, match="alpha1"):
        code = main(["train", "--generator", "sparse", "--limit", "30", "--alpha1", "0.5",
                     "--snapshot", str(tmp_path / "m.bin"), "--metrics", str(tmp_path / "m"), "-q"])
    assert code == EXIT_OK


def test_eval_does_not_modify_snapshot(tmp_path, csv_file, capsys):
    snap = tmp_path / "m.bin"
    main(["train", "--data", str(csv_file), "--targets", "y", "--snapshot", str(snap),
          "--metrics", str(tmp_path / "t"), "-q"])
    before = snap.read_bytes()
    assert main(["eval", "--snapshot", str(snap), "--data", str(csv_file), "--targets", "y", "-q"]) == EXIT_OK
    assert last_json(capsys)["samples"] == 300
    assert snap.read_bytes() == before


def test_inspect_fresh_snapshot(tmp_path, capsys):
    snap = tmp_path / "m.bin"
    snap.write_bytes(Learner(seed=4).snapshot())
    assert main(["inspect", str(snap), "--json"]) == EXIT_OK
    assert last_json_block(capsys)["n_clouds"] == 0


def last_json_block(capsys):
    return json.loads(capsys.readouterr().out)


def test_inspect_trained_snapshot(tmp_path, capsys):
    snap = tmp_path / "m.bin"
    main(["train", "--generator", "recurring", "--snapshot", str(snap), "--metrics", str(tmp_path / "m"), "-q"])
    capsys.readouterr()
    assert main(["inspect", str(snap)]) == EXIT_OK
    assert "clouds (R)" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["train", "-q"],
    ["train", "--generator", "sparse", "--data", "x.csv", "-q"],
    ["train", "--generator", "sparse", "--epsilon", "2", "-q"],
    ["train", "--generator", "sparse", "--protocol", "holdout", "--train-fraction", "1.5", "-q"],
    ["synth", "sparse", "--gen-param", "oops", "-q"],
    ["sweep", "--generator", "sparse", "--scopes", "1;2", "-q"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.setenv("PRVFLN_OUTPUT_DIR", str(tmp_path))
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_empty_stream_exits_2(tmp_path):
    assert main(["train", "--generator", "sparse", "--limit", "0", "--snapshot", str(tmp_path / "m.bin"),
                 "--metrics", str(tmp_path / "m"), "-q"]) == EXIT_DATA


def test_data_errors_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("PRVFLN_OUTPUT_DIR", str(tmp_path))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,2\nx,3\n")
    assert main(["train", "--data", str(bad), "--targets", "y", "-q"]) == EXIT_DATA
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--targets", "y", "-q"]) == EXIT_DATA
    assert main(["train", "--data", str(bad), "--targets", "nope", "-q"]) == EXIT_DATA
    garbage = tmp_path / "g.bin"
    garbage.write_bytes(b"garbage")
    assert main(["inspect", str(garbage), "-q"]) == EXIT_DATA
    assert main(["eval", "--snapshot", str(tmp_path / "none.bin"), "--generator", "sparse", "-q"]) == EXIT_DATA


def test_divergence_exits_3(tmp_path, capsys):
    code = main(["train", "--generator", "sparse", "--limit", "300", "--decay-rate", "10",
                 "--snapshot", str(tmp_path / "m.bin"), "--metrics", str(tmp_path / "m"), "-q"])
    assert code == EXIT_DIVERGED and last_json(capsys)["unstable"]


def test_sweep_writes_runs_and_is_reproducible(tmp_path, capsys):
    def run(out):
        return main(["sweep", "--generator", "sparse", "--limit", "150", "--scopes=-1,1;0,0.5",
                     "--seeds", "0,1,2", "--out", str(out), "-q"])
    assert run(tmp_path / "a") == EXIT_OK and run(tmp_path / "b") == EXIT_OK
    runs = (tmp_path / "a" / "runs.jsonl").read_text().splitlines()
    assert len(runs) == 6
    def table(out):
        rows = json.loads((out / "table.json").read_text())
        return [{k: v for k, v in r.items() if not k.startswith("runtime")} for r in rows]
    assert table(tmp_path / "a") == table(tmp_path / "b")
