import csv
import io
import json
import subprocess
import sys

import pytest

from seatrack import cli, models, synth, training
from seatrack.config import RunConfig, dump_config, parse_config
from seatrack.errors import ConfigError, DivergenceError

TINY = """name = tiny
vessel_count = 3
rows_per_vessel = 150
duration_s = 4500
region = 37.80, 37.90, 23.45, 23.60
seed = 11
"""
FAST = "learning_rate = 0.01\nepochs = 25\nbatch_size = 50\n"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.txt").write_text(TINY)
    (root / "fast.cfg").write_text(FAST)
    assert cli.main(["gen", "--scenario", str(root / "tiny.txt"), "-o", str(root / "data.csv")]) == 0
    assert cli.main(["train", str(root / "data.csv"), "--config", str(root / "fast.cfg"), "-o",
                     str(root / "m.ckpt"), "--test-out", str(root / "test.csv")]) == 0
    return root


# -- config ------------------------------------------------------------------------

def test_config_defaults_are_reference_values():
    c = RunConfig()
    assert (c.conv_filters, c.conv_kernel, c.conv_stride, c.conv_activation, c.conv_padding) == \
        (32, 5, 3, "relu", "causal")
    assert (c.lstm_units, c.lstm_gate_activation, c.dropout, c.batch_size, c.learning_rate, c.epochs) == \
        (32, "sigmoid", 0.5, 100, 1e-4, 100)
    assert c.loss == "categorical_cross_entropy" and c.split == (70, 10, 20) and c.min_obs == 50


def test_config_round_trip_and_errors():
    c = parse_config("epochs = 3\nvessels = a, b\nsplit = 60:20:20\nshuffle = no\n")
    assert (c.epochs, c.vessels, c.split, c.shuffle) == (3, ("a", "b"), (60, 20, 20), False)
    assert parse_config(dump_config(c)) == c
    for bad in ("epoch = 3", "epochs = 3\nepochs = 4", "epochs = three", "model = gru", "just text"):
        with pytest.raises(ConfigError):
            parse_config(bad)


# -- gen ---------------------------------------------------------------------------

def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["gen", "--scenario", "small5", "--seed", 1, "-o", a], capsys)[0] == 0
    assert run(["gen", "--scenario", "small5", "--seed", 1, "-o", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().startswith("ID,VID,SEQUENCE_DTTM,LAT,LON,SPEED,COURSE\n")


def test_gen_unknown_scenario(capsys):
    code, _, err = run(["gen", "--scenario", "harbor"], capsys)
    assert code == 2 and "small5" in err and "port30" in err


def test_gen_port30_size(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert run(["gen", "--scenario", "port30", "-o", out], capsys)[0] == 0
    rows = out.read_text().count("\n") - 1
    assert abs(rows - 30_361) < 3_000


def test_gen_to_stdout(capsys):
    code, out, _ = run(["gen", "--scenario", "small5"], capsys)
    assert code == 0 and out.count("\n") > 7000


# -- train -------------------------------------------------------------------------

def test_train_outputs(workspace):
    log = (workspace / "m.ckpt.trainlog.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,train_acc,val_loss,val_acc" and len(log) == 26
    ck = models.load(workspace / "m.ckpt")
    assert ck.label_map.classes == ("vessel 1", "vessel 2", "vessel 3")
    assert ck.spec.name == "cnn-lstm" and ck.meta["epochs"] == 25
    assert ck.scaler is not None


def test_train_same_seed_identical_checkpoint(workspace, tmp_path, capsys):
    out = tmp_path / "again.ckpt"
    code, stdout, _ = run(["train", workspace / "data.csv", "--config", workspace / "fast.cfg", "-o", out],
                          capsys)
    assert code == 0 and "val_acc=" in stdout
    assert out.read_bytes() == (workspace / "m.ckpt").read_bytes()
    other = tmp_path / "seed.ckpt"
    run(["train", workspace / "data.csv", "--config", workspace / "fast.cfg", "--seed", 3, "-o", other], capsys)
    assert other.read_bytes() != out.read_bytes()


@pytest.mark.parametrize("name", ["ann", "cnn", "lstm", "cnn-lstm"])
def test_train_model_flag(workspace, tmp_path, capsys, name):
    out = tmp_path / f"{name}.ckpt"
    code, _, _ = run(["train", workspace / "data.csv", "--model", name, "--epochs", 1, "-o", out], capsys)
    assert code == 0 and models.load(out).spec.name == name


def test_train_exit_codes(workspace, tmp_path, capsys, monkeypatch):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("epochz = 3\n")
    code, _, err = run(["train", workspace / "data.csv", "--config", bad_cfg, "-o", tmp_path / "x"], capsys)
    assert code == 2 and "epochz" in err
    few = tmp_path / "few.csv"
    lines = (workspace / "data.csv").read_text().splitlines()
    few.write_text("\n".join(lines[:60]) + "\n")
    code, _, err = run(["train", few, "-o", tmp_path / "x"], capsys)
    assert code == 3 and "fewer than 50" in err
    code, _, _ = run(["train", tmp_path / "missing.csv", "-o", tmp_path / "x"], capsys)
    assert code == 3

    def boom(*a, **k):
        raise DivergenceError(2, 7, float("nan"))

    monkeypatch.setattr(training, "fit", boom)
    code, _, err = run(["train", workspace / "data.csv", "-o", tmp_path / "x"], capsys)
    assert code == 4 and "epoch 2" in err and "batch 7" in err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--model", "gru"])
    assert info.value.code == 2


# -- eval --------------------------------------------------------------------------

def test_eval_on_training_data(workspace, tmp_path, capsys):
    code, out, _ = run(["eval", workspace / "m.ckpt", "--data", workspace / "data.csv", "-o", tmp_path], capsys)
    assert code == 0 and "cnn-lstm" in out
    header, row = (tmp_path / "metrics.csv").read_text().splitlines()
    assert header == "model,accuracy,precision,recall,f1_paper,f1_standard"
    assert float(row.split(",")[1]) > 0.9
    cm = list(csv.reader((tmp_path / "confusion_cnn-lstm.csv").open()))
    assert cm[0] == ["true\\pred", "vessel 1", "vessel 2", "vessel 3"]
    counts = [[int(v) for v in r[1:]] for r in cm[1:]]
    assert sum(counts[k][k] for k in range(3)) > 0.9 * sum(map(sum, counts))


def test_eval_reports_unseen_vessels(workspace, tmp_path, capsys):
    text = (workspace / "test.csv").read_text()
    novel = text + "999999,vessel 99,2020-03-01T10:00:00Z,37.85,23.5,80,45\n" * 3
    path = tmp_path / "novel.csv"
    path.write_text(novel)
    code, out, _ = run(["eval", workspace / "m.ckpt", "--data", path, "-o", tmp_path / "r"], capsys)
    assert code == 0 and "excluded 3 rows (unseen vessels)" in out


def test_eval_bad_checkpoint(workspace, tmp_path, capsys):
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes((workspace / "m.ckpt").read_bytes()[:-1])
    code, _, _ = run(["eval", cut, "--data", workspace / "data.csv", "-o", tmp_path], capsys)
    assert code == 5
    code, _, _ = run(["associate", tmp_path / "none.ckpt", workspace / "test.csv"], capsys)
    assert code == 5


# -- associate ---------------------------------------------------------------------

def _assoc(workspace, text, **kw):
    ck = models.load(workspace / "m.ckpt")
    out, err = io.StringIO(), io.StringIO()
    n = cli.associate_stream(ck, io.StringIO(text), out, errstream=err, **kw)
    return n, list(csv.DictReader(io.StringIO(out.getvalue()))), err.getvalue()


def test_associate_matches_eval_predictions(workspace):
    text = (workspace / "test.csv").read_text()
    ck = models.load(workspace / "m.ckpt")
    from seatrack import data
    recs, _ = data.parse_text(text)
    _, labels, conf = cli.score_records(ck, recs)
    for batch in (1, 7, 256):
        n, rows, err = _assoc(workspace, text, batch_size=batch)
        assert n == len(recs) and not err
        assert [r["vessel_id"] for r in rows] == [ck.label_map.decode(k) for k in labels]
        assert [r["object_id"] for r in rows] == [str(r.object_id) for r in recs]
        assert [float(r["confidence"]) for r in rows] == pytest.approx([float(c) for c in conf], abs=1e-6)


def test_associate_empty_vid_malformed_and_threshold(workspace):
    lines = (workspace / "test.csv").read_text().splitlines()
    first = lines[1].split(",")
    first[1] = ""
    bad = list(first)
    bad[3] = "abc"
    text = "\n".join([lines[0], ",".join(first), ",".join(bad), lines[2]]) + "\n"
    n, rows, err = _assoc(workspace, text)
    assert n == 2 and len(rows) == 2 and "line 3" in err and "LAT" in err
    _, rows, _ = _assoc(workspace, text, min_confidence=1.01)
    assert {r["vessel_id"] for r in rows} == {"unknown"}


def test_associate_cli_exit_codes(workspace, tmp_path, capsys):
    out = tmp_path / "pred.csv"
    code, _, _ = run(["associate", workspace / "m.ckpt", workspace / "test.csv", "-o", out], capsys)
    assert code == 0 and out.read_text().startswith("object_id,timestamp,lat,lon,vessel_id,confidence\n")
    empty = tmp_path / "empty.csv"
    empty.write_text("ID,VID,SEQUENCE_DTTM,LAT,LON,SPEED,COURSE\n")
    code, _, err = run(["associate", workspace / "m.ckpt", empty], capsys)
    assert code == 1 and "no rows" in err
    badhead = tmp_path / "badhead.csv"
    badhead.write_text("A,B\n1,2\n")
    assert run(["associate", workspace / "m.ckpt", badhead], capsys)[0] == 3
    assert run(["associate", workspace / "m.ckpt", empty, "--batch-size", 0], capsys)[0] == 2


def test_associate_stdin_subprocess(workspace):
    text = (workspace / "test.csv").read_text()
    proc = subprocess.run([sys.executable, "-m", "seatrack", "associate", str(workspace / "m.ckpt"), "-",
                           "--batch-size", "1"], input=text, capture_output=True, text=True,
                          env={"SEATRACK_LOG": "INFO", "PATH": ""})
    assert proc.returncode == 0
    assert proc.stdout.count("\n") == text.count("\n")
    assert "scored" in proc.stderr


# -- export-tracks -----------------------------------------------------------------

def _pred_file(tmp_path, rows):
    path = tmp_path / "pred.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cli.ASSOC_COLUMNS)
        w.writerows(rows)
    return path


def test_export_two_vessels(tmp_path, capsys):
    shapely_geometry = pytest.importorskip("shapely.geometry")
    rows = [(1, "2020-02-29T22:00:01Z", 37.1, 23.1, "a", 0.9), (2, "2020-02-29T22:00:02Z", 37.5, 23.5, "b", 0.9),
            (3, "2020-02-29T22:00:03Z", 37.2, 23.2, "a", 0.8), (4, "2020-02-29T22:00:04Z", 37.6, 23.6, "b", 0.7)]
    code, out, _ = run(["export-tracks", _pred_file(tmp_path, rows)], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["type"] == "FeatureCollection"
    kinds = [(f["geometry"]["type"], f["properties"]["vessel_id"]) for f in doc["features"]]
    assert kinds == [("LineString", "a"), ("LineString", "b")]
    assert doc["features"][0]["geometry"]["coordinates"] == [[23.1, 37.1], [23.2, 37.2]]
    for f in doc["features"]:
        assert shapely_geometry.shape(f["geometry"]).is_valid


def test_export_mixes_unknown_points(tmp_path, capsys):
    shapely_geometry = pytest.importorskip("shapely.geometry")
    rows = [(1, "2020-02-29T22:00:01Z", 37.1, 23.1, "a", 0.9), (2, "2020-02-29T22:00:02Z", 37.5, 23.5, "unknown", 0.3),
            (3, "2020-02-29T22:00:03Z", 37.2, 23.2, "a", 0.8)]
    out = tmp_path / "tracks.geojson"
    assert run(["export-tracks", _pred_file(tmp_path, rows), "-o", out], capsys)[0] == 0
    doc = json.loads(out.read_text())
    assert sorted(f["geometry"]["type"] for f in doc["features"]) == ["LineString", "Point"]
    for f in doc["features"]:
        shapely_geometry.shape(f["geometry"])
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n")
    assert run(["export-tracks", bad], capsys)[0] == 3


def test_export_after_associate_round_trip(workspace, tmp_path, capsys):
    pred = tmp_path / "pred.csv"
    run(["associate", workspace / "m.ckpt", workspace / "test.csv", "-o", pred, "--min-confidence", 0.9], capsys)
    code, out, _ = run(["export-tracks", pred], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["features"]


# -- grad-check --------------------------------------------------------------------

def test_grad_check_quick(capsys):
    code, out, _ = run(["grad-check", "--quick"], capsys)
    assert code == 0 and "FAIL" not in out and out.count("PASS") == 9


def test_grad_check_failure_exit(capsys):
    code, out, _ = run(["grad-check", "--quick", "--tolerance", "1e-30"], capsys)
    assert code == 1 and "FAIL" in out


def test_scenario_names_listed():
    assert set(synth.SCENARIOS) == {"small5", "port30"}
