import csv
import io
import json

import numpy as np
import pytest

from rupclass.cli import main
from rupclass.dataio import DataParseError, natural_key, read_artifact, read_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def study1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "s1.csv"
    assert main(["simulate", "--study", "1", "--eta", "0.15", "--seed", "7", "-o", str(path)]) == 0
    return path


def _rows(path_or_text):
    text = path_or_text.read_text() if hasattr(path_or_text, "read_text") else path_or_text
    return list(csv.DictReader(io.StringIO(text)))


def test_simulate_layout(study1_csv):
    rows = _rows(study1_csv)
    labelled = [r for r in rows if r["label"] != "?"]
    assert len(rows) == 215 + 400 and len(labelled) == 215
    assert sum(int(r["contaminated"]) for r in rows) == 30
    assert sum(r["true_class"] == "none" for r in rows) == 15
    assert list(rows[0]) == ["x1", "x2", "label", "true_class", "contaminated"]


def test_simulate_replace_and_study2(capsys):
    code, out, _ = run(capsys, "simulate", "--eta", "0.15", "--outliers", "replace", "--seed", "1")
    rows = _rows(out)
    assert code == 0 and sum(r["label"] != "?" for r in rows) == 200
    code, out, _ = run(capsys, "simulate", "--study", "2", "--seed", "1")
    rows = _rows(out)
    assert sum(r["label"] != "?" for r in rows) == 265 and len(rows[0]) == 13
    assert run(capsys, "simulate", "--eta", "0.4")[0] == 2


def test_fit_summary_and_artifact(capsys, study1_csv, tmp_path):
    model = tmp_path / "m.json"
    code, out, _ = run(capsys, "fit", study1_csv, "--alpha-labelled", "0.15", "--alpha-unlabelled", "0.05",
                       "--nsamp", "10", "--seed", "3", "-o", model)
    assert code == 0
    assert "labelled: 183 retained, 32 trimmed of 215" in out
    assert "unlabelled: 380 retained, 20 trimmed of 400" in out
    doc = json.loads(model.read_text())
    assert doc["format"] == "rupclass-model/1" and doc["model"] == "VVV" and doc["c"] == 20.0
    assert sum(not v for v in doc["retained_labelled"]) == 32
    loaded = read_artifact(model)
    assert loaded.class_names == ["1", "2", "3"]
    for k, d in zip(doc["classes"], loaded.params.cov):
        np.testing.assert_array_equal(d.eigenvalues, k["eigenvalues"])


def test_artifact_round_trip_is_exact(capsys, study1_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    flags = ["--nsamp", "5", "--alpha-labelled", "0.1", "--seed", "2"]
    assert run(capsys, "fit", study1_csv, *flags, "-o", a)[0] == 0
    assert run(capsys, "fit", study1_csv, *flags, "-o", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    loaded = read_artifact(a)
    doc = json.loads(a.read_text())
    assert loaded.params.tau.tolist() == [k["tau"] for k in doc["classes"]]
    assert loaded.params.mu.tolist() == [k["mu"] for k in doc["classes"]]


def test_predict_matches_fit(capsys, study1_csv, tmp_path):
    model = tmp_path / "m.json"
    assert run(capsys, "fit", study1_csv, "--mode", "upclass", "--seed", "0", "-o", model)[0] == 0
    doc = json.loads(model.read_text())
    code, out, _ = run(capsys, "predict", model, study1_csv)
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 615
    unl = [r for r, src in zip(rows, _rows(study1_csv)) if src["label"] == "?"]
    assert [int(r["predicted"]) - 1 for r in unl] == doc["classification_unlabelled"]
    post = np.array([[float(r[f"posterior_{g}"]) for g in "123"] for r in unl])
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
    assert all(r["outlier"] == "0" for r in rows)


def test_predict_flags_far_points(capsys, study1_csv, tmp_path):
    model = tmp_path / "m.json"
    assert run(capsys, "fit", study1_csv, "--alpha-labelled", "0.15", "--alpha-unlabelled", "0.05",
               "--nsamp", "5", "-o", model)[0] == 0
    new = tmp_path / "new.csv"
    new.write_text("x1,x2\n0,0\n300,-300\n")
    code, out, _ = run(capsys, "predict", model, new, "--no-classify-trimmed")
    rows = _rows(out)
    assert code == 0 and rows[0]["outlier"] == "0" and rows[1]["outlier"] == "1"
    assert rows[1]["predicted"] == "?" and rows[1]["max_posterior"] == "NA"


def test_predict_rejects_wrong_dimension(capsys, study1_csv, tmp_path):
    model = tmp_path / "m.json"
    assert run(capsys, "fit", study1_csv, "--mode", "edda", "-o", model)[0] == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,x3\n1,2,3\n")
    assert run(capsys, "predict", model, bad)[0] == 3
    assert run(capsys, "predict", bad, bad)[0] == 3


def test_fit_exit_codes(capsys, study1_csv, tmp_path):
    code, _, err = run(capsys, "fit", study1_csv, "--alpha-labelled", "0.97")
    assert code == 4 and "G*(p+1)" in err
    assert run(capsys, "fit", study1_csv, "--alpha-labelled", "1.2")[0] == 4
    garbage = tmp_path / "g.csv"
    garbage.write_text("x1,x2,label\n1,abc,1\n")
    assert run(capsys, "fit", garbage)[0] == 3
    assert run(capsys, "fit", tmp_path / "missing.csv")[0] == 3
    with pytest.raises(SystemExit) as exc:
        main(["fit", str(study1_csv), "--model", "XYZ"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["fit", str(study1_csv), "--c", "0.5"])


def test_select_output(capsys, study1_csv):
    code, out, _ = run(capsys, "select", study1_csv, "--models", "VVV", "--c-grid", "20", "--nsamp", "5",
                       "--alpha-labelled", "0.15", "--alpha-unlabelled", "0.05")
    rows = _rows(out)
    assert code == 0 and len(rows) == 1 and rows[0]["winner"] == "1" and rows[0]["rank"] == "1"
    code, out, _ = run(capsys, "select", study1_csv, "--models", "EII,VEV,EEE", "--c-grid", "4,20", "--nsamp", "5",
                       "--alpha-labelled", "0.15", "--alpha-unlabelled", "0.05")
    rows = _rows(out)
    assert len(rows) == 4  # EII and EEE do not depend on c
    rbic = [float(r["rbic"]) for r in rows]
    assert rbic == sorted(rbic, reverse=True)
    assert [r["winner"] for r in rows] == ["1", "0", "0", "0"]
    assert run(capsys, "select", study1_csv, "--c-grid", "0.5")[0] == 2


def test_bench_writes_csv_and_figure(capsys, tmp_path):
    out = tmp_path / "b.csv"
    code, text, _ = run(capsys, "bench", "--eta", "0,0.1", "--B", "2", "--nsamp", "3", "--methods", "EDDA REDDA",
                        "-o", out)
    assert code == 0 and "mean misclassification error" in text
    rows = _rows(out)
    assert {r["method"] for r in rows} == {"EDDA", "REDDA"} and {r["B"] for r in rows} == {"2"}
    assert out.with_suffix(".png").read_bytes()[:4] == b"\x89PNG"
    assert run(capsys, "bench", "--eta", "0.5", "--B", "1")[0] == 2
    assert run(capsys, "bench", "--methods", "SVM", "--B", "1")[0] == 2


def test_reader_conventions(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label,b\n1,10,2\n3,2,4\n5,?,6\n\n")
    d = read_dataset(p)
    assert d.class_names == ["2", "10"] and d.features == ["a", "b"]
    assert d.labels.tolist() == [1, 0] and d.Y.tolist() == [[5.0, 6.0]]
    np.testing.assert_array_equal(d.data, [[1, 2], [3, 4], [5, 6]])
    assert d.row_labels.tolist() == [1, 0, -1]
    assert sorted(["x10", "x2", "x1"], key=natural_key) == ["x1", "x2", "x10"]
    for bad in ("a,a\n1,2\n", "a,label\n1\n", "a,label\n1,\n", "a,label\ninf,1\n", ""):
        p.write_text(bad)
        with pytest.raises(DataParseError):
            read_dataset(p)
    p.write_text("a,label\n1,3\n")
    with pytest.raises(DataParseError):
        read_dataset(p, class_names=["1", "2"])
