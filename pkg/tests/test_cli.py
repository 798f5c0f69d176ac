from __future__ import annotations

import csv

import numpy as np
import pytest

from fairglmm.cli import main
from fairglmm.data_model import ModelParams
from fairglmm.model_io import ModelFile, read_model, write_model


def test_help_lists_defaults(capsys):
    assert main(["fit", "--help"]) == 0
    out = capsys.readouterr().out
    for text in ("default: 1.0", "default: 0.8", "default: 0.1", "default: 2.0", "default: 200", "default: 0.0001"):
        assert text in out


def test_reps_zero_is_usage_error(tmp_path):
    assert main(["simulate", "--scenario", "unfair-strata", "--reps", "0", "--out", str(tmp_path)]) == 2


def test_unknown_estimator_is_usage_error(bank_csv, tmp_path, capsys):
    code = main(["fit", "--data", str(bank_csv), "--bank", "--estimator", "svm", "--out", str(tmp_path / "m")])
    assert code == 2
    err = capsys.readouterr().err
    assert all(name in err for name in ("glmm", "fair-glmm", "crlr", "fair-crlr", "lr", "fair-lr"))


def test_simulate_writes_outputs(tmp_path):
    args = ["simulate", "--scenario", "unfair-strata", "--reps", "1", "--seed", "1", "--out", str(tmp_path),
            "--n-strata", "6", "--stratum-size", "30", "--jobs", "1"]
    assert main(args) == 0
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["estimator"] for r in rows} == {"glmm", "fair-glmm", "crlr", "fair-crlr", "lr", "fair-lr"}
    first = (tmp_path / "replications.csv").read_text()
    assert main(args) == 0
    assert (tmp_path / "replications.csv").read_text().split("\n")[1].split(",")[:4] == first.split("\n")[1].split(",")[:4]


def test_fit_evaluate_roundtrip(bank_csv, tmp_path, capsys):
    model = tmp_path / "model.txt"
    code = main(["fit", "--data", str(bank_csv), "--bank", "--estimator", "fair-glmm", "--seed", "7",
                 "--out", str(model)])
    assert code == 0
    assert (tmp_path / "model.txt.trace.csv").exists()
    loaded = read_model(model)
    assert loaded.estimator == "fair-glmm" and loaded.params.q > 0
    capsys.readouterr()
    preds = tmp_path / "pred.csv"
    assert main(["evaluate", "--model", str(model), "--data", str(bank_csv), "--predictions", str(preds)]) == 0
    out1 = capsys.readouterr().out
    assert main(["evaluate", "--model", str(model), "--data", str(bank_csv)]) == 0
    assert capsys.readouterr().out == out1
    di = float(out1.split("disparate_impact ")[1].split()[0])
    assert 0.0 <= di <= 1.0
    assert len(preds.read_text().splitlines()) == 1501


def test_zero_model_on_balanced_data(bank_csv, tmp_path, capsys):
    model = tmp_path / "m.txt"
    assert main(["fit", "--data", str(bank_csv), "--bank", "--estimator", "lr", "--out", str(model)]) == 0
    m = read_model(model)
    m.params = ModelParams.zeros(len(m.feature_names), 0)
    m.stratum_ids = np.array([])
    write_model(m, model)
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--data", str(bank_csv)]) == 0
    out = capsys.readouterr().out
    ac = float(out.split("accuracy ")[1].split()[0])
    with open(bank_csv) as fh:
        share = np.mean([line.rstrip().endswith('"yes"') for line in fh.readlines()[1:]])
    assert ac == pytest.approx(share, abs=1e-6)  # all rows predicted positive


def test_model_file_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = ModelParams(rng.normal(), rng.normal(size=3), rng.normal(size=2) / 3, 0.123456789)
    model = ModelFile("glmm", params, ["a", "b=x", "c"], np.array([10, 20]), {"k": "v"})
    write_model(model, tmp_path / "m")
    back = read_model(tmp_path / "m")
    assert np.array_equal(back.params.delta(), params.delta()) and back.params.q == params.q
    assert back.stratum_ids.tolist() == [10, 20] and back.feature_names == ["a", "b=x", "c"]


def test_bad_data_file_is_data_error(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["fit", "--data", str(bad), "--bank", "--estimator", "lr", "--out", str(tmp_path / "m")]) == 3
    assert main(["evaluate", "--model", str(bad), "--data", str(bad)]) == 3


def test_sensitivity_command(bank_csv, tmp_path, capsys):
    out = tmp_path / "s.csv"
    code = main(["sensitivity", "--bank", "--data", str(bank_csv), "--set", "housing", "--set", "marital",
                 "--set", "housing,marital", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4 and lines[3].startswith("housing/marital,")
    assert "rank by |zeta|" in capsys.readouterr().out


def test_sensitivity_constant_column(tmp_path):
    data = tmp_path / "d.csv"
    rng = np.random.default_rng(1)
    rows = ["x,s,k,y"] + [f"{v:.4f},{i % 2},1,{int(v + rng.normal() > 0)}" for i, v in enumerate(rng.normal(size=60))]
    data.write_text("\n".join(rows) + "\n")
    schema = tmp_path / "schema.txt"
    schema.write_text("x: numeric\ns: sensitive\nk: sensitive\ny: label\n")
    out = tmp_path / "o.csv"
    assert main(["sensitivity", "--data", str(data), "--schema", str(schema), "--set", "k", "--out", str(out)]) == 0
    row = out.read_text().splitlines()[1].split(",")
    assert row[0] == "k" and float(row[1]) == 0.0


def test_sensitivity_unknown_set_is_usage_error(bank_csv, tmp_path):
    schema = tmp_path / "schema.txt"
    schema.write_text("x: numeric\ns: sensitive\ny: label\n")
    code = main(["sensitivity", "--data", str(bank_csv), "--schema", str(schema), "--set", "nope",
                 "--out", str(tmp_path / "o")])
    assert code == 2
