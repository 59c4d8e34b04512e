from __future__ import annotations

import json

import numpy as np
import pytest

from anatknn.anatomy import anatomize, write_tables
from anatknn.cli import main
from anatknn.data import Dataset, dump_schema, load_csv, write_csv
from anatknn.experiments import ExperimentConfig, load_report, run_cv
from anatknn.knn import KnnModel, error_rate

from conftest import random_dataset


@pytest.fixture
def files(tmp_path):
    data = random_dataset(np.random.default_rng(0), 200, 4, 2, 1, ids=np.arange(200))
    # give the label some signal so every error rate stays below chance
    y = np.where(data["x0"] + data["x1"] > 5, "a", "b").astype(object)
    data = Dataset(data.schema, {**data.columns, "y": y}, data.row_ids)
    write_csv(data, tmp_path / "d.csv")
    dump_schema(data.schema, tmp_path / "s.json")
    return tmp_path, data


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_anatomize_writes_declared_files(files, capsys):
    tmp, data = files
    code, out, _ = run(["anatomize", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--l", 2, "--seed", 7, "--out", tmp / "o"], capsys)
    assert code == 0
    assert {p.name for p in (tmp / "o").iterdir()} == {"it.csv", "st.csv", "anatomized.csv", "partition.json", "config.json"}
    echoed = json.loads(out[: out.rindex("}") + 1])
    assert echoed["seed"] == 7 and echoed["l"] == 2
    # thin wrapper: same bytes as calling the library directly
    _, it, st_, _ = anatomize(data, 2, 7)
    write_tables(it, st_, tmp / "it.csv", tmp / "st.csv")
    assert (tmp / "it.csv").read_bytes() == (tmp / "o" / "it.csv").read_bytes()
    assert (tmp / "st.csv").read_bytes() == (tmp / "o" / "st.csv").read_bytes()


def test_anatomize_is_reproducible(files, capsys):
    tmp, _ = files
    for out in ("a", "b"):
        run(["anatomize", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--seed", 3, "--out", tmp / out], capsys)
    for name in ("it.csv", "st.csv", "anatomized.csv", "partition.json"):
        assert (tmp / "a" / name).read_bytes() == (tmp / "b" / name).read_bytes()


def test_verify_exit_codes(files, capsys):
    tmp, _ = files
    run(["anatomize", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--l", 2, "--out", tmp / "o"], capsys)
    ok, _, _ = run(["verify", "--it", tmp / "o" / "it.csv", "--st", tmp / "o" / "st.csv", "--l", 2], capsys)
    bad, out, _ = run(["verify", "--it", tmp / "o" / "it.csv", "--st", tmp / "o" / "st.csv", "--l", 3], capsys)
    assert ok == 0
    assert bad == 2 and "l_diverse=False" in out


def test_usage_errors(files, capsys):
    tmp, _ = files
    assert run(["anatomize", "--bogus"], capsys)[0] == 1
    assert run(["anatomize", "--schema", tmp / "s.json", "--out", tmp / "o"], capsys)[0] == 1
    assert run([], capsys)[0] == 1
    code, _, err = run(["cv", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--k", "one"], capsys)
    assert code == 1 and "integers" in err


def test_data_errors(files, capsys):
    tmp, _ = files
    (tmp / "bad.csv").write_text("nope\n1\n")
    code, _, err = run(["anatomize", "--in", tmp / "bad.csv", "--schema", tmp / "s.json", "--out", tmp / "o"], capsys)
    assert code == 2 and "header" in err
    code, _, _ = run(["anatomize", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--l", 9, "--out", tmp / "o"], capsys)
    assert code == 2


def test_config_file_and_flag_override(files, capsys):
    tmp, _ = files
    (tmp / "c.json").write_text(json.dumps({"in": str(tmp / "d.csv"), "schema": str(tmp / "s.json"), "l": 3, "seed": 5}))
    code, out, _ = run(["anatomize", "--config", tmp / "c.json", "--l", 2, "--out", tmp / "o"], capsys)
    assert code == 0
    cfg = json.loads((tmp / "o" / "config.json").read_text())
    assert cfg["l"] == 2 and cfg["seed"] == 5
    (tmp / "u.json").write_text(json.dumps({"colour": 1}))
    assert run(["anatomize", "--config", tmp / "u.json"], capsys)[0] == 1


def test_cv_matches_library(files, capsys):
    tmp, data = files
    code, out, _ = run(
        ["cv", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--variants", "original,anatomized",
         "--l", 2, "--k", "1,3", "--folds", 3, "--seed", 7, "--out", tmp / "cv"],
        capsys,
    )
    assert code == 0 and "original[k=1]: mean=" in out
    report = load_report(tmp / "cv" / "report.json")
    lib = run_cv(
        ExperimentConfig(variants=("original", "anatomized"), k_values=(1, 3), l_values=(2,), folds=3, seed=7), data
    )
    assert report.records == lib.records
    assert (tmp / "cv" / "errors.csv").exists()


def test_classify_and_generalize(files, capsys):
    tmp, data = files
    code, out, _ = run(["classify", "--train", tmp / "d.csv", "--test", tmp / "d.csv", "--schema", tmp / "s.json", "--out", tmp / "c"], capsys)
    model = KnnModel(load_csv(tmp / "d.csv", data.schema).dataset, 1)
    assert code == 0 and f"error={error_rate(model, data)!r}" in out
    lines = (tmp / "c" / "predictions.csv").read_text().splitlines()
    assert lines[0] == "row_id,predicted,actual" and len(lines) == 201
    code, out, _ = run(["generalize", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--k", 4, "--out", tmp / "g"], capsys)
    assert code == 0 and "k_anonymous=True" in out


def test_bounds_sim_and_convergence(files, capsys):
    tmp, _ = files
    code, out, _ = run(["bounds-sim", "--n", 2000, "--n-test", 500, "--l", "1,2", "--k", 1, "--out", tmp / "b"], capsys)
    assert code == 0 and "R*=0.1587" in out
    assert (tmp / "b" / "bounds.json").exists()
    code, out, _ = run(["convergence", "--in", tmp / "d.csv", "--schema", tmp / "s.json", "--l", 2, "--out", tmp / "cv", "--format", "csv"], capsys)
    assert code == 0 and (tmp / "cv" / "curves.csv").exists() and not (tmp / "cv" / "report.json").exists()
