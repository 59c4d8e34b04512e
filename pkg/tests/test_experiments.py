from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from anatknn.data import DataError, fit_normalization
from anatknn.experiments import (
    CONFIDENCE_LEVELS, ExperimentConfig, emit_report, gaussian_pair, load_report, paired_t_test,
    read_errors_csv, run_bounds_sim, run_convergence, run_cv, summarize, t_critical,
)
from anatknn.knn import KnnModel, error_rate

from conftest import random_dataset

# two-sided critical values of Student's t with 9 degrees of freedom (standard tables)
T9_TABLE = {0.8: 1.383, 0.9: 1.833, 0.95: 2.262, 0.98: 2.821, 0.99: 3.250}


@pytest.mark.parametrize("confidence", sorted(T9_TABLE))
def test_t_critical_table(confidence):
    assert t_critical(confidence, 9) == pytest.approx(T9_TABLE[confidence], abs=1e-3)


def test_t_test_identical_vectors():
    a = [0.2, 0.3, 0.25]
    for c in CONFIDENCE_LEVELS:
        r = paired_t_test(a, a, c)
        assert r.t == 0.0 and not r.significant


def test_t_test_constant_shift():
    b = np.array([0.2, 0.3, 0.25, 0.1])
    for c in CONFIDENCE_LEVELS:
        r = paired_t_test(b + 1.0, b, c)
        assert r.t == math.inf and r.significant
    assert paired_t_test(b, b + 1.0).t == -math.inf


def test_t_test_worked_example():
    z = np.arange(10.0)
    z = (z - z.mean()) / z.std(ddof=1)
    diff = 0.04 + 0.02 * z
    r = paired_t_test(diff, np.zeros(10), 0.99)
    assert r.t == pytest.approx(0.04 / (0.02 / math.sqrt(10)))
    assert r.t == pytest.approx(6.32, abs=0.01)
    assert r.critical == pytest.approx(3.25, abs=0.01)
    assert r.significant


@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.integers(0, 10**6))
def test_t_test_matches_scipy_and_is_monotone(a, seed):
    b = np.random.default_rng(seed).uniform(0, 1, len(a))
    a = np.asarray(a)
    res = [paired_t_test(a, b, c) for c in CONFIDENCE_LEVELS]
    diff = a - b
    if diff.std(ddof=1) > 1e-9:
        assert res[0].t == pytest.approx(sps.ttest_rel(a, b).statistic, rel=1e-9)
    flags = [r.significant for r in res]
    # significant at a stricter level implies significant at every looser one
    assert flags == sorted(flags, reverse=True)


def test_t_test_rejects_short_or_unpaired():
    with pytest.raises(ValueError):
        paired_t_test([0.1], [0.2])
    with pytest.raises(ValueError):
        paired_t_test([0.1, 0.2], [0.2])


def test_config_validation():
    with pytest.raises(ValueError, match="at least one"):
        ExperimentConfig(variants=())
    with pytest.raises(ValueError, match="unknown variants"):
        ExperimentConfig(variants=("bagged",))
    with pytest.raises(ValueError, match="unknown config"):
        ExperimentConfig.from_dict({"folds": 3, "colour": "red"})
    cfg = ExperimentConfig(k_values=[1, 3])
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def small():
    return random_dataset(np.random.default_rng(5), 300, 5, 2, 1)


@pytest.fixture(scope="module")
def cv_report(small):
    cfg = ExperimentConfig(
        variants=("original", "anatomized", "anonymized"), k_values=(1, 3), l_values=(2, 3),
        anonymity_k_values=(3,), folds=4, seed=11,
    )
    return run_cv(cfg, small)


def test_cv_report_shape(cv_report):
    labels = {r.label for r in cv_report.records}
    assert len(labels) == 2 * (1 + 2 + 1)
    assert len(cv_report.records) == 4 * len(labels)
    for s in cv_report.summaries:
        errs = cv_report.fold_errors(s.label)
        assert s.mean == pytest.approx(errs.mean())
        assert s.sd == pytest.approx(errs.std(ddof=1))
    for c in cv_report.comparisons:
        flags = [c.significant[str(lvl)] for lvl in CONFIDENCE_LEVELS]
        assert flags == sorted(flags, reverse=True)


def test_cv_is_deterministic(tmp_path, small, cv_report):
    cfg = ExperimentConfig.from_dict(cv_report.config)
    again = run_cv(cfg, small)
    emit_report(cv_report, tmp_path / "a")
    emit_report(again, tmp_path / "b")
    for name in ("report.json", "errors.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cv_parallel_matches_serial(small):
    base = dict(variants=("original", "anatomized"), folds=3, seed=2)
    serial = run_cv(ExperimentConfig(**base), small)
    parallel = run_cv(ExperimentConfig(**base, jobs=2), small)
    assert serial.records == parallel.records


def test_report_round_trip(tmp_path, cv_report):
    emit_report(cv_report, tmp_path)
    back = load_report(tmp_path / "report.json")
    assert back == cv_report
    raw = json.loads((tmp_path / "report.json").read_text())
    assert raw["seed"] == 11 and raw["schema_version"] == 1 and "version" in raw
    assert raw["config"]["folds"] == 4


def test_errors_csv_has_fold_and_summary_rows(tmp_path, cv_report):
    emit_report(cv_report, tmp_path, "csv")
    rows = read_errors_csv(tmp_path / "errors.csv")
    assert list(rows[0]) == ["variant", "parameter", "x", "y"]
    xs = {r["x"] for r in rows}
    assert {"0", "1", "2", "3", "mean", "sd"} <= xs
    fold_rows = [r for r in rows if r["x"].isdigit()]
    assert sorted(float(r["y"]) for r in fold_rows) == sorted(r.error for r in cv_report.records)
    assert not (tmp_path / "report.json").exists()


def test_empty_report_writes_header_only(tmp_path):
    report = summarize({}, 0, [])
    emit_report(report, tmp_path, "csv")
    assert (tmp_path / "errors.csv").read_text() == "variant,parameter,x,y\n"


def test_infeasible_anatomization_names_fold():
    data = random_dataset(np.random.default_rng(1), 60, 2)
    with pytest.raises(DataError, match="fold 0"):
        run_cv(ExperimentConfig(variants=("anatomized",), l_values=(3,), folds=3), data)


def test_convergence_protocol(tmp_path):
    data = random_dataset(np.random.default_rng(9), 400, 5, 2, 1)
    result = run_convergence(ExperimentConfig(protocol="convergence", l_values=(2,), partitions=5, seed=3), data)
    assert [c.label for c in result.curves] == ["original", "anatomized[l=2]"]
    for c in result.curves:
        sizes = [n for n, _ in c.measured]
        assert sizes == [80, 160, 240, 320]
        assert len(c.per_partition) == 4 and all(len(p) == 5 for p in c.per_partition)
        assert c.model.d == 3
    emit_report(result, tmp_path)
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "variant,parameter,x,y,series"
    assert len(lines) == 1 + 2 * 4 * 2


def test_bounds_sim_passthrough_at_l1():
    report = run_bounds_sim(2000, 1, 1, 2.0, seed=4, n_test=500)
    rng = np.random.default_rng(4)
    train = gaussian_pair(2000, 2.0, rng)
    test = gaussian_pair(500, 2.0, rng, id_offset=2000)
    assert report.error(1, 1) == error_rate(KnnModel(train, 1), test)


def test_bounds_sim_analytic_values(tmp_path):
    report = run_bounds_sim(1000, [1, 2], [1], 2.0, seed=0, n_test=200)
    assert report.r_star == pytest.approx(0.5 * math.erfc(1 / math.sqrt(2)), abs=1e-12)
    assert report.upper == pytest.approx(0.3173, abs=1e-4)
    assert report.asymptotic_1nn == pytest.approx(0.267, abs=1e-3)
    emit_report(report, tmp_path)
    raw = json.loads((tmp_path / "bounds.json").read_text())
    assert raw["seed"] == 0 and len(raw["entries"]) == 2


def test_bounds_sim_no_separation():
    report = run_bounds_sim(3000, 1, 1, 0.0, seed=1, n_test=3000)
    assert report.r_star == 0.5
    assert report.error(1, 1) == pytest.approx(0.5, abs=0.04)


def test_bounds_sim_rejects_bad_input():
    with pytest.raises(ValueError):
        run_bounds_sim(1000, 1, 1, -1.0, 0)
    with pytest.raises(ValueError):
        run_bounds_sim(999, 1, 1, 1.0, 0)
    with pytest.raises(ValueError):
        run_bounds_sim(1000, 1, 2, 1.0, 0)


def test_gaussian_pair_moments():
    data = gaussian_pair(20000, 2.0, np.random.default_rng(0))
    x, y = data["x"], data.labels
    assert x[y == "1"].mean() == pytest.approx(-1.0, abs=0.05)
    assert x[y == "2"].std() == pytest.approx(1.0, abs=0.05)
    assert set(fit_normalization(data).categories["s"]) == {f"s{i}" for i in range(8)}
