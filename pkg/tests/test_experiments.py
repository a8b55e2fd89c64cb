from __future__ import annotations

import json
import math

import pytest

from perpint.experiments import (
    EnsembleStats,
    ExperimentConfig,
    figure2_trend,
    one_sided_increase_pvalue,
    run_criterion_validation,
    run_selection_case,
    run_successive_extinctions,
)
from perpint.io import RunManifest, format_value, manifest_path_for, write_csv
from perpint.simulate import SimConfig


def _upper_tail(k, n):
    return sum(math.comb(n, j) for j in range(k, n + 1)) / 2**n


@pytest.mark.parametrize("lo, hi", [(0, 0), (3, 3), (10, 30), (17, 115), (40, 20)])
def test_increase_pvalue_is_exact_binomial_tail(lo, hi):
    expected = 1.0 if lo + hi == 0 else _upper_tail(hi, lo + hi)
    assert one_sided_increase_pvalue(lo, hi) == pytest.approx(expected, rel=1e-9)


def _fig2(counts):
    rows = [(eps, k, 2000) for eps, k in counts]
    return EnsembleStats("figure2", ("eps", "extinction_first", "total"), rows)


def test_trend_requires_significant_strict_increase():
    assert figure2_trend(_fig2([(0.25, 40), (0.1, 5), (0.4, 120)]))[0]
    assert not figure2_trend(_fig2([(0.1, 5), (0.25, 8), (0.4, 120)]))[0]
    assert not figure2_trend(_fig2([(0.1, 50), (0.25, 40), (0.4, 120)]))[0]


def test_config_validation_and_seed_derivation():
    with pytest.raises(ValueError):
        ExperimentConfig("figure2", n_paths=99)
    with pytest.raises(ValueError):
        ExperimentConfig("figure2", grid={"eps": []})
    cfg = ExperimentConfig("figure2", seed=5)
    assert cfg.cell_sim("eps", 0.1).seed != cfg.cell_sim("eps", 0.25).seed
    assert cfg.cell_sim("eps", 0.1).seed == ExperimentConfig("figure2", seed=5).cell_sim("eps", 0.1).seed
    assert cfg.values("eps", (1, 2)) == (1, 2)


def test_unknown_criterion_preset():
    with pytest.raises(ValueError):
        run_criterion_validation(ExperimentConfig("nonsense", n_paths=100))


def test_successive_extinctions_table(tmp_path):
    cfg = ExperimentConfig("successive", n_paths=100, sim=SimConfig(dt=1e-3), seed=3)
    stats = run_successive_extinctions(3, cfg)
    assert len(stats.rows) == 100
    assert stats.meta["fixed_fraction"] == 1.0
    assert stats.meta["simultaneous_paths"] == 0
    assert stats.meta["all_ordered"]
    t1, t2 = stats.column("extinction_1_time"), stats.column("extinction_2_time")
    assert all(a < b for a, b in zip(t1, t2))
    written = stats.write(tmp_path / "succ.csv")
    assert [p.name for p in written] == ["succ.csv", "succ.gaps.csv"]
    assert sum(int(r.split(",")[2]) for r in (tmp_path / "succ.gaps.csv").read_text().splitlines()[1:]) == 100


def test_selection_case_small():
    stats = run_selection_case(ExperimentConfig("selection", n_paths=200, seed=4))
    assert stats.column("verdict") == ["InfiniteAS"]
    assert stats.column("fixation_first")[0] == 200
    assert not stats.failed


def test_criterion_validation_wright_fisher_small():
    stats = run_criterion_validation(ExperimentConfig("wf-fixation", n_paths=200, seed=6))
    (row,) = stats.rows
    assert row[stats.columns.index("verdict")] == "InfiniteAS"
    assert row[stats.columns.index("empirical")] == "InfiniteAS"
    assert not stats.failed


@pytest.mark.parametrize(
    "value, text",
    [(0.1, "0.1"), (1e-300, "1e-300"), (float("nan"), "nan"), (float("-inf"), "-inf"), (True, "true"),
     (3, "3"), (None, ""), ("a,b", "a,b")],
)
def test_format_value(value, text):
    assert format_value(value) == text


def test_csv_quotes_and_line_endings(tmp_path):
    p = write_csv(tmp_path / "t.csv", ("f", "v"), [("min(1, y)", 0.5)])
    assert p.read_bytes() == b'f,v\n"min(1, y)",0.5\n'
    with pytest.raises(ValueError):
        write_csv(tmp_path / "u.csv", ("a", "b"), [(1,)])


def test_manifest_round_trip(tmp_path):
    m = RunManifest("experiment figure2", {"eps": (0.1, 0.4), "dt": math.inf}, 7, "1.0")
    path = m.write(manifest_path_for(tmp_path / "out.csv"))
    assert path.name == "out.csv.manifest.json"
    data = json.loads(path.read_text())
    assert data["status"] == "incomplete"
    assert data["config"] == {"eps": [0.1, 0.4], "dt": "inf"}
    assert not list(tmp_path.glob("*.tmp"))
