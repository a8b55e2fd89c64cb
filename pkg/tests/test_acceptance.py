"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
from __future__ import annotations

import os
import time

import numpy as np

from perpint.classifier import Outcome, classify_fixation_before_extinction, classify_perpetual_zero
from perpint.cli import main
from perpint.coefficients import parse_expr
from perpint.experiments import (
    ExperimentConfig,
    run_criterion_validation,
    run_figure2_sweep,
    run_green_calibration,
    run_martingale_check,
    run_moment_check,
)
from perpint.rng import DEFAULT_SEED
from perpint.scale_speed import DiffusionSpec, build_scale_speed, classify_boundaries
from perpint.simulate import SimConfig, multiallele_ensemble

JOBS = os.cpu_count() or 1


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_power_integrand_grid(acceptance):
    with Timer() as t:
        wrong = []
        for ratio in (0.1, 0.25, 0.4):
            spec = DiffusionSpec.from_strings("sqrt(y)", repr(ratio))
            ss = build_scale_speed(spec)
            for alpha in (0.5, 0.9, 1.0, 1.1, 2.0):
                v = classify_perpetual_zero(spec, parse_expr(f"y^(-{alpha!r})"), ss=ss)
                if v.outcome is not (Outcome.INFINITE if alpha >= 1 else Outcome.FINITE):
                    wrong.append((ratio, alpha, v.outcome.value))
    ok = not wrong and t.seconds < 10
    acceptance(1, "drift/variance x power grid, 15/15 verdicts", ok,
               f"{15 - len(wrong)}/15 correct, {t.seconds:.2f}s")
    assert ok, wrong


def test_criterion_02_absorption_classification(acceptance):
    with Timer() as t:
        got = {r: classify_boundaries(build_scale_speed(DiffusionSpec.from_strings("sqrt(y)", repr(r))))
               .absorbed_in_finite_time for r in (0.25, 0.5, 0.75)}
    ok = got[0.25] is True and got[0.5] is not True and got[0.75] is False and t.seconds < 5
    acceptance(2, "finite-time absorption for ratios 0.25/0.5/0.75", ok, f"{got}, {t.seconds:.2f}s")
    assert ok


def test_criterion_03_fixation_before_extinction(acceptance):
    with Timer() as t:
        cases = {0.0: Outcome.INFINITE, 0.1: Outcome.FINITE, 0.25: Outcome.FINITE, 0.4: Outcome.FINITE}
        got = {eps: classify_fixation_before_extinction(parse_expr(f"y^({(1 - eps) / 2!r})"),
                                                        parse_expr("y")).outcome
               for eps in cases}
    correct = sum(got[e] is cases[e] for e in cases)
    ok = correct == 4 and t.seconds < 5
    acceptance(3, "fixation-before-extinction verdicts", ok, f"{correct}/4 correct, {t.seconds:.2f}s")
    assert ok


def test_criterion_04_extinction_counts_increase(acceptance):
    with Timer() as t:
        cfg = ExperimentConfig("figure2", grid={"eps": (0.1, 0.25, 0.4)}, params={"r": -1.0, "c": 0.1},
                               n_paths=2000, sim=SimConfig(dt=1e-3, absorption_eps=1e-6, t_budget=1e4),
                               seed=DEFAULT_SEED, jobs=JOBS)
        stats = run_figure2_sweep(cfg)
    counts = stats.column("extinction_first")
    pv = stats.meta["pvalues"]
    ok = stats.meta["increasing"] and t.seconds < 600
    acceptance(4, "extinction-first counts increase with the exponent", ok,
               f"counts {counts}, p {['%.2g' % p for p in pv]}, {t.seconds:.1f}s")
    assert ok


def test_criterion_05_moment_bounds(acceptance):
    with Timer() as t:
        cfg = ExperimentConfig("moments", n_paths=100_000, sim=SimConfig(dt=1e-3, t_budget=1e4),
                               seed=DEFAULT_SEED, jobs=JOBS)
        stats = run_moment_check(cfg)
    detail = "; ".join(f"n={r[0]}: {r[1]:.4f}+-{r[2]:.4f} vs {r[3]:.4f}" for r in stats.rows)
    ok = not stats.failed and t.seconds < 300
    acceptance(5, "moments below n!(int s f m)^n", ok, f"{detail}, {t.seconds:.1f}s")
    assert ok


def test_criterion_06_green_calibration(acceptance):
    with Timer() as t:
        cfg = ExperimentConfig("green", n_paths=50_000, sim=SimConfig(dt=1e-3, t_budget=1e4),
                               seed=DEFAULT_SEED, jobs=JOBS)
        stats = run_green_calibration(cfg)
    detail = "; ".join(f"x={r[0]}: z={r[5]:+.2f}" for r in stats.rows)
    ok = not stats.failed and t.seconds < 300
    acceptance(6, "Monte Carlo against Green quadrature within 3 SE", ok, f"{detail}, {t.seconds:.1f}s")
    assert ok


def test_criterion_07_martingale(acceptance):
    with Timer() as t:
        cfg = ExperimentConfig("martingale", n_paths=10_000, sim=SimConfig(dt=1e-4, t_budget=1e3),
                               seed=DEFAULT_SEED, jobs=JOBS)
        stats = run_martingale_check(cfg)
    detail = "; ".join(f"x={r[0]}: {r[5]:.4f}" for r in stats.rows)
    ok = not stats.failed and t.seconds < 300
    acceptance(7, "neutral fixation probability equals start", ok, f"{detail}, {t.seconds:.1f}s")
    assert ok


def test_criterion_08_successive_extinctions(acceptance):
    with Timer() as t:
        parts, ok = [], True
        for L in (3, 4):
            cfg = SimConfig(dt=1e-3, absorption_eps=1e-6, t_budget=1e3, seed=DEFAULT_SEED + L)
            ens = multiallele_ensemble(L, np.full(L, 1.0 / L), cfg, 2000, jobs=JOBS)
            fixed = float(ens.fixed.mean())
            defect = float(ens.simplex_defect.max())
            simult = int(ens.simultaneous().sum())
            ordered = bool(np.all(ens.n_extinctions() == L - 1))
            ok &= fixed == 1.0 and defect <= 1e-12 and simult == 0 and ordered
            parts.append(f"L={L}: fixed {fixed:.3f}, defect {defect:.1e}, simultaneous {simult}, "
                         f"ordered {ordered}")
    ok = ok and t.seconds < 600
    acceptance(8, "successive non-simultaneous extinctions", ok, f"{'; '.join(parts)}, {t.seconds:.1f}s")
    assert ok


def test_criterion_09_empirical_zero_one_law(acceptance):
    with Timer() as t:
        grow = run_criterion_validation(ExperimentConfig("wf-fixation", n_paths=1000, seed=DEFAULT_SEED,
                                                         jobs=JOBS))
        stable = run_criterion_validation(ExperimentConfig(
            "example2.1", grid={"alpha": (0.5, 0.9)}, n_paths=1000, seed=DEFAULT_SEED, jobs=JOBS))
    g = grow.column("grow_fraction")[0]
    fin = [r for r in stable.rows if r[stable.columns.index("verdict")] == "FiniteAS"]
    s = [r[stable.columns.index("stable_fraction")] for r in fin]
    ok = g >= 0.95 and len(fin) == 6 and min(s) >= 0.95 and t.seconds < 600
    acceptance(9, "truncated integrals grow / stabilise per verdict", ok,
               f"grow {g:.3f}; stable min {min(s):.3f} over {len(fin)} cells, {t.seconds:.1f}s")
    assert ok


def test_criterion_10_byte_identical_reruns(acceptance, tmp_path, capsys):
    runs = [
        ("figure2", ["--n", "300", "--dt", "0.005"]),
        ("successive", ["--L", "3", "--n", "200"]),
        ("criterion", ["--preset", "wf-fixation", "--n", "200"]),
        ("martingale", ["--n", "300", "--dt", "0.001"]),
    ]
    same = []
    for name, extra in runs:
        blobs = []
        for jobs in ("1", "2", "4"):
            out = tmp_path / f"{name}-{jobs}.csv"
            code = main(["experiment", name, *extra, "--seed", "123", "--jobs", jobs, "--out", str(out)])
            assert code in (0, 5)
            blobs.append(b"".join(p.read_bytes() for p in sorted(tmp_path.glob(f"{name}-{jobs}*.csv"))))
        same.append(blobs[0] == blobs[1] == blobs[2])
    capsys.readouterr()
    ok = all(same)
    acceptance(10, "CSV byte-identical across --jobs 1/2/4", ok,
               ", ".join(f"{n}: {s}" for (n, _), s in zip(runs, same)))
    assert ok
