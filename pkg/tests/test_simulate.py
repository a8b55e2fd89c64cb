from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpint.experiments import _figure2_model
from perpint.scale_speed import DiffusionSpec
from perpint.simulate import (
    AlleleState,
    SimConfig,
    SimulationError,
    build_time_change,
    coupled_ensemble,
    multiallele_ensemble,
    nested_reduction_check,
    quadratic_variation_check,
    simulate_1d,
    simulate_1d_ensemble,
    simulate_coupled,
    simulate_multiallele,
)

WF = DiffusionSpec.from_strings("sqrt(y*(1-y))", "0", (0.0, 1.0))
FELLER = DiffusionSpec.from_strings("sqrt(y)", "0.25")


@pytest.mark.parametrize(
    "kwargs",
    [dict(dt=0.0), dict(dt=2.0, t_budget=1.0), dict(absorption_eps=0.0), dict(seed=-1),
     dict(seed=2**64), dict(scheme="milstein"), dict(scheme="euler-reflected"),
     dict(min_step_fraction=0.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_start_must_clear_absorption_threshold():
    with pytest.raises(ValueError):
        simulate_1d(WF, 1e-7, SimConfig(absorption_eps=1e-6))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_path_invariants(index, x0):
    tr = simulate_1d(WF, x0, SimConfig(dt=1e-3, seed=77), ["1/(1-y)", "1"], trajectory_index=index)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all((tr.states >= 0) & (tr.states <= 1))
    for v in tr.integrals.values():
        assert np.all(np.diff(v) >= 0)
    # the constant integrand accumulates elapsed time
    assert tr.integrals["1"][-1] == pytest.approx(tr.times[-1], rel=1e-9)
    if tr.absorbed_at is not None:
        assert tr.absorbed_at[1] == tr.times[-1]
        assert tr.states[-1] in (0.0, 1.0)


def test_budget_exhaustion_leaves_path_unabsorbed():
    tr = simulate_1d(FELLER, 5.0, SimConfig(dt=1e-2, t_budget=0.5))
    assert tr.absorbed_at is None
    assert tr.times[-1] == pytest.approx(0.5)


def test_ensemble_matches_single_paths_and_ignores_worker_count():
    cfg = SimConfig(dt=1e-3, seed=2024)
    one = simulate_1d_ensemble(WF, 0.3, cfg, ["1/(1-y)"], 64, jobs=1)
    four = simulate_1d_ensemble(WF, 0.3, cfg, ["1/(1-y)"], 64, jobs=4)
    assert np.array_equal(one.codes, four.codes)
    assert np.array_equal(one.times, four.times)
    assert np.array_equal(one.integrals, four.integrals)
    for i in (0, 17, 63):
        tr = simulate_1d(WF, 0.3, cfg, ["1/(1-y)"], trajectory_index=i)
        assert tr.times[-1] == one.times[i]
        assert tr.integrals["1/(1-y)"][-1] == one.integrals[i, 0]


def test_brownian_hitting_time_has_heavy_tail():
    # E T_0 = inf: truncated means keep growing with the budget
    spec = DiffusionSpec.from_strings("1", "0")
    means = []
    for budget in (10.0, 40.0, 160.0):
        ens = simulate_1d_ensemble(spec, 1.0, SimConfig(dt=1e-2, t_budget=budget, seed=9), ["1"], 2000)
        means.append(float(np.minimum(ens.integrals[:, 0], budget).mean()))
    assert means[0] < means[1] < means[2]
    assert means[2] / means[1] > 1.5


def test_two_allele_system_is_the_one_dimensional_path():
    cfg = SimConfig(dt=1e-3, seed=5)
    for index in range(4):
        one = simulate_1d(WF, 0.3, cfg, trajectory_index=index)
        two = simulate_multiallele(2, [0.3, 0.7], cfg, trajectory_index=index)
        assert np.array_equal(one.times, two.times)
        assert np.array_equal(one.states, two.states[:, 0])


def test_multiallele_path_invariants():
    tr = simulate_multiallele(4, [0.25] * 4, SimConfig(dt=1e-3, seed=12), trajectory_index=3)
    x = tr.states
    assert np.max(np.abs(x.sum(axis=1) - 1)) <= 1e-12
    assert np.all((x >= 0) & (x <= 1))
    ext = tr.events["extinction_times"]
    assert len(ext) == 3
    for i, t in ext.items():
        assert np.all(x[tr.times >= t, i] == 0)
    state = tr.allele_state()
    assert set(state.extinct) == set(ext)


def test_allele_state_rejects_points_off_the_simplex():
    with pytest.raises(SimulationError):
        AlleleState(np.array([0.5, 0.6]), {})


def test_multiallele_rejects_bad_start():
    with pytest.raises(ValueError):
        simulate_multiallele(3, [0.5, 0.5], SimConfig())
    with pytest.raises(ValueError):
        simulate_multiallele(3, [0.5, 0.6, -0.1], SimConfig())


def test_multiallele_ensemble_is_deterministic():
    cfg = SimConfig(dt=1e-3, seed=8)
    a = multiallele_ensemble(3, [1 / 3] * 3, cfg, 50, jobs=1)
    b = multiallele_ensemble(3, [1 / 3] * 3, cfg, 50, jobs=3)
    assert np.array_equal(a.ext_steps, b.ext_steps)
    assert np.array_equal(a.times, b.times)


def test_multiallele_covariation():
    cfg = SimConfig(dt=1e-4, seed=31)
    trs = [simulate_multiallele(3, [0.3, 0.3, 0.4], cfg, trajectory_index=k) for k in range(20)]
    qv = quadratic_variation_check(trs)
    assert qv.n_increments >= 10_000
    assert qv.within(0.10), qv.ratio


def test_nested_reduction():
    cfg = SimConfig(dt=1e-4, seed=32)
    trs = [simulate_multiallele(3, [0.3, 0.3, 0.4], cfg, trajectory_index=k) for k in range(20)]
    rep = nested_reduction_check(trs)
    assert rep.within(0.15), rep.qv.ratio
    for tc, y in zip(rep.time_changes, rep.ratios):
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diff(tc.t) > 0)


def test_time_change_trivial_cases():
    u = np.linspace(0.0, 5.0, 501)
    ident = build_time_change(u, np.full_like(u, 3.0), "1")
    assert np.allclose(ident.tau(u), u)
    kappa = 2.5
    tc = build_time_change(u, np.full_like(u, kappa), "y")
    t = np.linspace(0.0, tc.t_max, 50)
    assert np.allclose(tc.tau(t), kappa * t, rtol=1e-12)
    assert tc.tau(tc.t_max) == pytest.approx(u[-1])


def test_time_change_self_consistency_on_logistic_path():
    spec = DiffusionSpec.from_strings("sqrt(y)", "y*(1-0.1*y)")
    tr = simulate_1d(spec, 2.0, SimConfig(dt=1e-3, t_budget=20.0, seed=4))
    tc = build_time_change(tr.times, tr.states, "y")
    t = np.linspace(0.0, tc.t_max, 100)
    assert np.allclose(tc.A(tc.tau(t)), t, rtol=1e-6, atol=1e-12)
    assert np.all(np.diff(tc.u) > 0) and np.all(np.diff(tc.t) > 0)


def test_time_change_against_closed_form():
    # N_u = e^u, f = y: A(u) = 1 - e^-u
    u = np.linspace(0.0, 4.0, 40_001)
    tc = build_time_change(u, np.exp(u), "y")
    assert np.allclose(tc.t, 1 - np.exp(-u), atol=1e-8)


def test_time_change_drops_absorbed_endpoint_and_rejects_blow_up():
    u = np.linspace(0.0, 1.0, 11)
    vals = np.linspace(1.0, 0.0, 11)
    tc = build_time_change(u, vals, "y")
    assert tc.u.size == 10
    vals[4] = 0.0
    with pytest.raises(ValueError):
        build_time_change(u, vals, "y")


def test_coupled_path_freezes_after_outcome():
    tr = simulate_coupled("sqrt(y)", "y*(-1-0.1*y)", "y", SimConfig(dt=1e-3, seed=6), n0=1.0, x0=0.5)
    assert tr.columns == ("N", "X")
    assert tr.events["outcome"] in ("fixation-first", "extinction-first")
    n, x = tr.states[-1]
    if tr.events["outcome"] == "fixation-first":
        assert x in (0.0, 1.0) and n > 0
    else:
        assert n == 0.0 and 0 < x < 1


def test_fixed_allele_cannot_see_extinction_first():
    ens = coupled_ensemble("y^0.3", "y*(-1-0.1*y)", "y", SimConfig(dt=1e-3, seed=1), 1.0, 0.0, 200)
    assert ens.counts()["extinction-first"] == 0


def test_euler_and_time_change_schemes_agree():
    s, d, f = _figure2_model(0.4, -1.0, 0.1)
    cfg = SimConfig(dt=1e-3, seed=19)
    a = coupled_ensemble(s, d, f, cfg, 1.0, 0.5, 1000, scheme="time-change").counts()
    b = coupled_ensemble(s, d, f, cfg, 1.0, 0.5, 1000, scheme="euler").counts()
    pa, pb = a["extinction-first"] / 1000, b["extinction-first"] / 1000
    se = math.sqrt((pa * (1 - pa) + pb * (1 - pb)) / 1000)
    assert a["undecided"] == 0
    assert abs(pa - pb) <= 3 * se + 1e-3


def test_absorption_consistency_under_refinement():
    # refining both dt and absorption_eps tenfold moves fixation-first frequencies
    # by less than two standard errors of the difference
    s, d, f = _figure2_model(0.4, -1.0, 0.1)
    n = 2000
    p = []
    for dt, eps in [(1e-2, 1e-5), (1e-3, 1e-6)]:
        c = coupled_ensemble(s, d, f, SimConfig(dt=dt, absorption_eps=eps, t_budget=1e4, seed=3),
                             1.0, 0.5, n).counts()
        p.append(c["fixation-first"] / n)
    se = math.sqrt(sum(q * (1 - q) for q in p) / n)
    assert abs(p[0] - p[1]) < 2 * se
