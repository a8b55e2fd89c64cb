"""Simulation campaigns and analytic-versus-empirical cross checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats as _stats

from .classifier import (
    Outcome,
    classify_perpetual_two_sided,
    classify_perpetual_zero,
    girsanov_reduce,
    moment_bound,
)
from .coefficients import parse_expr
from .io import write_csv
from .rng import DEFAULT_SEED, derive_seed
from .scale_speed import DiffusionSpec, build_scale_speed, green_expectation
from .simulate import (
    SimConfig,
    coupled_ensemble,
    log_clock_ensemble,
    multiallele_ensemble,
    simulate_1d_ensemble,
    simulate_coupled,
)

__all__ = [
    "EnsembleStats",
    "ExperimentConfig",
    "PRESETS",
    "figure1_path",
    "figure2_trend",
    "run_criterion_validation",
    "run_figure2_sweep",
    "run_green_calibration",
    "run_martingale_check",
    "run_moment_check",
    "run_selection_case",
    "run_successive_extinctions",
]

MIN_PATHS = 100
UNDECIDED_WARNING = 0.10
LADDER_FRACTION = 0.95
BUMP = "min(1, max(0, 2-2*y))"


@dataclass
class ExperimentConfig:
    """What to run: a preset id, its parameter grid and ensemble settings.

    ``grid`` maps parameter names to value lists; ``params`` holds scalar
    model parameters. Missing entries fall back to the preset defaults.
    """

    preset: str
    grid: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    n_paths: int = 2000
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = DEFAULT_SEED
    jobs: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        if self.n_paths < MIN_PATHS:
            raise ValueError(f"at least {MIN_PATHS} trajectories per cell are required")
        for name, values in self.grid.items():
            if len(tuple(values)) == 0:
                raise ValueError(f"parameter grid {name!r} is empty")

    def values(self, name: str, default) -> tuple:
        return tuple(self.grid.get(name, default))

    def param(self, name: str, default):
        return self.params.get(name, default)

    def cell_sim(self, *labels) -> SimConfig:
        return replace(self.sim, seed=derive_seed(self.seed, self.preset, *labels))


@dataclass
class EnsembleStats:
    """One table of per-cell (or per-path) results plus diagnostics.

    ``failed`` is set when an analytic verdict and a decided empirical
    classification disagree.
    """

    experiment: str
    columns: tuple
    rows: list
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    failed: bool = False

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def write(self, path) -> list:
        """Write the main table to ``path`` and each extra table next to it."""
        written = [write_csv(path, self.columns, self.rows)]
        base = str(path)
        stem = base[:-4] if base.endswith(".csv") else base
        for name, (cols, rows) in sorted(self.extra.items()):
            written.append(write_csv(f"{stem}.{name}.csv", cols, rows))
        return written


# --------------------------------------------------------------------------
# Variable population size and fixation


def _figure2_model(eps: float, r: float, c: float):
    sigma = f"y^({(1.0 - eps) / 2!r})"
    drift = f"y*({r!r} - {c!r}*y)"
    return sigma, drift, "y"


FIGURE2_SIM = SimConfig(dt=1e-3, absorption_eps=1e-6, t_budget=1e4)


def run_figure2_sweep(cfg: ExperimentConfig) -> EnsembleStats:
    """Count paths on which the population dies before the allele fixes, per exponent.

    Model: ``dN = N^((1-eps)/2) dB + N (r - c N) dt`` coupled with
    ``dX = sqrt(X (1-X) / N) dW``.
    """
    eps_values = cfg.values("eps", (0.1, 0.25, 0.4))
    r = float(cfg.param("r", -1.0))
    c = float(cfg.param("c", 0.1))
    n0 = float(cfg.param("n0", 1.0))
    x0 = float(cfg.param("x0", 0.5))
    scheme = str(cfg.param("scheme", "time-change"))
    columns = ("eps", "extinction_first", "total", "fixation_first", "undecided",
               "n0", "x0", "r", "c", "dt", "scheme")
    rows, warnings = [], []
    for eps in eps_values:
        sim = cfg.cell_sim("eps", float(eps))
        sigma, drift, f = _figure2_model(float(eps), r, c)
        ens = coupled_ensemble(sigma, drift, f, sim, n0, x0, cfg.n_paths, scheme=scheme,
                               jobs=cfg.jobs)
        cnt = ens.counts()
        if cnt["undecided"] > UNDECIDED_WARNING * cfg.n_paths:
            warnings.append(f"eps={eps}: {cnt['undecided']} of {cfg.n_paths} paths undecided at budget")
        rows.append((float(eps), cnt["extinction-first"], cfg.n_paths, cnt["fixation-first"],
                     cnt["undecided"], n0, x0, r, c, sim.dt, scheme))
    stats = EnsembleStats("figure2", columns, rows, warnings)
    ok, pvalues = figure2_trend(stats)
    stats.meta.update(increasing=ok, pvalues=pvalues)
    return stats


def one_sided_increase_pvalue(k_low: int, k_high: int) -> float:
    """Exact conditional test of ``p_high > p_low`` for equal ensemble sizes.

    Given ``k_low + k_high`` events, ``k_high`` is Binomial(total, 1/2)
    under equal rates.
    """
    total = k_low + k_high
    if total == 0:
        return 1.0
    return float(_stats.binomtest(k_high, total, 0.5, alternative="greater").pvalue)


def figure2_trend(stats: EnsembleStats, level: float = 0.01):
    """Whether counts increase strictly along the exponent grid, with per-pair p-values."""
    order = sorted(range(len(stats.rows)), key=lambda k: stats.rows[k][0])
    counts = [stats.rows[k][1] for k in order]
    pvalues = [one_sided_increase_pvalue(a, b) for a, b in zip(counts, counts[1:])]
    ok = all(b > a for a, b in zip(counts, counts[1:])) and all(p < level for p in pvalues)
    return ok, pvalues


def figure1_path(eps: float = 0.4, r: float = -1.0, c: float = 0.1, n0: float = 1.0,
                 x0: float = 0.5, sim: SimConfig = FIGURE2_SIM, scheme: str = "time-change"):
    """A single coupled path of the extinction-race model, for plotting."""
    sigma, drift, f = _figure2_model(eps, r, c)
    return simulate_coupled(sigma, drift, f, sim, n0, x0, scheme=scheme)


def run_selection_case(cfg: ExperimentConfig) -> EnsembleStats:
    """Fixation-first frequency for the two-type competitive system in (N, X) form.

    ``dN = sqrt(N) dB + N (r1 - c N) dt + (r2 - r1) N (1 - X) dt``,
    ``dX = sqrt(X (1-X) / N) dW - (r2 - r1) X (1-X) dt``. The analytic
    side removes the bounded selection drift by a change of measure and
    classifies ``int 1/N`` for the unperturbed logistic process.
    """
    r1 = float(cfg.param("r1", -1.0))
    r2 = float(cfg.param("r2", -0.8))
    c = float(cfg.param("c", 0.1))
    n0 = float(cfg.param("n0", 1.0))
    x0 = float(cfg.param("x0", 0.5))
    scheme = str(cfg.param("scheme", "time-change"))
    s = r2 - r1
    sim = cfg.cell_sim("r1", r1, "r2", r2, "c", c)
    ens = coupled_ensemble("sqrt(y)", f"y*({r1!r} - {c!r}*y)", "y", sim, n0, x0, cfg.n_paths,
                           selection=s, scheme=scheme, jobs=cfg.jobs)
    cnt = ens.counts()
    fix = cnt["fixation-first"]
    ci = _stats.binomtest(fix, cfg.n_paths).proportion_ci(0.95, method="exact")
    spec = DiffusionSpec(parse_expr("sqrt(y)"), parse_expr(f"y*({r1!r} - {c!r}*y)"))
    verdict = girsanov_reduce(spec, parse_expr("1/y"), parse_expr(f"{abs(s)!r}*y"),
                              absorbed=True, no_explosion=True)
    columns = ("r1", "r2", "c", "n0", "x0", "fixation_first", "extinction_first", "undecided",
               "total", "frequency", "ci_low", "ci_high", "verdict")
    row = (r1, r2, c, n0, x0, fix, cnt["extinction-first"], cnt["undecided"], cfg.n_paths,
           fix / cfg.n_paths, float(ci.low), float(ci.high), verdict.outcome.value)
    warnings = []
    if cnt["undecided"] > UNDECIDED_WARNING * cfg.n_paths:
        warnings.append(f"{cnt['undecided']} of {cfg.n_paths} paths undecided at budget")
    stats = EnsembleStats("selection", columns, [row], warnings)
    stats.meta["verdict"] = verdict.summary()
    # the analytic verdict says fixation-first almost surely
    stats.failed = verdict.outcome is Outcome.INFINITE and float(ci.high) < 0.99
    return stats


# --------------------------------------------------------------------------
# Perpetual integrals: verdicts against budget ladders


def _empirical_class(ladder, k: int, retained) -> tuple:
    grows = ladder.grows(k)[retained]
    stable = ladder.stabilizes(k)[retained]
    n = max(int(np.count_nonzero(retained)), 1)
    g = float(np.count_nonzero(grows)) / n
    s = float(np.count_nonzero(stable)) / n
    if g >= LADDER_FRACTION:
        label = Outcome.INFINITE
    elif s >= LADDER_FRACTION:
        label = Outcome.FINITE
    else:
        label = Outcome.INCONCLUSIVE
    return label, g, s


CRITERION_PRESETS = ("example2.1", "wf-fixation", "wf-selection")


def run_criterion_validation(cfg: ExperimentConfig) -> EnsembleStats:
    """Compare analytic verdicts with budget-ladder classifications of simulated paths.

    The budget is how deep a path gets into the boundary layer (in octaves
    of distance); see :func:`perpint.simulate.log_clock_ensemble`.
    """
    depths = cfg.values("depths", (64, 128, 256))
    columns = ("model", "boundary", "f", "verdict", "retained", "grow_fraction",
               "stable_fraction", "empirical", "agree")
    rows, warnings = [], []
    failed = False
    cells = []
    if cfg.preset == "example2.1":
        for ratio in cfg.values("beta", (0.1, 0.25, 0.4)):
            spec = DiffusionSpec.from_strings("sqrt(y)", repr(float(ratio)))
            fs = [f"y^(-{float(a)!r})" for a in cfg.values("alpha", (0.5, 0.9, 1.0, 1.1, 2.0))]
            cells.append((f"feller beta={float(ratio)!r}", spec, 1.0, 0, fs, "left"))
    elif cfg.preset in ("wf-fixation", "wf-selection"):
        rsel = float(cfg.param("r", 0.5 if cfg.preset == "wf-selection" else 0.0))
        drift = "0" if rsel == 0 else f"{rsel!r}*y*(1-y)"
        spec = DiffusionSpec.from_strings("sqrt(y*(1-y))", drift, (0.0, 1.0))
        x0 = float(cfg.param("x0", 0.5))
        cells.append((f"wright-fisher r={rsel!r}", spec, x0, 1, ["1/(1-y)"], "right"))
    else:
        raise ValueError(f"unknown criterion preset {cfg.preset!r}; expected one of {CRITERION_PRESETS}")

    for name, spec, x0, bidx, fs, side in cells:
        exprs = [parse_expr(f) for f in fs]
        ladder = log_clock_ensemble(spec, x0, exprs, depths, cfg.n_paths,
                                    seed=derive_seed(cfg.seed, cfg.preset, name), jobs=cfg.jobs)
        retained = ladder.codes == (1 if side == "left" else 2)
        if not retained.any():
            warnings.append(f"{name}: no path reached the {side} boundary")
        for k, f in enumerate(exprs):
            if spec.bounded:
                verdict = classify_perpetual_two_sided(spec, f, side)
            else:
                verdict = classify_perpetual_zero(spec, f)
            label, g, s = _empirical_class(ladder, k, retained)
            both = verdict.decided and label is not Outcome.INCONCLUSIVE
            agree = (verdict.outcome is label) if both else None
            if agree is False:
                failed = True
            rows.append((name, spec.domain[bidx], fs[k], verdict.outcome.value,
                         int(np.count_nonzero(retained)), g, s, label.value,
                         "" if agree is None else agree))
    stats = EnsembleStats(cfg.preset, columns, rows, warnings, failed=failed)
    stats.meta["depths_octaves"] = list(depths)
    return stats


# --------------------------------------------------------------------------
# L-allele Wright-Fisher


def run_successive_extinctions(L: int, cfg: ExperimentConfig) -> EnsembleStats:
    """Per path: fixation flag, ordered extinction times and the smallest step gap."""
    if L < 2:
        raise ValueError("need at least two alleles")
    x0 = cfg.param("x0", None)
    x0 = np.full(L, 1.0 / L) if x0 is None else np.asarray(x0, dtype=float)
    sim = cfg.cell_sim("L", L)
    ens = multiallele_ensemble(L, x0, sim, cfg.n_paths, jobs=cfg.jobs)
    order = np.argsort(np.where(ens.ext_steps >= 0, ens.ext_steps, np.iinfo(np.int64).max),
                       axis=1, kind="stable")
    gaps = ens.min_gaps()
    columns = ("path", "fixed", "n_extinctions", "simultaneous", "min_gap_steps",
               *(f"extinction_{k + 1}_time" for k in range(L - 1)),
               *(f"extinction_{k + 1}_allele" for k in range(L - 1)))
    rows = []
    n_ext = ens.n_extinctions()
    simult = ens.simultaneous()
    for j in range(cfg.n_paths):
        alleles = [int(a) for a in order[j, : L - 1]]
        times = [float(ens.ext_times[j, a]) if ens.ext_steps[j, a] >= 0 else math.nan for a in alleles]
        labels = [a + 1 if ens.ext_steps[j, a] >= 0 else "" for a in alleles]
        gap = gaps[j]
        rows.append((j, bool(ens.fixed[j]), int(n_ext[j]), bool(simult[j]),
                     int(gap) if math.isfinite(gap) else "", *times, *labels))
    finite = gaps[np.isfinite(gaps)]
    edges = [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, math.inf]
    hist = []
    for lo, hi in zip(edges, edges[1:]):
        hist.append((lo, hi, int(np.count_nonzero((finite >= lo) & (finite < hi)))))
    stats = EnsembleStats(f"successive-L{L}", columns, rows)
    stats.extra["gaps"] = (("gap_from", "gap_to", "paths"), hist)
    stats.meta.update(
        fixed_fraction=float(ens.fixed.mean()),
        simultaneous_paths=int(simult.sum()),
        max_simplex_defect=float(ens.simplex_defect.max()),
        all_ordered=bool(np.all(n_ext == L - 1)),
    )
    if not ens.fixed.all():
        stats.warnings.append(f"{int((~ens.fixed).sum())} paths not fixed within budget")
    return stats


# --------------------------------------------------------------------------
# Natural-scale Brownian motion: moments and the Green formula


def _bm_spec() -> DiffusionSpec:
    return DiffusionSpec.from_strings("1", "0")


def _reflected(sim: SimConfig) -> SimConfig:
    # integrands vanish on [1, inf), where the occupation density is irrelevant
    return replace(sim, scheme="euler-reflected", reflect_at=1.0, bridge=True)


def run_moment_check(cfg: ExperimentConfig) -> EnsembleStats:
    """Empirical moments of the integral of the bump up to hitting 0 against n!(int s f m)^n."""
    spec = _bm_spec()
    x0 = float(cfg.param("x0", 0.5))
    f = parse_expr(str(cfg.param("f", BUMP)))
    orders = cfg.values("order", (1, 2))
    sim = _reflected(cfg.cell_sim("moments", x0))
    ens = simulate_1d_ensemble(spec, x0, sim, [f], cfg.n_paths, jobs=cfg.jobs)
    vals = ens.integrals[:, 0]
    columns = ("order", "empirical", "std_error", "bound", "below")
    rows = []
    for n in orders:
        p = vals ** int(n)
        mean = float(p.mean())
        se = float(p.std(ddof=1) / math.sqrt(p.size))
        bound = moment_bound(spec, f, int(n)).bound
        rows.append((int(n), mean, se, bound, mean - 3.0 * se <= bound))
    stats = EnsembleStats("moments", columns, rows)
    stats.failed = not all(r[-1] for r in rows)
    stats.meta["undecided"] = int(np.count_nonzero(ens.codes == 0))
    return stats


GREEN_PAIRS = ((0.5, BUMP), (0.25, "max(0, 1-y)"), (0.75, "min(1, max(0, 3-3*y))"))


def run_green_calibration(cfg: ExperimentConfig) -> EnsembleStats:
    """Monte Carlo mean of the perpetual integral against the Green-kernel quadrature."""
    spec = _bm_spec()
    ss = build_scale_speed(spec)
    columns = ("x0", "f", "empirical", "std_error", "green", "z_score", "match")
    rows = []
    pairs = cfg.params.get("pairs", GREEN_PAIRS)
    for x0, ftext in pairs:
        f = parse_expr(ftext)
        sim = _reflected(cfg.cell_sim("green", x0, ftext))
        ens = simulate_1d_ensemble(spec, float(x0), sim, [f], cfg.n_paths, jobs=cfg.jobs)
        vals = ens.integrals[:, 0]
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
        green = green_expectation(ss, float(x0), f)
        z = (mean - green) / se
        rows.append((float(x0), ftext, mean, se, green, z, abs(z) <= 3.0))
    stats = EnsembleStats("green", columns, rows)
    stats.failed = not all(r[-1] for r in rows)
    return stats


def run_martingale_check(cfg: ExperimentConfig) -> EnsembleStats:
    """Neutral Wright-Fisher: P(hit 1 before 0) against the starting frequency."""
    spec = DiffusionSpec.from_strings("sqrt(y*(1-y))", "0", (0.0, 1.0))
    columns = ("x0", "fixed", "lost", "undecided", "total", "frequency", "abs_error")
    rows = []
    tol = float(cfg.param("tolerance", 0.02))
    for x0 in cfg.values("x0", (0.25, 0.5, 0.75)):
        sim = cfg.cell_sim("martingale", float(x0))
        ens = simulate_1d_ensemble(spec, float(x0), sim, (), cfg.n_paths, jobs=cfg.jobs)
        c = np.bincount(ens.codes, minlength=3)
        freq = c[2] / cfg.n_paths
        rows.append((float(x0), int(c[2]), int(c[1]), int(c[0]), cfg.n_paths, float(freq),
                     abs(float(freq) - float(x0))))
    stats = EnsembleStats("martingale", columns, rows)
    stats.failed = not all(r[-1] <= tol for r in rows)
    return stats


PRESETS = {
    "figure2": run_figure2_sweep,
    "example2.1": run_criterion_validation,
    "wf-fixation": run_criterion_validation,
    "wf-selection": run_criterion_validation,
    "selection": run_selection_case,
    "moments": run_moment_check,
    "green": run_green_calibration,
    "martingale": run_martingale_check,
}
