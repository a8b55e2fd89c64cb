"""Monte Carlo paths of one-dimensional diffusions and the population systems.

All ensemble runners store results by trajectory index, and trajectory
``j`` always draws its noise from the key ``(seed, j)``, so the output of
an ensemble is the same for any number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as K
from .coefficients import CoefficientExpr, eval_expr, parse_expr
from .rng import DEFAULT_SEED
from .scale_speed import DiffusionSpec

__all__ = [
    "AlleleState",
    "CoupledEnsemble",
    "DepthLadder",
    "Ensemble1D",
    "MultialleleEnsemble",
    "SimConfig",
    "SimulationError",
    "TimeChange",
    "Trajectory",
    "build_time_change",
    "coupled_ensemble",
    "log_clock_ensemble",
    "multiallele_ensemble",
    "nested_reduction_check",
    "quadratic_variation_check",
    "simulate_1d",
    "simulate_1d_ensemble",
    "simulate_coupled",
    "simulate_multiallele",
]

SCHEMES = ("euler-full-truncation", "euler-reflected")
COUPLED_SCHEMES = ("time-change", "euler")
# the clock-based coupled scheme follows log N far below any real-time threshold
LOG_EXTINCTION_EPS = 1e-30


class SimulationError(RuntimeError):
    """A scheme produced a state that violates its own invariants."""


@dataclass(frozen=True)
class SimConfig:
    """Discretisation settings shared by the path simulators.

    ``dt`` is the base step (for the time-change coupled scheme, the base
    step of the internal clock). Steps are halved near a boundary down to
    ``dt * min_step_fraction``. ``reflect_at`` applies to the
    ``euler-reflected`` scheme; ``bridge`` adds the Brownian-bridge
    probability of an unobserved crossing within each step.
    """

    dt: float = 1e-3
    absorption_eps: float = 1e-6
    t_budget: float = 1e3
    seed: int = DEFAULT_SEED
    scheme: str = "euler-full-truncation"
    reflect_at: float = math.inf
    bridge: bool = False
    min_step_fraction: float = 1.0 / 1024

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.absorption_eps > 0:
            raise ValueError("absorption_eps must be positive")
        if not self.t_budget > 0:
            raise ValueError("t_budget must be positive")
        if self.dt > self.t_budget:
            raise ValueError("dt exceeds t_budget")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "euler-reflected" and not math.isfinite(self.reflect_at):
            raise ValueError("euler-reflected needs a finite reflect_at level")
        if not 0 < self.min_step_fraction <= 1:
            raise ValueError("min_step_fraction must lie in (0, 1]")

    @property
    def reflect_level(self) -> float:
        return self.reflect_at if self.scheme == "euler-reflected" else math.inf

    @property
    def step_floor(self) -> float:
        return self.dt * self.min_step_fraction


@dataclass
class Trajectory:
    """A recorded path.

    ``states`` is one-dimensional for scalar diffusions and has one column
    per component for systems. ``absorbed_at`` is ``None`` when the time
    budget ran out, otherwise ``(boundary label, time)``.
    """

    times: np.ndarray
    states: np.ndarray
    absorbed_at: Optional[tuple]
    integrals: dict = field(default_factory=dict)
    columns: tuple = ("y",)
    steps: int = 0
    events: dict = field(default_factory=dict)

    def allele_state(self, k: int = -1) -> "AlleleState":
        extinct = {
            i: t for i, t in self.events.get("extinction_times", {}).items() if t <= self.times[k]
        }
        return AlleleState(np.array(self.states[k]), extinct)


@dataclass(frozen=True)
class AlleleState:
    proportions: np.ndarray
    extinct: dict

    def __post_init__(self):
        p = self.proportions
        if np.any(p < 0) or np.any(p > 1) or abs(float(np.sum(p)) - 1.0) > 1e-12:
            raise SimulationError(f"not a point of the simplex: {p!r}")


def _chunks(n: int, jobs: int):
    size = max(1, min(4096, -(-n // max(1, 4 * jobs))))
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def _run_parallel(work: Callable[[int, int], None], n: int, jobs: int) -> None:
    jobs = max(1, int(jobs))
    chunks = _chunks(n, jobs)
    if jobs == 1 or len(chunks) == 1:
        for start, count in chunks:
            work(start, count)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for fut in [pool.submit(work, s, c) for s, c in chunks]:
            fut.result()


def _as_expr(e) -> CoefficientExpr:
    return e if isinstance(e, CoefficientExpr) else parse_expr(str(e))


def _check_start(x0: float, spec: DiffusionSpec, eps: float) -> None:
    a, b = spec.domain
    if not (a + eps < x0 < b - eps):
        raise ValueError(f"x0={x0!r} must lie inside the domain, beyond absorption_eps")


def _rerun_until_fits(run, capacity: int):
    while True:
        n = run(capacity)
        if n <= capacity:
            return n
        capacity = n


# --------------------------------------------------------------------------
# One-dimensional diffusions


def _compile_1d(spec: DiffusionSpec, integrands):
    coef = K.compile_model([spec.sigma, spec.drift], spec.domain)
    integ = K.compile_model(list(integrands), spec.domain)
    return coef, integ


def simulate_1d(
    spec: DiffusionSpec,
    x0: float,
    cfg: SimConfig,
    integrands: Sequence = (),
    trajectory_index: int = 0,
) -> Trajectory:
    """Euler path of ``spec`` from ``x0`` with running path integrals.

    Integrands are evaluated at the state clamped to the absorption
    thresholds. A path that is still alive at ``cfg.t_budget`` comes back
    with ``absorbed_at=None``.
    """
    integrands = [_as_expr(f) for f in integrands]
    _check_start(x0, spec, cfg.absorption_eps)
    a, b = spec.domain
    coef, integ = _compile_1d(spec, integrands)
    nk = len(integrands)
    info = np.zeros(4)
    ints = np.zeros(max(nk, 1))
    bufs = {}

    def run(cap):
        bufs["t"] = np.zeros(cap)
        bufs["y"] = np.zeros(cap)
        bufs["i"] = np.zeros((cap, max(nk, 1)))
        return K.path_1d(
            coef, integ, nk, float(x0), a, b, cfg.dt, cfg.absorption_eps, cfg.t_budget,
            cfg.step_floor, cfg.reflect_level, cfg.bridge, np.uint64(cfg.seed),
            np.uint64(trajectory_index), info, ints, bufs["t"], bufs["y"], bufs["i"], True,
        )

    n = _rerun_until_fits(run, 4096)
    code = int(info[0])
    absorbed = None
    if code == K.LEFT:
        absorbed = (a, float(info[1]))
    elif code == K.RIGHT:
        absorbed = (b, float(info[1]))
    names = [f.source_text or f.pretty() for f in integrands]
    return Trajectory(
        times=bufs["t"][:n].copy(),
        states=bufs["y"][:n].copy(),
        absorbed_at=absorbed,
        integrals={name: bufs["i"][:n, k].copy() for k, name in enumerate(names)},
        columns=("y",),
        steps=int(info[2]),
    )


@dataclass
class Ensemble1D:
    """Per-path outcome of a one-dimensional ensemble.

    ``codes``: 0 still alive at the budget, 1 absorbed at the left end,
    2 absorbed at the right end.
    """

    codes: np.ndarray
    times: np.ndarray
    integrals: np.ndarray
    steps: np.ndarray
    names: tuple

    @property
    def n_paths(self) -> int:
        return int(self.codes.size)

    def fraction(self, code: int) -> float:
        return float(np.mean(self.codes == code))


def simulate_1d_ensemble(
    spec: DiffusionSpec,
    x0: float,
    cfg: SimConfig,
    integrands: Sequence = (),
    n_paths: int = 1000,
    jobs: int = 1,
) -> Ensemble1D:
    integrands = [_as_expr(f) for f in integrands]
    _check_start(x0, spec, cfg.absorption_eps)
    a, b = spec.domain
    coef, integ = _compile_1d(spec, integrands)
    nk = len(integrands)
    codes = np.zeros(n_paths, dtype=np.int64)
    times = np.zeros(n_paths)
    ints = np.zeros((n_paths, max(nk, 1)))
    steps = np.zeros(n_paths, dtype=np.int64)

    def work(start, count):
        K.batch_1d(
            coef, integ, nk, float(x0), a, b, cfg.dt, cfg.absorption_eps, cfg.t_budget,
            cfg.step_floor, cfg.reflect_level, cfg.bridge, np.uint64(cfg.seed),
            start, count, codes, times, ints, steps,
        )

    _run_parallel(work, n_paths, jobs)
    names = tuple(f.source_text or f.pretty() for f in integrands)
    return Ensemble1D(codes, times, ints[:, :nk], steps, names)


@dataclass
class DepthLadder:
    """Running integrals recorded when paths first get within ``2**-depth`` of a boundary.

    ``integrals[j, k, i]`` is integrand ``i`` on path ``j`` at the ``k``-th
    depth, ``sides[j, k]`` the boundary approached (1 left, 2 right, 0 not
    reached).
    """

    depths: tuple
    codes: np.ndarray
    times: np.ndarray
    sides: np.ndarray
    integrals: np.ndarray
    names: tuple

    def grows(self, i: int = 0, fraction: float = 0.9) -> np.ndarray:
        """Per path: each budget doubling adds at least ``fraction`` of the previous increment."""
        v = self.integrals[:, :, i]
        inc = np.diff(v, axis=1)
        ok = np.all(inc[:, 1:] >= fraction * inc[:, :-1], axis=1) & np.all(inc > 0, axis=1)
        return ok & np.all(np.isfinite(v), axis=1)

    def stabilizes(self, i: int = 0, rel: float = 0.05) -> np.ndarray:
        """Per path: the last budget doubling changes the integral by less than ``rel``."""
        v = self.integrals[:, :, i]
        with np.errstate(invalid="ignore", divide="ignore"):
            change = np.abs(v[:, -1] - v[:, -2]) / np.abs(v[:, -2])
        return np.isfinite(change) & (change < rel)


def log_clock_ensemble(
    spec: DiffusionSpec,
    x0: float,
    integrands: Sequence,
    depths_octaves: Sequence[float] = (64, 128, 256),
    n_paths: int = 1000,
    seed: int = DEFAULT_SEED,
    clock_step: float = 1e-2,
    clock_budget: float = 1e7,
    jobs: int = 1,
) -> DepthLadder:
    """Paths run in logarithmic distance to the boundaries, recording budget ladders.

    The budget is the depth of approach to a boundary, measured in octaves:
    the running integrals are read off the first time a path gets within
    ``2**-d`` of a boundary (relative to the domain width, or to one unit on
    a half-line) for each ``d`` in ``depths_octaves``.
    """
    integrands = [_as_expr(f) for f in integrands]
    a, b = spec.domain
    if not a < x0 < b:
        raise ValueError("x0 must lie inside the domain")
    coef, integ = _compile_1d(spec, integrands)
    nk = len(integrands)
    depths = np.asarray(depths_octaves, dtype=float) * math.log(2.0)
    if np.any(np.diff(depths) <= 0) or depths[0] <= 0:
        raise ValueError("depths must be positive and increasing")
    nl = depths.size
    codes = np.zeros(n_paths, dtype=np.int64)
    times = np.zeros(n_paths)
    sides = np.zeros(n_paths * nl, dtype=np.int64)
    ints = np.zeros((n_paths * nl, max(nk, 1)))

    def work(start, count):
        K.batch_log_clock(
            coef, integ, nk, float(x0), a, b, spec.bounded, clock_step, clock_budget, depths,
            np.uint64(seed), start, count, codes, times, sides, ints,
        )

    _run_parallel(work, n_paths, jobs)
    return DepthLadder(
        tuple(float(d) for d in depths_octaves),
        codes,
        times,
        sides.reshape(n_paths, nl),
        ints.reshape(n_paths, nl, -1)[:, :, :nk],
        tuple(f.source_text or f.pretty() for f in integrands),
    )


# --------------------------------------------------------------------------
# Coupled population size and allele frequency


def _coupled_setup(sigma_n, drift_n, f_timechange, cfg, n0, x0, scheme, extinction_eps):
    if scheme not in COUPLED_SCHEMES:
        raise ValueError(f"unknown coupled scheme {scheme!r}; expected one of {COUPLED_SCHEMES}")
    if not 0.0 <= x0 <= 1.0:
        raise ValueError("x0 must lie in [0, 1]")
    if extinction_eps is None:
        extinction_eps = LOG_EXTINCTION_EPS if scheme == "time-change" else cfg.absorption_eps
    if not n0 > extinction_eps:
        raise ValueError("n0 must exceed the extinction threshold")
    model = K.compile_model([_as_expr(sigma_n), _as_expr(drift_n), _as_expr(f_timechange)])
    return model, COUPLED_SCHEMES.index(scheme), float(extinction_eps)


def simulate_coupled(
    sigma_n,
    drift_n,
    f_timechange,
    cfg: SimConfig,
    n0: float = 1.0,
    x0: float = 0.5,
    selection: float = 0.0,
    scheme: str = "time-change",
    extinction_eps: Optional[float] = None,
    trajectory_index: int = 0,
) -> Trajectory:
    """One path of ``dN = sigma_N(N) dB + (drift_N(N) + s N (1-X)) dt`` and
    ``dX = sqrt(X(1-X)/f(N)) dW - s X(1-X) dt``, with independent ``B`` and ``W``.

    ``selection`` is ``s``; zero gives the neutral system. The path stops
    at the first of fixation of ``X`` and extinction of ``N``; after that
    the state is frozen. ``events['outcome']`` is ``'fixation-first'``,
    ``'extinction-first'`` or ``'undecided'``.
    """
    model, code_scheme, eps_n = _coupled_setup(
        sigma_n, drift_n, f_timechange, cfg, n0, x0, scheme, extinction_eps)
    info = np.zeros(6)
    bufs = {}

    def run(cap):
        bufs["t"] = np.zeros(cap)
        bufs["n"] = np.zeros(cap)
        bufs["x"] = np.zeros(cap)
        return K.path_coupled(
            model, float(selection), float(n0), float(x0), code_scheme, cfg.dt, eps_n,
            cfg.absorption_eps, cfg.t_budget, cfg.min_step_fraction, np.uint64(cfg.seed),
            np.uint64(trajectory_index), info, bufs["t"], bufs["n"], bufs["x"], True,
        )

    n = _rerun_until_fits(run, 8192)
    code = int(info[0])
    outcome = _COUPLED_OUTCOMES[code]
    states = np.column_stack([bufs["n"][:n], bufs["x"][:n]])
    absorbed = None
    if code == K.EXTINCTION_FIRST:
        states[-1, 0] = 0.0
        absorbed = ("N=0", float(info[1]))
    elif code == K.FIXATION_FIRST:
        states[-1, 1] = 0.0 if states[-1, 1] < 0.5 else 1.0
        absorbed = ("X=0" if states[-1, 1] == 0.0 else "X=1", float(info[1]))
    return Trajectory(
        times=bufs["t"][:n].copy(),
        states=states,
        absorbed_at=absorbed,
        columns=("N", "X"),
        steps=int(info[4]),
        events={"outcome": outcome, "clock": float(info[5])},
    )


_COUPLED_OUTCOMES = {0: "undecided", 1: "extinction-first", 2: "fixation-first"}


@dataclass
class CoupledEnsemble:
    """``codes``: 0 undecided at the budget, 1 extinction first, 2 fixation first."""

    codes: np.ndarray
    times: np.ndarray
    n_final: np.ndarray
    x_final: np.ndarray

    def counts(self) -> dict:
        c = np.bincount(self.codes, minlength=3)
        return {
            "undecided": int(c[0]),
            "extinction-first": int(c[1]),
            "fixation-first": int(c[2]),
        }


def coupled_ensemble(
    sigma_n,
    drift_n,
    f_timechange,
    cfg: SimConfig,
    n0: float = 1.0,
    x0: float = 0.5,
    n_paths: int = 1000,
    selection: float = 0.0,
    scheme: str = "time-change",
    extinction_eps: Optional[float] = None,
    jobs: int = 1,
) -> CoupledEnsemble:
    model, code_scheme, eps_n = _coupled_setup(
        sigma_n, drift_n, f_timechange, cfg, n0, x0, scheme, extinction_eps)
    codes = np.zeros(n_paths, dtype=np.int64)
    times = np.zeros(n_paths)
    nf = np.zeros(n_paths)
    xf = np.zeros(n_paths)

    def work(start, count):
        K.batch_coupled(
            model, float(selection), float(n0), float(x0), code_scheme, cfg.dt, eps_n,
            cfg.absorption_eps, cfg.t_budget, cfg.min_step_fraction, np.uint64(cfg.seed),
            start, count, codes, times, nf, xf,
        )

    _run_parallel(work, n_paths, jobs)
    return CoupledEnsemble(codes, times, nf, xf)


# --------------------------------------------------------------------------
# L-allele Wright-Fisher


def _check_simplex(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1 or x0.size < 2:
        raise ValueError("need at least two allele proportions")
    if np.any(x0 <= 0) or abs(x0.sum() - 1.0) > 1e-9:
        raise ValueError("x0 must be strictly inside the simplex")
    return x0 / x0.sum()


def simulate_multiallele(
    L: int,
    x0,
    cfg: SimConfig,
    record_stride: int = 1,
    trajectory_index: int = 0,
) -> Trajectory:
    """Neutral ``L``-allele Wright-Fisher path through nested frequency ratios.

    Ratio ``i`` is ``X^i / (1 - X^1 - ... - X^(i-1))``; it is a one-dimensional
    Wright-Fisher diffusion run at speed ``1 / (1 - X^1 - ... - X^(i-1))``
    with its own noise stream, and the proportions rebuilt from the ratios
    sum to one by construction.
    """
    x0 = _check_simplex(x0)
    if x0.size != L:
        raise ValueError(f"x0 has {x0.size} components, expected {L}")
    es = np.zeros(L, dtype=np.int64)
    et = np.zeros(L)
    info = np.zeros(4)
    bufs = {}

    def run(cap):
        bufs["t"] = np.zeros(cap)
        bufs["x"] = np.zeros((cap, L))
        return K.path_multiallele(
            x0, cfg.dt, cfg.absorption_eps, cfg.t_budget, cfg.min_step_fraction,
            np.uint64(cfg.seed), np.uint64(trajectory_index), es, et, info,
            bufs["t"], bufs["x"], int(record_stride), True,
        )

    n = _rerun_until_fits(run, 8192)
    if info[3] > 1e-9:
        raise SimulationError(f"simplex violated by {info[3]:.3g}")
    fixed = bool(info[0])
    absorbed = None
    if fixed:
        winner = int(np.argmax(es < 0))
        absorbed = (f"allele {winner + 1} fixed", float(info[1]))
    return Trajectory(
        times=bufs["t"][:n].copy(),
        states=bufs["x"][:n].copy(),
        absorbed_at=absorbed,
        columns=tuple(f"X{i + 1}" for i in range(L)),
        steps=int(info[2]),
        events={
            "extinction_steps": {i: int(s) for i, s in enumerate(es) if s >= 0},
            "extinction_times": {i: float(t) for i, t in enumerate(et) if es[i] >= 0},
            "simplex_defect": float(info[3]),
        },
    )


@dataclass
class MultialleleEnsemble:
    """``ext_steps[j, i]`` is the step at which allele ``i`` died on path ``j`` (-1 if never)."""

    ext_steps: np.ndarray
    ext_times: np.ndarray
    fixed: np.ndarray
    times: np.ndarray
    steps: np.ndarray
    simplex_defect: np.ndarray

    def ordered_extinctions(self) -> np.ndarray:
        """Per path, the sorted extinction step indices (-1 padded at the end)."""
        s = np.where(self.ext_steps >= 0, self.ext_steps, np.iinfo(np.int64).max)
        s = np.sort(s, axis=1)
        return np.where(s == np.iinfo(np.int64).max, -1, s)

    def n_extinctions(self) -> np.ndarray:
        return np.count_nonzero(self.ext_steps >= 0, axis=1)

    def simultaneous(self) -> np.ndarray:
        """Per path: whether two alleles died in the same step."""
        s = self.ordered_extinctions()
        same = (np.diff(s, axis=1) == 0) & (s[:, 1:] >= 0)
        return np.any(same, axis=1)

    def min_gaps(self) -> np.ndarray:
        """Per path, the smallest number of steps between consecutive extinctions."""
        s = self.ordered_extinctions().astype(float)
        s[s < 0] = np.nan
        gaps = np.diff(s, axis=1)
        with np.errstate(all="ignore"):
            out = np.nanmin(np.where(np.isnan(gaps), np.inf, gaps), axis=1)
        return out


def multiallele_ensemble(L: int, x0, cfg: SimConfig, n_paths: int = 1000,
                         jobs: int = 1) -> MultialleleEnsemble:
    x0 = _check_simplex(x0)
    if x0.size != L:
        raise ValueError(f"x0 has {x0.size} components, expected {L}")
    es = np.zeros((n_paths, L), dtype=np.int64)
    et = np.zeros((n_paths, L))
    fixed = np.zeros(n_paths)
    times = np.zeros(n_paths)
    steps = np.zeros(n_paths, dtype=np.int64)
    worst = np.zeros(n_paths)

    def work(start, count):
        K.batch_multiallele(
            x0, cfg.dt, cfg.absorption_eps, cfg.t_budget, cfg.min_step_fraction,
            np.uint64(cfg.seed), start, count, es, et, fixed, times, steps, worst,
        )

    _run_parallel(work, n_paths, jobs)
    if worst.max(initial=0.0) > 1e-9:
        raise SimulationError(f"simplex violated by {worst.max():.3g}")
    return MultialleleEnsemble(es, et, fixed.astype(bool), times, steps, worst)


# --------------------------------------------------------------------------
# Random time change


@dataclass(frozen=True)
class TimeChange:
    """Pairs ``(t, tau(t))`` with ``t = A(u) = int_0^u ds / f(N_s)``.

    ``u`` holds the original times and ``t`` the new clock; both are
    strictly increasing, and intermediate values are linearly interpolated.
    """

    u: np.ndarray
    t: np.ndarray

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    def tau(self, t):
        return np.interp(t, self.t, self.u)

    def A(self, u):
        return np.interp(u, self.u, self.t)


def build_time_change(times, values, f) -> TimeChange:
    """Invert ``A(u) = int_0^u 1/f(values)`` along a recorded path.

    A trailing point where ``f`` vanishes (the absorbed state) is dropped.
    Raises ``ValueError`` when ``f`` is not positive and finite along the
    rest of the path or when ``A`` fails to increase strictly.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if callable(f) and not isinstance(f, CoefficientExpr):
        fv = np.asarray(f(values), dtype=float)
    else:
        fv = np.asarray(eval_expr(_as_expr(f), values, strict=False), dtype=float)
    fv = np.broadcast_to(fv, values.shape)
    if fv.size > 1 and not fv[-1] > 0:
        times, fv = times[:-1], fv[:-1]
    if not np.all(np.isfinite(fv) & (fv > 0)):
        k = int(np.argmin(np.isfinite(fv) & (fv > 0)))
        raise ValueError(f"time-change integrand not positive at t={times[k]!r}")
    inv = 1.0 / fv
    a = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (inv[1:] + inv[:-1]))])
    if np.any(np.diff(a) <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("time change is not strictly increasing")
    return TimeChange(times - times[0], a)


@dataclass(frozen=True)
class QVReport:
    """Observed over predicted quadratic covariation, entry by entry."""

    ratio: np.ndarray
    n_increments: int

    def within(self, rel: float) -> bool:
        r = self.ratio[np.isfinite(self.ratio)]
        return bool(r.size) and bool(np.all(np.abs(r - 1.0) <= rel))


def _qv_ratio(paths, clocks) -> QVReport:
    """Pooled ``sum dY^i dY^j / sum dclock * Y^i (delta_ij - Y^j)`` over increments."""
    obs = pred = None
    count = 0
    for y, c in zip(paths, clocks):
        dy = np.diff(y, axis=0)
        dc = np.diff(c)
        start = y[:-1]
        # drop increments that end on a boundary (clipped, not diffusive)
        keep = np.all((y[1:] > 0) & (y[1:] < 1), axis=1) & np.all((start > 0) & (start < 1), axis=1)
        dy, dc, start = dy[keep], dc[keep], start[keep]
        o = np.einsum("ki,kj->ij", dy, dy)
        model = np.einsum("k,ki,ij->ij", dc, start, np.eye(start.shape[1])) - np.einsum(
            "k,ki,kj->ij", dc, start, start)
        obs = o if obs is None else obs + o
        pred = model if pred is None else pred + model
        count += int(keep.sum())
    with np.errstate(all="ignore"):
        ratio = np.where(np.abs(pred) > 0, obs / pred, np.nan)
    return QVReport(ratio, count)


def quadratic_variation_check(trajectories) -> QVReport:
    """Compare increments of L-allele paths with ``d<X^i, X^j> = X^i (delta_ij - X^j) dt``."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    return _qv_ratio([tr.states for tr in trajectories], [tr.times for tr in trajectories])


@dataclass(frozen=True)
class NestedReductionReport:
    """Time-changed ratios ``Y^i = X^i / (1 - X^L)`` and their covariation check."""

    qv: QVReport
    time_changes: tuple
    ratios: tuple

    def within(self, rel: float = 0.15) -> bool:
        return self.qv.within(rel)


def nested_reduction_check(trajectories) -> NestedReductionReport:
    """Check that removing the last allele leaves an (L-1)-allele Wright-Fisher path.

    Each path is restricted to the period before the last allele dies,
    time-changed with ``f = 1 - X^L`` and renormalised; on the new clock
    the ratios should have covariation ``Y^i (delta_ij - Y^j)``.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    ys, clocks, tcs = [], [], []
    for tr in trajectories:
        x = np.asarray(tr.states)
        if x.ndim != 2 or x.shape[1] < 3:
            raise ValueError("need an L-allele path with L >= 3")
        last = x[:, -1]
        alive = (last > 0) & (last < 1)
        if not alive.all():
            cut = int(np.argmin(alive))
            x, times = x[:cut], tr.times[:cut]
        else:
            times = tr.times
        if x.shape[0] < 2:
            continue
        tc = build_time_change(times, x[:, -1], lambda v: 1.0 - v)
        y = x[:, :-1] / (1.0 - x[:, -1:])
        ys.append(y)
        clocks.append(tc.t)
        tcs.append(tc)
    return NestedReductionReport(_qv_ratio(ys, clocks), tuple(tcs), tuple(ys))
