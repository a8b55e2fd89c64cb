"""Vectorised adaptive Gauss-Kronrod quadrature and cutoff-ladder assessment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "LadderAssessment",
    "QuadratureError",
    "assess_ladder",
    "integrate_intervals",
    "integrate",
]

# Kronrod 15-point abscissae (positive half, descending) and weights,
# with the embedded 7-point Gauss weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
K_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
G_WEIGHTS = np.zeros(15)
# Gauss points are the odd-indexed Kronrod points (1, 3, 5, 7 from the end).
for _i, _w in zip((1, 3, 5), _WG[:3]):
    G_WEIGHTS[_i] = _w
    G_WEIGHTS[14 - _i] = _w
G_WEIGHTS[7] = _WG[3]

_EPS = np.finfo(float).eps
GIVE_UP_RTOL = 1e-7


class QuadratureError(ArithmeticError):
    """Adaptive integration failed on a subinterval."""

    def __init__(self, lo: float, hi: float, reason: str):
        self.lo = lo
        self.hi = hi
        self.reason = reason
        super().__init__(f"quadrature failed on [{lo!r}, {hi!r}]: {reason}")


@dataclass
class QuadResult:
    value: np.ndarray
    error: np.ndarray
    failed: np.ndarray
    fail_reason: list = field(default_factory=list)


def integrate_intervals(
    fn: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    rtol: float = 1e-11,
    atol: float = 0.0,
    log: bool = False,
    max_depth: int = 48,
    strict: bool = True,
    max_leaves: int = 20_000,
) -> QuadResult:
    """Integrate ``fn`` over many independent intervals at once.

    ``fn`` maps an array of abscissae to values of the same shape. With
    ``log=True`` it must return the logarithm of a non-negative integrand
    (``-inf`` for zeros) and the returned values are logarithms as well,
    which keeps integrands such as ``exp(400 y)`` in range. Errors are
    absolute in linear mode and relative in log mode.

    Intervals are bisected independently until the Gauss/Kronrod
    discrepancy meets the tolerance. An interval that produces non-finite
    values or exceeds ``max_depth`` bisections fails; with ``strict`` a
    :class:`QuadratureError` names the first offending subinterval.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    width = np.abs(hi - lo)
    if log:
        value = np.full(n, -np.inf)
    else:
        value = np.zeros(n)
    error = np.zeros(n)
    failed = np.zeros(n, dtype=bool)
    reasons: list = []

    a, b = lo.copy(), hi.copy()
    owner = np.arange(n)
    depth = 0
    while a.size:
        center = 0.5 * (a + b)
        half = 0.5 * (b - a)
        x = center[:, None] + half[:, None] * NODES[None, :]
        with np.errstate(all="ignore"):
            vals = np.asarray(fn(x.ravel()), dtype=float).reshape(x.shape)
        if log:
            finite_or_zero = np.all(np.isfinite(vals) | (vals == -np.inf), axis=1)
            shift = np.max(vals, axis=1)
            shift = np.where(np.isfinite(shift), shift, 0.0)
            with np.errstate(all="ignore"):
                scaled = np.exp(vals - shift[:, None])
            kr = np.abs(half) * (scaled @ K_WEIGHTS)
            ga = np.abs(half) * (scaled @ G_WEIGHTS)
            with np.errstate(all="ignore"):
                rel = np.where(kr > 0, np.abs(kr - ga) / kr, 0.0)
                leaf_val = np.where(kr > 0, shift + np.log(kr), -np.inf)
            ok = rel <= max(rtol, 50 * _EPS)
        else:
            finite_or_zero = np.all(np.isfinite(vals), axis=1)
            kr = half * (vals @ K_WEIGHTS)
            ga = half * (vals @ G_WEIGHTS)
            resabs = np.abs(half) * (np.abs(vals) @ K_WEIGHTS)
            err = np.abs(kr - ga)
            share = np.abs(half) * 2.0 / np.where(width[owner] > 0, width[owner], 1.0)
            tol = np.maximum(np.maximum(rtol * resabs, atol * share), 50 * _EPS * resabs)
            ok = err <= tol
            leaf_val = kr
            rel = err

        bad = ~finite_or_zero
        # Leaves whose error is negligible against the whole interval are
        # accepted too; this lets integrable endpoint singularities settle.
        if log:
            est = value.copy()
            np.logaddexp.at(est, owner[finite_or_zero], leaf_val[finite_or_zero])
            with np.errstate(all="ignore"):
                weight = np.exp(leaf_val - est[owner])
            ok |= np.nan_to_num(weight * rel) <= 1e-3 * rtol
        else:
            est = np.abs(value)
            np.add.at(est, owner[finite_or_zero], resabs[finite_or_zero])
            ok |= err <= 1e-3 * rtol * est[owner]
        tiny = np.abs(half) <= 4 * _EPS * np.maximum(np.abs(center), 1e-300)
        too_deep = depth >= max_depth
        stuck = ~ok & (tiny | too_deep) & ~bad
        # At the resolution limit a leaf is still accepted when its error is
        # small against the whole interval (integrable endpoint singularity).
        if log:
            settled = np.nan_to_num(weight * rel) <= GIVE_UP_RTOL
        else:
            settled = err <= GIVE_UP_RTOL * est[owner]
        give_up = stuck & ~settled
        accept = (ok & ~bad) | stuck

        if bad.any() or give_up.any():
            for mask, why in ((bad, "non-finite integrand"), (give_up, "no convergence")):
                idx = np.flatnonzero(mask)
                if idx.size:
                    owners = owner[idx]
                    if not failed[owners].all():
                        k = idx[0]
                        reasons.append((float(a[k]), float(b[k]), why))
                    failed[owners] = True
            if strict and reasons:
                lo_f, hi_f, why = reasons[0]
                raise QuadratureError(lo_f, hi_f, why)

        acc = accept & ~bad
        if acc.any():
            if log:
                np.logaddexp.at(value, owner[acc], leaf_val[acc])
                # relative errors of positive pieces combine to at most the max
                np.maximum.at(error, owner[acc], rel[acc])
            else:
                np.add.at(value, owner[acc], leaf_val[acc])
                np.add.at(error, owner[acc], rel[acc])

        refine = ~accept & ~bad & ~failed[owner]
        if not refine.any():
            break
        if 2 * np.count_nonzero(refine) > max_leaves:
            # noisy integrand: stop the leaf count from doubling forever
            idx = np.flatnonzero(refine)
            owners = np.unique(owner[idx])
            k = idx[0]
            reasons.append((float(a[k]), float(b[k]), "too many subdivisions"))
            failed[owners] = True
            if strict:
                raise QuadratureError(float(a[k]), float(b[k]), "too many subdivisions")
            break
        ra, rb, ro, rc = a[refine], b[refine], owner[refine], center[refine]
        a = np.concatenate([ra, rc])
        b = np.concatenate([rc, rb])
        owner = np.concatenate([ro, ro])
        depth += 1

    if failed.any():
        value = value.copy()
        value[failed] = np.nan
    return QuadResult(value, error, failed, reasons)


def integrate(fn, lo: float, hi: float, rtol: float = 1e-11, atol: float = 0.0,
              log: bool = False) -> float:
    """Scalar convenience wrapper around :func:`integrate_intervals`."""
    res = integrate_intervals(fn, [lo], [hi], rtol=rtol, atol=atol, log=log)
    return float(res.value[0])


# --------------------------------------------------------------------------
# Cutoff ladders


@dataclass(frozen=True)
class LadderAssessment:
    """Classification of an improper integral from its octave increments.

    ``outcome`` is ``"finite"``, ``"infinite"`` or ``"inconclusive"``.
    ``partial_sums[k]`` is the integral truncated at the k-th cutoff and
    ``value`` the extrapolated limit (``inf`` when divergent, ``nan`` when
    undecided). ``slope`` is the fitted growth rate of log-increments per
    octave and ``residual`` the largest deviation of that fit.
    """

    outcome: str
    value: float
    rule: str
    slope: float
    residual: float
    cutoffs: tuple
    partial_sums: tuple


CAUCHY_TOL = 1e-8
CAUCHY_COUNT = 5
FIT_WINDOW = 25
DECAY_SLOPE = -0.02
FLAT_SLOPE = -0.002
FLAT_FRACTION = 0.9
FIT_RESIDUAL = math.log(1.1)


def assess_ladder(log_increments, base: float = 0.0, cutoffs=None) -> LadderAssessment:
    """Decide convergence of ``base + sum(increments)``.

    ``log_increments[k]`` is the log of the (non-negative) integral over the
    k-th octave, ordered towards the boundary.

    * finite: the last increments are negligible (Cauchy), or the
      log-increments decay linearly in k with consistent slope, in which
      case the geometric tail is added;
    * infinite: increments in the fit window never drop below a fixed
      fraction of their first value and show no decay;
    * otherwise inconclusive (e.g. logarithmic factors).
    """
    logd = np.asarray(log_increments, dtype=float)
    with np.errstate(over="ignore"):
        d = np.exp(logd)
    sums = base + np.cumsum(d)
    if cutoffs is None:
        cutoffs = tuple(range(len(d)))
    total = float(sums[-1])
    finite_sums = tuple(float(v) for v in sums)

    def result(outcome, value, rule, slope=float("nan"), resid=float("nan")):
        return LadderAssessment(outcome, value, rule, slope, resid, tuple(cutoffs), finite_sums)

    if not np.all(np.isfinite(sums)) or not math.isfinite(total):
        if np.any(np.isnan(logd)):
            return result("inconclusive", math.nan, "undefined increments")
        return result("infinite", math.inf, "overflow")

    tail = d[-CAUCHY_COUNT:]
    if np.all(tail < CAUCHY_TOL * (1.0 + abs(total))):
        return result("finite", total, "cauchy")

    window = logd[-FIT_WINDOW:]
    k = np.arange(window.size, dtype=float)
    if not np.all(np.isfinite(window)):
        return result("inconclusive", math.nan, "vanishing increments")
    slope, icpt = np.polyfit(k, window, 1)
    resid = float(np.max(np.abs(window - (slope * k + icpt))))
    half = window.size // 2
    s1 = np.polyfit(k[: half + 1], window[: half + 1], 1)[0]
    s2 = np.polyfit(k[half:], window[half:], 1)[0]
    consistent = abs(s1 - s2) <= 0.002 + 0.02 * abs(slope) and resid < FIT_RESIDUAL

    if consistent and slope <= DECAY_SLOPE:
        rho = math.exp(slope)
        extra = float(d[-1]) * rho / (1.0 - rho)
        return result("finite", total + extra, "geometric-tail", float(slope), resid)
    first = float(np.exp(window[0]))
    if slope >= FLAT_SLOPE and np.all(np.exp(window) >= FLAT_FRACTION * first):
        return result("infinite", math.inf, "non-decaying-increments", float(slope), resid)
    return result("inconclusive", math.nan, "undetermined", float(slope), resid)
