"""Almost-sure finiteness of perpetual integrals.

Every decision follows the same shape: an improper integral of
``f * |s - s(E)| * m`` at an absorbing endpoint ``E`` is either settled
from leading power-law exponents, or from a cutoff ladder of octave
integrals. Divergence means the path integral up to the hitting time of
``E`` is infinite almost surely; convergence means it is finite almost
surely.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coefficients import (
    BinOp,
    CoefficientExpr,
    Const,
    asymptotic_series,
    eval_near,
    exponent_at,
    parse_expr,
)
from .quadrature import LadderAssessment
from .scale_speed import (
    LADDER_LAST,
    NODES_PER_OCTAVE,
    DiffusionSpec,
    ScaleSpeed,
    build_scale_speed,
    classify_boundaries,
)

__all__ = [
    "CriterionInapplicable",
    "MomentBound",
    "NovikovConditionError",
    "Outcome",
    "Verdict",
    "classify_fixation_before_extinction",
    "classify_perpetual_two_sided",
    "classify_perpetual_zero",
    "girsanov_reduce",
    "moment_bound",
]


class Outcome(str, enum.Enum):
    FINITE = "FiniteAS"
    INFINITE = "InfiniteAS"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self) -> str:
        return self.value


class CriterionInapplicable(ValueError):
    """The process is not absorbed at the endpoint almost surely."""


class NovikovConditionError(ValueError):
    """``|q / sigma|`` could not be bounded on a compact ``(0, k)``."""


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    integral: str
    value: float
    rate: Optional[float]
    method: str
    ladder: Optional[LadderAssessment] = field(default=None, repr=False, compare=False)
    notes: tuple = ()

    @property
    def decided(self) -> bool:
        return self.outcome is not Outcome.INCONCLUSIVE

    def summary(self) -> str:
        lines = [
            f"verdict: {self.outcome.value}",
            f"decisive integral: {self.integral}",
            f"value: {self.value!r}",
            f"method: {self.method}",
        ]
        if self.rate is not None:
            lines.append(f"integrand exponent / ladder slope: {self.rate!r}")
        if self.ladder is not None:
            lines.append(f"ladder: {self.ladder.outcome} ({self.ladder.rule})")
            sums = ", ".join(f"{v:.10g}" for v in self.ladder.partial_sums)
            lines.append(f"ladder partial sums: {sums}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


@dataclass(frozen=True)
class MomentBound:
    order: int
    bound: float
    integral: float
    method: str = ""

    def next_order(self) -> "MomentBound":
        n = self.order + 1
        return MomentBound(n, _moment(n, self.integral), self.integral, self.method)


def _moment(n: int, integral: float) -> float:
    if math.isinf(integral):
        return math.inf
    try:
        return math.factorial(n) * integral ** n
    except OverflowError:
        return math.inf


# --------------------------------------------------------------------------
# helpers


def _check_nonnegative(ss: ScaleSpeed, f: CoefficientExpr):
    for side, chart in ss.charts.items():
        t = chart.nodes[: NODES_PER_OCTAVE * (LADDER_LAST + 2) + 1]
        vals = chart.evaluate(f, t)
        neg = np.isfinite(vals) & (vals < 0)
        if neg.any():
            y = float(chart.y_of(t[np.flatnonzero(neg)[0]]))
            raise ValueError(f"integrand must be non-negative; f({y!r}) < 0")


def _f_exponent(f: CoefficientExpr, ss: ScaleSpeed, side: str):
    """('zero', None) | ('power', exponent in distance) | None."""
    chart = ss.charts[side]
    direction = 1 if side == "left" else -1
    ser = asymptotic_series(f, chart.endpoint, direction)
    if ser is None:
        return None
    if ser.is_zero:
        return ("zero", None)
    e, c = ser.lead
    if c <= 0:
        return None
    return ("power", -e if chart.infinite else e)


def _symbolic_decision(ss: ScaleSpeed, f: CoefficientExpr, side: str):
    """(converges, integrand exponent) or None."""
    if not ss.symbolic:
        return None
    asym = ss.asymptotics[side]
    fe = _f_exponent(f, ss, side)
    if fe is None:
        return None
    if fe[0] == "zero":
        return True, None
    if asym.ratio_exp is None or asym.sigma2_exp is None:
        return None
    p = fe[1] + asym.ratio_exp - asym.sigma2_exp
    if ss.charts[side].infinite:
        return p < -1, p
    return p > -1, p


def _perpetual_ladder(ss: ScaleSpeed, f: CoefficientExpr, side: str, endpoint_side: str):
    chart = ss.charts[side]

    def log_integrand(t):
        fv = chart.evaluate(f, t)
        with np.errstate(all="ignore"):
            return (np.log(fv) + math.log(2.0) + ss.log_ratio_t(side, t, endpoint_side)
                    - ss.log_sigma2_t(side, t))

    return ss.ladder(side, log_integrand)


def _verdict(ss, f, side, endpoint_side, description, method, notes=()):
    ladder = _perpetual_ladder(ss, f, side, endpoint_side)
    sym = None if method == "numeric" else _symbolic_decision(ss, f, side)
    notes = list(notes)
    if sym is not None:
        converges, p = sym
        outcome = Outcome.FINITE if converges else Outcome.INFINITE
        used = "symbolic-exponent"
        rate = p
        if ladder.outcome != "inconclusive" and (ladder.outcome == "finite") != converges:
            notes.append(f"cutoff ladder disagrees ({ladder.outcome}, rule {ladder.rule})")
    else:
        used = "numeric-extrapolation"
        rate = None if math.isnan(ladder.slope) else ladder.slope
        outcome = {
            "finite": Outcome.FINITE,
            "infinite": Outcome.INFINITE,
        }.get(ladder.outcome, Outcome.INCONCLUSIVE)
    if outcome is Outcome.FINITE:
        value = ladder.value
    elif outcome is Outcome.INFINITE:
        value = math.inf
    else:
        value = math.nan
    return Verdict(outcome, description, value, rate, used, ladder, tuple(notes))


def _check_method(method: str):
    if method not in ("auto", "numeric"):
        raise ValueError(f"unknown method {method!r}; use 'auto' or 'numeric'")


# --------------------------------------------------------------------------
# criteria


def classify_perpetual_zero(spec: DiffusionSpec, f: CoefficientExpr, method: str = "auto",
                            ss: Optional[ScaleSpeed] = None) -> Verdict:
    """Is ``int_0^{T_a} f(Z_s) ds`` finite almost surely?

    ``spec`` lives on ``(a, +inf)`` and must be absorbed at ``a`` in finite
    time; otherwise :class:`CriterionInapplicable` is raised (or an
    Inconclusive verdict returned when absorption itself is undecided).
    The decisive integral is ``int_{a+} f (s - s(a)) m``. ``method='numeric'``
    skips the exponent analysis and relies on the cutoff ladder only.
    """
    _check_method(method)
    if spec.bounded:
        raise ValueError("classify_perpetual_zero expects a domain (a, +inf)")
    if ss is None:
        ss = build_scale_speed(spec, symbolic=method != "numeric")
    _check_nonnegative(ss, f)
    report = classify_boundaries(ss)
    desc = f"int_{{{spec.domain[0]:g}+}} f(y) (s(y) - s({spec.domain[0]:g})) m(dy), f = {f.source_text}"
    if report.absorbed_in_finite_time is False:
        raise CriterionInapplicable(
            "criterion inapplicable: the process is not absorbed at the left endpoint in finite time"
        )
    if report.absorbed_in_finite_time is None:
        return Verdict(Outcome.INCONCLUSIVE, desc, math.nan, None, "numeric-extrapolation",
                       None, ("absorption in finite time could not be decided",))
    return _verdict(ss, f, "left", "left", desc, method)


def classify_perpetual_two_sided(spec: DiffusionSpec, f: CoefficientExpr, boundary,
                                 method: str = "auto", ss: Optional[ScaleSpeed] = None) -> Verdict:
    """Same question on a bounded interval, on the event of hitting ``boundary`` first.

    ``boundary`` is ``"left"``/``"right"`` or the endpoint value.
    """
    _check_method(method)
    if not spec.bounded:
        raise ValueError("classify_perpetual_two_sided expects a bounded domain")
    a, b = spec.domain
    if boundary in ("left", a) and boundary != "right":
        side = "left"
    elif boundary in ("right", b):
        side = "right"
    else:
        raise ValueError(f"boundary must be one of {a!r}, {b!r}")
    if ss is None:
        ss = build_scale_speed(spec, symbolic=method != "numeric")
    _check_nonnegative(ss, f)
    report = classify_boundaries(ss)
    end = report.left if side == "left" else report.right
    e = end.boundary
    if side == "left":
        desc = f"int_{{{e:g}+}} (s(y) - s({e:g})) f(y) m(dy), f = {f.source_text}"
    else:
        desc = f"int^{{{e:g}-}} (s({e:g}) - s(y)) f(y) m(dy), f = {f.source_text}"
    if report.absorbed_in_finite_time is False or end.accessible is False:
        raise CriterionInapplicable(f"criterion inapplicable: endpoint {e!r} is not reached in finite time")
    if report.absorbed_in_finite_time is None or end.accessible is None:
        return Verdict(Outcome.INCONCLUSIVE, desc, math.nan, None, "numeric-extrapolation",
                       None, ("accessibility could not be decided",))
    return _verdict(ss, f, side, side, desc, method)


def moment_bound(spec: DiffusionSpec, f: CoefficientExpr, n: int,
                 ss: Optional[ScaleSpeed] = None) -> MomentBound:
    """``n! (int s f m)^n`` over the whole domain ``(a, +inf)`` with ``s(a) = 0``.

    Bounds ``E_x[(int_0^{T_a} f(Z_s) ds)^n]`` for every starting point.
    Returns ``inf`` when the integral diverges at either end.
    """
    if n < 1 or int(n) != n:
        raise ValueError("moment order must be a positive integer")
    if spec.bounded:
        raise ValueError("moment_bound expects a domain (a, +inf)")
    if ss is None:
        ss = build_scale_speed(spec)
    report = classify_boundaries(ss)
    if report.absorbed_in_finite_time is not True:
        raise CriterionInapplicable("moment bound requires absorption at the left endpoint in finite time")
    _check_nonnegative(ss, f)
    total = 0.0
    methods = []
    for side in ("left", "right"):
        ladder = _perpetual_ladder(ss, f, side, "left")
        sym = _symbolic_decision(ss, f, side)
        converges = sym[0] if sym is not None else (
            None if ladder.outcome == "inconclusive" else ladder.outcome == "finite")
        methods.append("symbolic-exponent" if sym is not None else "numeric-extrapolation")
        if converges is False:
            total = math.inf
            break
        if converges is None:
            total = math.nan
            break
        if math.isfinite(ladder.value):
            total += ladder.value
        else:
            # convergent by exponents but the ladder could not extrapolate
            total += ladder.partial_sums[-1] if ladder.partial_sums else math.nan
    if math.isnan(total):
        raise ArithmeticError("could not decide convergence of int s f m")
    return MomentBound(int(n), _moment(int(n), total), total, "/".join(methods))


def _reciprocal(f: CoefficientExpr) -> CoefficientExpr:
    return CoefficientExpr(BinOp("/", Const(1.0), f.root), f"1/({f.source_text})")


def classify_fixation_before_extinction(sigma_N: CoefficientExpr, f_timechange: CoefficientExpr,
                                        drift: Optional[CoefficientExpr] = None,
                                        method: str = "auto") -> Verdict:
    """Does the allele frequency fix before the population dies out?

    Without ``drift`` the population size is on natural scale and the
    criterion is ``int_{0+} y / (sigma_N^2 f)``; with a drift it becomes
    ``int_{0+} s / (s' sigma_N^2 f)``. Divergence (InfiniteAS) means
    fixation happens before extinction almost surely; convergence
    (FiniteAS) means extinction comes first with positive probability.
    """
    drift = drift if drift is not None else parse_expr("0")
    spec = DiffusionSpec(sigma_N, drift, (0.0, math.inf), 1.0)
    verdict = classify_perpetual_zero(spec, _reciprocal(f_timechange), method=method)
    meaning = {
        Outcome.INFINITE: "fixation occurs before extinction almost surely",
        Outcome.FINITE: "extinction precedes fixation with positive probability",
        Outcome.INCONCLUSIVE: "undecided",
    }[verdict.outcome]
    return Verdict(verdict.outcome, verdict.integral, verdict.value, verdict.rate, verdict.method,
                   verdict.ladder, verdict.notes + (meaning,))


def girsanov_reduce(spec: DiffusionSpec, f: CoefficientExpr, q: CoefficientExpr, *,
                    absorbed: bool, no_explosion: bool, signal_bound: float = 1.0,
                    k_ladder: Sequence[float] = tuple(2.0 ** j for j in range(0, 11)),
                    method: str = "auto") -> Verdict:
    """Verdict for the drift-perturbed process ``b + q * theta``.

    ``theta`` is an exogenous signal with ``|theta| <= signal_bound``. The
    caller asserts that the perturbed process is absorbed at the left
    endpoint (``absorbed``) and does not explode (``no_explosion``); these
    are path properties that cannot be read off the coefficients. The
    sufficient condition ``sup_{y<k} |q/sigma| < inf`` is checked on a grid
    for every ``k`` in ``k_ladder``; the verdict is then that of the
    unperturbed diffusion.
    """
    if not (absorbed and no_explosion):
        raise ValueError("the caller must assert absorption in finite time and non-explosion")
    if not math.isfinite(signal_bound) or signal_bound < 0:
        raise ValueError("signal bound must be finite and non-negative")
    ratio = CoefficientExpr(BinOp("/", q.root, spec.sigma.root),
                            f"({q.source_text})/({spec.sigma.source_text})")
    a = spec.domain[0]
    exp0 = exponent_at(ratio, a, 1)
    if exp0 is not None and exp0.exponent < 0:
        raise NovikovConditionError(
            f"Novikov-type condition not verifiable: |q/sigma| ~ d^{exp0.exponent:g} near {a:g}")
    for k in k_ladder:
        if not a < k < spec.domain[1]:
            continue
        depth = np.exp2(-np.arange(0, 64 * 8 + 1) / 8.0)
        grid = np.unique(np.concatenate([a + (k - a) * depth, np.linspace(a, k, 2001)[1:]]))
        vals = signal_bound * np.abs(eval_near(ratio, grid, left=(a, grid - a)))
        if not np.all(np.isfinite(vals)):
            y = float(grid[np.flatnonzero(~np.isfinite(vals))[0]])
            raise NovikovConditionError(f"Novikov-type condition not verifiable: q/sigma undefined at {y!r}")
        if exp0 is None:
            deep = vals[grid < a + (k - a) * 2.0 ** -32]
            shallow = vals[grid >= a + (k - a) * 2.0 ** -32]
            if deep.size and deep.max() > 2.0 * max(shallow.max(), 1e-300) + 1e-12:
                raise NovikovConditionError(
                    f"Novikov-type condition not verifiable: |q/sigma| grows towards {a:g} on (0, {k:g})")
    verdict = classify_perpetual_zero(spec, f, method=method)
    return Verdict(verdict.outcome, verdict.integral, verdict.value, verdict.rate, verdict.method,
                   verdict.ladder, verdict.notes + ("verdict of the unperturbed diffusion",))
