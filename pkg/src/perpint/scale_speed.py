"""Scale function, speed density and boundary accessibility.

For ``dZ = sigma(Z) dB + b(Z) dt`` on ``(a, b)`` with reference point ``c``::

    s'(y) = exp(-2 G(y)),   G(y) = int_c^y b/sigma^2,   m(y) = 2 / (s'(y) sigma(y)^2)

All quantities are tabulated once on a geometric node grid (eight nodes per
octave) running from a pivot point towards each endpoint. Values at other
points are obtained by quadrature from the nearest node, so evaluators are
exact to quadrature tolerance rather than interpolated. Everything touching
``s'`` is carried in log space.

Near a finite endpoint the grid is parametrised by the distance to that
endpoint, and expressions of the form ``1 - y`` are evaluated from that
distance directly, so integrands stay accurate at distances far below the
float spacing of ``y`` itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coefficients import (
    CoefficientExpr,
    Series,
    asymptotic_series,
    eval_near,
    parse_expr,
)
from .quadrature import (
    NODES,
    K_WEIGHTS,
    G_WEIGHTS,
    LadderAssessment,
    QuadratureError,
    assess_ladder,
    integrate_intervals,
)

__all__ = [
    "BoundaryReport",
    "DiffusionSpec",
    "EndpointAsymptotics",
    "EndpointReport",
    "ScaleSpeed",
    "build_scale_speed",
    "classify_boundaries",
    "endpoint_asymptotics",
    "green_expectation",
]

NODES_PER_OCTAVE = 8
LADDER_FIRST = 8
LADDER_LAST = 40
INTERIOR_OCTAVES = 8
_QUAD_RTOL = 1e-11
G_LIMIT = 5e3
_LADDER_RTOL = 1e-10


@dataclass(frozen=True)
class DiffusionSpec:
    """``dZ = sigma(Z) dB + drift(Z) dt`` on the open interval ``domain``.

    The left endpoint is finite; the right endpoint is finite or ``inf``.
    ``ref_point`` is the lower limit of the inner integral in ``s'``.
    """

    sigma: CoefficientExpr
    drift: CoefficientExpr
    domain: tuple = (0.0, math.inf)
    ref_point: float = 1.0

    def __post_init__(self):
        a, b = (float(v) for v in self.domain)
        if not math.isfinite(a):
            raise ValueError("left endpoint must be finite")
        if not (a < b) or b == -math.inf or math.isnan(b):
            raise ValueError(f"invalid domain {self.domain!r}")
        if not (a < self.ref_point < b):
            raise ValueError(f"reference point {self.ref_point!r} not inside {self.domain!r}")
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "ref_point", float(self.ref_point))

    @classmethod
    def from_strings(cls, sigma: str, drift: str, domain=(0.0, math.inf), ref_point=None):
        a, b = domain
        if ref_point is None:
            ref_point = a + 1.0 if math.isinf(b) else 0.5 * (a + b)
        return cls(parse_expr(sigma), parse_expr(drift), (a, b), ref_point)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.domain[1])

    def pivot(self) -> float:
        a, b = self.domain
        return a + 1.0 if math.isinf(b) else 0.5 * (a + b)


# --------------------------------------------------------------------------
# Charts: coordinates along which each half of the domain is tabulated


class _Chart:
    """Half of the domain between the pivot and one endpoint.

    The coordinate ``t`` is the distance to a finite endpoint, or ``y``
    itself towards ``+inf``; ``orient`` is ``dy/dt``.
    """

    def __init__(self, spec: DiffusionSpec, side: str):
        a, b = spec.domain
        pivot = spec.pivot()
        self.spec = spec
        self.side = side
        self.a, self.b = a, b
        self.infinite = side == "right" and math.isinf(b)
        if side == "left":
            self.endpoint = a
            self.orient = 1.0
            self.t_pivot = pivot - a
        elif self.infinite:
            self.endpoint = math.inf
            self.orient = 1.0
            self.t_pivot = pivot
        else:
            self.endpoint = b
            self.orient = -1.0
            self.t_pivot = b - pivot
        if self.infinite:
            octaves = 64
        elif self.endpoint == 0.0:
            octaves = 64
        else:
            floor = max(2.0 ** -64 * self.t_pivot, 2.0 ** -48 * abs(self.endpoint))
            octaves = int(math.floor(math.log2(self.t_pivot / floor)))
        self.n_panels = NODES_PER_OCTAVE * octaves
        j = np.arange(self.n_panels + 1, dtype=float)
        step = j / NODES_PER_OCTAVE
        self.nodes = self.t_pivot * (np.exp2(step) if self.infinite else np.exp2(-step))

    # coordinate maps -----------------------------------------------------
    def y_of(self, t):
        t = np.asarray(t, dtype=float)
        if self.side == "left":
            return self.a + t
        if self.infinite:
            return t
        return self.b - t

    def t_of(self, y):
        y = np.asarray(y, dtype=float)
        if self.side == "left":
            return y - self.a
        if self.infinite:
            return y
        return self.b - y

    def evaluate(self, expr: CoefficientExpr, t):
        t = np.asarray(t, dtype=float)
        y = self.y_of(t)
        if self.side == "left":
            right = None if math.isinf(self.b) else (self.b, self.b - y)
            return eval_near(expr, y, left=(self.a, t), right=right)
        if self.infinite:
            return eval_near(expr, y, left=(self.a, y - self.a))
        return eval_near(expr, y, left=(self.a, y - self.a), right=(self.b, t))

    def locate(self, t):
        """Panel index containing ``t`` (clipped to the tabulated range)."""
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            ratio = t / self.t_pivot if self.infinite else self.t_pivot / t
            j = np.floor(NODES_PER_OCTAVE * np.log2(ratio))
        j = np.nan_to_num(j, nan=0.0, posinf=self.n_panels - 1, neginf=0.0)
        return np.clip(j, 0, self.n_panels - 1).astype(np.int64)

    def octave(self, k: int):
        """Chart interval of the k-th octave away from the pivot."""
        if self.infinite:
            return self.t_pivot * 2.0 ** k, self.t_pivot * 2.0 ** (k + 1)
        return self.t_pivot * 2.0 ** -k, self.t_pivot * 2.0 ** -(k + 1)

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        pivot = self.spec.pivot()
        return y <= pivot if self.side == "left" else y > pivot


def _gk_fixed(fn, lo, hi):
    """One Gauss-Kronrod application per interval: (value, error estimate)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = center[..., None] + half[..., None] * NODES
    with np.errstate(all="ignore"):
        vals = np.asarray(fn(x.reshape(-1)), dtype=float).reshape(x.shape)
    kr = half * (vals @ K_WEIGHTS)
    ga = half * (vals @ G_WEIGHTS)
    scale = np.abs(half) * (np.abs(vals) @ K_WEIGHTS)
    return kr, np.abs(kr - ga), scale


def _gk_fixed_log(logfn, lo, hi):
    """Log-space variant of :func:`_gk_fixed` for positive integrands."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    center = 0.5 * (lo + hi)
    half = np.abs(0.5 * (hi - lo))
    x = center[..., None] + 0.5 * (hi - lo)[..., None] * NODES
    with np.errstate(all="ignore"):
        lv = np.asarray(logfn(x.reshape(-1)), dtype=float).reshape(x.shape)
        shift = np.max(lv, axis=-1)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        w = np.exp(lv - shift[..., None])
        kr = half * (w @ K_WEIGHTS)
        ga = half * (w @ G_WEIGHTS)
        rel = np.where(kr > 0, np.abs(kr - ga) / kr, 0.0)
        out = np.where(kr > 0, shift + np.log(kr), -np.inf)
    out = np.where(half == 0, -np.inf, out)
    rel = np.where(np.all(np.isfinite(lv) | (lv == -np.inf), axis=-1), rel, np.nan)
    return out, rel


# --------------------------------------------------------------------------
# Symbolic endpoint analysis


@dataclass(frozen=True)
class EndpointAsymptotics:
    """Leading-order behaviour of the scale quantities at one endpoint.

    ``sprime_kind`` is ``"power"`` (``s' ~ d^q``), ``"vanish"`` or
    ``"explode"`` (faster than any power). ``ratio_exp`` is the exponent of
    ``(s - s(E)) / s'`` at a finite endpoint, or of ``s / s'`` at ``+inf``.
    Distances ``d`` are ``|y - E|`` at finite endpoints and ``y`` at ``+inf``.
    Fields are None when the symbolic analysis could not decide them.
    """

    endpoint: float
    sprime_kind: Optional[str]
    q: Optional[float]
    s_finite: Optional[bool]
    ratio_exp: Optional[float]
    sigma2_exp: Optional[float]


def _leading(series: Optional[Series]):
    if series is None:
        return None
    if series.is_zero:
        return ("zero", 0.0, 0.0)
    e, c = series.lead
    return ("power", e, c)


def endpoint_asymptotics(spec: DiffusionSpec, side: str) -> EndpointAsymptotics:
    a, b = spec.domain
    infinite = side == "right" and math.isinf(b)
    endpoint = a if side == "left" else b
    direction = 1 if side == "left" else -1
    sig = asymptotic_series(spec.sigma, endpoint, direction)
    drift = asymptotic_series(spec.drift, endpoint, direction)
    sigma2_exp = None
    g_series = None
    if sig is not None and sig.terms and sig.lead[1] > 0:
        sig2 = sig * sig
        sigma2_exp = sig2.lead[0]
        inv = sig2.reciprocal()
        if drift is not None and inv is not None:
            g_series = drift * inv
            if not g_series.known:
                g_series = None
    if infinite and sigma2_exp is not None:
        sigma2_exp = -sigma2_exp
    lead = _leading(g_series)
    if lead is None:
        return EndpointAsymptotics(endpoint, None, None, None, None, sigma2_exp)
    kind, e, k = lead
    if infinite:
        e = -e  # exponent in y
    q: Optional[float] = None
    if kind == "zero":
        sk, q = "power", 0.0
    elif not infinite:
        if e > -1:
            sk, q = "power", 0.0
        elif e == -1:
            sk, q = "power", -2.0 * direction * k
        else:
            sk = "explode" if direction * k > 0 else "vanish"
    else:
        if e < -1:
            sk, q = "power", 0.0
        elif e == -1:
            sk, q = "power", -2.0 * k
        else:
            sk = "vanish" if k > 0 else "explode"

    if not infinite:
        if sk == "power":
            s_finite = q > -1
            ratio = 1.0 if s_finite else None
        elif sk == "vanish":
            s_finite, ratio = True, -e
        else:
            s_finite, ratio = False, None
    else:
        if sk == "power":
            s_finite = q < -1
            if q > -1:
                ratio = 1.0
            elif q < -1:
                ratio = -q
            else:
                ratio = None
        elif sk == "explode":
            s_finite, ratio = False, -e
        else:
            s_finite, ratio = True, None
    return EndpointAsymptotics(endpoint, sk, q, s_finite, ratio, sigma2_exp)


_NO_ASYMPTOTICS = EndpointAsymptotics(math.nan, None, None, None, None, None)


# --------------------------------------------------------------------------
# Tabulated scale/speed


class ScaleSpeed:
    """Read-only evaluators for ``G``, ``s'``, ``s`` and the speed density.

    Construct with :func:`build_scale_speed`. ``normalization`` is
    ``"left"`` when ``s(a)`` is finite (then ``s(a) = 0``) and ``"ref"``
    otherwise (then ``s(c) = 0``).
    """

    def __init__(self, spec: DiffusionSpec, symbolic: bool = True):
        self.spec = spec
        self.symbolic = symbolic
        self.charts = {"left": _Chart(spec, "left"), "right": _Chart(spec, "right")}
        self.asymptotics = {
            side: endpoint_asymptotics(spec, side) if symbolic else _NO_ASYMPTOTICS
            for side in ("left", "right")
        }
        self._check_sigma()
        self._G_nodes: dict = {}
        self._ls_panels: dict = {}
        for side, chart in self.charts.items():
            self._tabulate_G(side, chart)
        self._G_shift = 0.0
        c_side = "left" if spec.ref_point <= spec.pivot() else "right"
        chart_c = self.charts[c_side]
        self._G_shift = float(self._G_at(c_side, chart_c.t_of(np.array([spec.ref_point])))[0])
        for side in self.charts:
            self._G_nodes[side] = self._G_nodes[side] - self._G_shift
        for side, chart in self.charts.items():
            self._tabulate_sprime(side, chart)
        self.sprime_ladders: dict = {}
        self.s_finite: dict = {}
        self._logcum_bnd: dict = {}
        self._logcum_piv: dict = {}
        for side, chart in self.charts.items():
            self._decide_s_finite(side, chart)
            self._cumulate(side, chart)
        self.normalization = "left" if self.s_finite["left"] else "ref"
        if self.normalization == "ref":
            self._ref_offset = float(self._log_s_from_pivot_signed(np.array([spec.ref_point]))[0])

    # ------------------------------------------------------------------
    def _check_sigma(self):
        for side, chart in self.charts.items():
            core = chart.nodes[: NODES_PER_OCTAVE * (LADDER_LAST + 2) + 1]
            vals = chart.evaluate(self.spec.sigma, core)
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                bad = int(np.flatnonzero(~(np.isfinite(vals) & (vals > 0)))[0])
                y = float(chart.y_of(core[bad]))
                raise ValueError(f"sigma must be positive inside the domain; sigma({y!r}) = {vals[bad]!r}")

    def _g(self, chart: _Chart, t):
        s = chart.evaluate(self.spec.sigma, t)
        b = chart.evaluate(self.spec.drift, t)
        with np.errstate(all="ignore"):
            return b / (s * s)

    def _truncate(self, side: str, chart: _Chart, failed_panel: int, what: str):
        if failed_panel < NODES_PER_OCTAVE * INTERIOR_OCTAVES:
            lo, hi = chart.nodes[failed_panel], chart.nodes[failed_panel + 1]
            y0, y1 = sorted(float(v) for v in chart.y_of(np.array([lo, hi])))
            raise QuadratureError(y0, y1, what)
        chart.n_panels = failed_panel
        chart.nodes = chart.nodes[: failed_panel + 1]

    def _tabulate_G(self, side: str, chart: _Chart):
        lo, hi = chart.nodes[:-1], chart.nodes[1:]
        res = integrate_intervals(
            lambda t: chart.orient * self._g(chart, t), lo, hi, rtol=_QUAD_RTOL, strict=False
        )
        vals = res.value
        if res.failed.any():
            bad = int(np.flatnonzero(res.failed)[0])
            self._truncate(side, chart, bad, "drift/sigma^2 not integrable")
            vals = vals[:bad]
        G = np.concatenate([[0.0], np.cumsum(vals)])
        # Past |G| ~ G_LIMIT the scale density is exp(+-2 G_LIMIT) or beyond and
        # float rounding in G swamps log s'; the grid stops there.
        huge = np.flatnonzero(np.abs(G) > G_LIMIT)
        chart.cut = None
        if huge.size:
            stop = max(int(huge[0]), 2)
            chart.cut = "explode" if G[huge[0]] < 0 else "vanish"
            chart.n_panels = stop
            chart.nodes = chart.nodes[: stop + 1]
            G = G[: stop + 1]
        self._G_nodes[side] = G

    def _G_at(self, side: str, t):
        """Inner integral G at chart points ``t``."""
        chart = self.charts[side]
        t = np.asarray(t, dtype=float)
        j = chart.locate(t)
        base = chart.nodes[j]
        fn = lambda u: chart.orient * self._g(chart, u)
        val, err, scale = _gk_fixed(fn, base, t)
        bad = ~(err <= 1e-13 * np.maximum(scale, 1e-300)) | ~np.isfinite(val)
        bad &= t != base
        if bad.any():
            res = integrate_intervals(fn, base[bad], t[bad], rtol=1e-13, strict=True)
            val = val.copy()
            val[bad] = res.value
        return self._G_nodes[side][j] + val

    def _log_sprime_t(self, side: str, t):
        return -2.0 * self._G_at(side, t)

    def _tabulate_sprime(self, side: str, chart: _Chart):
        lo, hi = chart.nodes[:-1], chart.nodes[1:]
        res = integrate_intervals(
            lambda t: self._log_sprime_t(side, t), lo, hi, rtol=_QUAD_RTOL, log=True, strict=False
        )
        vals = res.value
        if res.failed.any():
            bad = int(np.flatnonzero(res.failed)[0])
            self._truncate(side, chart, bad, "scale density not integrable")
            vals = vals[:bad]
            self._G_nodes[side] = self._G_nodes[side][: bad + 1]
        self._ls_panels[side] = vals

    def _octave_logs(self, side: str, panels: np.ndarray, k_last: int):
        n_oct = min(k_last + 1, panels.size // NODES_PER_OCTAVE)
        blocks = panels[: n_oct * NODES_PER_OCTAVE].reshape(n_oct, NODES_PER_OCTAVE)
        with np.errstate(all="ignore"):
            return np.logaddexp.reduce(blocks, axis=1)

    def _decide_s_finite(self, side: str, chart: _Chart):
        octs = self._octave_logs(side, self._ls_panels[side], LADDER_LAST)
        ladder = None
        if octs.size > LADDER_FIRST + FIT_MIN:
            base = float(np.sum(np.exp(octs[:LADDER_FIRST]))) if np.all(np.isfinite(octs[:LADDER_FIRST])) else 0.0
            with np.errstate(over="ignore"):
                ladder = assess_ladder(octs[LADDER_FIRST:], base, range(LADDER_FIRST, octs.size))
        self.sprime_ladders[side] = ladder
        sym = self.asymptotics[side].s_finite
        if sym is not None:
            self.s_finite[side] = sym
        elif chart.cut is not None:
            # s' left the float range of its logarithm: exp(+-1e4) or beyond
            self.s_finite[side] = chart.cut == "vanish"
        elif ladder is None or ladder.outcome == "inconclusive":
            self.s_finite[side] = None
        else:
            self.s_finite[side] = ladder.outcome == "finite"

    def _cumulate(self, side: str, chart: _Chart):
        ls = self._ls_panels[side]
        # from the pivot outwards
        with np.errstate(all="ignore"):
            self._logcum_piv[side] = np.concatenate([[-np.inf], np.logaddexp.accumulate(ls)])
        if chart.infinite:
            self._logcum_bnd[side] = None
            return
        if self.s_finite[side] is False:
            self._logcum_bnd[side] = np.full(ls.size + 1, np.inf)
            return
        tail = ls[-2 * NODES_PER_OCTAVE:]
        jj = np.arange(tail.size, dtype=float)
        head = np.inf
        if np.all(np.isfinite(tail)):
            slope, icpt = np.polyfit(jj, tail, 1)
            if slope < 0:
                rho = math.exp(slope)
                head = float(tail[-1] + math.log(rho / -math.expm1(slope)))
        elif np.all(tail == -np.inf):
            head = -np.inf
        with np.errstate(all="ignore"):
            rev = np.logaddexp.accumulate(np.concatenate([[head], ls[::-1]]))
        self._logcum_bnd[side] = rev[::-1]

    # ------------------------------------------------------------------
    # chart-level evaluators

    def _log_int_sprime(self, side: str, t_from, t_to):
        """log of the integral of s' between chart points in one panel."""
        chart = self.charts[side]
        fn = lambda u: self._log_sprime_t(side, u)
        out, rel = _gk_fixed_log(fn, t_from, t_to)
        bad = ~(rel <= 1e-12)
        bad &= np.asarray(t_from) != np.asarray(t_to)
        if np.any(bad):
            lo = np.broadcast_to(t_from, out.shape)[bad]
            hi = np.broadcast_to(t_to, out.shape)[bad]
            res = integrate_intervals(fn, lo, hi, rtol=1e-12, log=True, strict=True)
            out = out.copy()
            out[bad] = res.value
        return out

    def log_s_bnd_t(self, side: str, t):
        """log of ``|s(y) - s(E)|`` at chart points, E the chart endpoint."""
        chart = self.charts[side]
        t = np.asarray(t, dtype=float)
        cum = self._logcum_bnd[side]
        if cum is None:
            raise ValueError("no finite endpoint on this side")
        j = chart.locate(t)
        part = self._log_int_sprime(side, t, chart.nodes[j + 1])
        with np.errstate(all="ignore"):
            return np.logaddexp(cum[j + 1], part)

    def log_s_piv_t(self, side: str, t):
        """log of ``|s(y) - s(pivot)|`` at chart points."""
        chart = self.charts[side]
        t = np.asarray(t, dtype=float)
        j = chart.locate(t)
        part = self._log_int_sprime(side, chart.nodes[j], t)
        with np.errstate(all="ignore"):
            return np.logaddexp(self._logcum_piv[side][j], part)

    def log_s_left_t(self, side: str, t):
        """log of ``s(y) - s(a)`` for chart points on either side."""
        if side == "left":
            return self.log_s_bnd_t("left", t)
        with np.errstate(all="ignore"):
            return np.logaddexp(self._logcum_bnd["left"][0], self.log_s_piv_t("right", t))

    def log_s_right_t(self, side: str, t):
        """log of ``s(b) - s(y)`` (finite right endpoint only)."""
        if side == "right":
            return self.log_s_bnd_t("right", t)
        with np.errstate(all="ignore"):
            return np.logaddexp(self._logcum_bnd["right"][0], self.log_s_piv_t("left", t))

    def log_sigma2_t(self, side: str, t):
        s = self.charts[side].evaluate(self.spec.sigma, t)
        with np.errstate(all="ignore"):
            return 2.0 * np.log(s)

    # ------------------------------------------------------------------
    # public evaluators in y

    def _split(self, y, fn):
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).ravel()
        out = np.empty_like(flat)
        for side, chart in self.charts.items():
            mask = chart.contains(flat)
            if mask.any():
                out[mask] = fn(side, chart.t_of(flat[mask]))
        return out.reshape(y.shape) if y.ndim else float(out[0])

    def G(self, y):
        return self._split(y, self._G_at)

    def log_s_prime(self, y):
        return self._split(y, self._log_sprime_t)

    def s_prime(self, y):
        return np.exp(self.log_s_prime(y))

    def log_s_minus_left(self, y):
        if not self.s_finite["left"]:
            raise ValueError("s(a) is not finite")
        return self._split(y, self.log_s_left_t)

    def log_s_minus_right(self, y):
        if self._logcum_bnd["right"] is None or not self.s_finite["right"]:
            raise ValueError("s(b) is not finite")
        return self._split(y, self.log_s_right_t)

    def _log_s_from_pivot_signed(self, y):
        def fn(side, t):
            v = np.exp(self.log_s_piv_t(side, t))
            return v if side == "right" else -v
        return self._split(y, fn)

    def s(self, y):
        """Scale function under the stored normalization."""
        if self.normalization == "left":
            return np.exp(self.log_s_minus_left(y))
        return self._log_s_from_pivot_signed(y) - self._ref_offset

    def m_density(self, y):
        """Speed density ``2 / (s' sigma^2)``."""
        y = np.asarray(y, dtype=float)
        sig = self._split(y, lambda side, t: self.charts[side].evaluate(self.spec.sigma, t))
        return 2.0 * np.exp(-self.log_s_prime(y)) / (sig * sig)

    def log_ratio_t(self, side: str, t, endpoint_side: str):
        """log of ``|s(y) - s(E)| / s'(y)`` at chart points."""
        if endpoint_side == "left":
            num = self.log_s_left_t(side, t)
        else:
            num = self.log_s_right_t(side, t)
        return num - self._log_sprime_t(side, t)

    # ------------------------------------------------------------------
    # octave integrals

    def octave_log_integrals(self, side: str, log_integrand: Callable, k_first: int, k_last: int,
                             rtol: float = _LADDER_RTOL):
        """log of the integral of ``exp(log_integrand(t))`` over octaves k."""
        chart = self.charts[side]
        ks = range(k_first, k_last + 1)
        lo, hi = zip(*(chart.octave(k) for k in ks))
        res = integrate_intervals(log_integrand, np.array(lo), np.array(hi), rtol=rtol, log=True,
                                  strict=False)
        return res.value

    def ladder(self, side: str, log_integrand: Callable) -> LadderAssessment:
        """Cutoff ladder of an integral towards the endpoint on ``side``.

        Octaves ``0..LADDER_FIRST-1`` form the base value; octaves
        ``LADDER_FIRST..LADDER_LAST`` are the assessed increments.
        """
        chart = self.charts[side]
        k_last = min(LADDER_LAST, chart.n_panels // NODES_PER_OCTAVE - 1)
        logs = self.octave_log_integrals(side, log_integrand, 0, k_last)
        with np.errstate(over="ignore"):
            base = float(np.sum(np.exp(logs[:LADDER_FIRST])))
        incs = logs[LADDER_FIRST:]
        if not math.isfinite(base) and not np.isnan(base):
            return LadderAssessment("infinite", math.inf, "overflow", math.nan, math.nan,
                                    tuple(range(LADDER_FIRST, k_last + 1)), ())
        return assess_ladder(incs, base, range(LADDER_FIRST, k_last + 1))


FIT_MIN = 10


def build_scale_speed(spec: DiffusionSpec, symbolic: bool = True) -> ScaleSpeed:
    """Tabulate the scale and speed quantities of ``spec``.

    With ``symbolic=False`` every endpoint question is settled by cutoff
    ladders alone. Raises ``ValueError`` when sigma is not positive on the sampled grid and
    :class:`QuadratureError` when the inner integral blows up inside the
    domain.
    """
    return ScaleSpeed(spec, symbolic)


# --------------------------------------------------------------------------
# Boundary classification


def _and3(*vals):
    if any(v is False for v in vals):
        return False
    if any(v is None for v in vals):
        return None
    return True


def _or3(*vals):
    if any(v is True for v in vals):
        return True
    if any(v is None for v in vals):
        return None
    return False


@dataclass(frozen=True)
class EndpointReport:
    """``s_at_boundary`` is finite, ``+-inf`` or NaN (undecided);
    ``integral_s_m`` is the integral of ``|s - s(E)| m`` near E, ``inf``
    when divergent and NaN when undecided or not applicable."""

    boundary: float
    s_at_boundary: float
    integral_s_m: float
    accessible: Optional[bool]
    method: str
    ladder: Optional[LadderAssessment] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BoundaryReport:
    left: EndpointReport
    right: EndpointReport
    absorbed_in_finite_time: Optional[bool]


def _access_exponent(ss: ScaleSpeed, side: str) -> Optional[float]:
    asym = ss.asymptotics[side]
    if asym.ratio_exp is None or asym.sigma2_exp is None:
        return None
    return asym.ratio_exp - asym.sigma2_exp


def _endpoint_report(ss: ScaleSpeed, side: str) -> EndpointReport:
    chart = ss.charts[side]
    sign = -1.0 if side == "left" else 1.0
    sf = ss.s_finite[side]
    if chart.infinite:
        if sf is False:
            return EndpointReport(math.inf, math.inf, math.nan, False,
                                  _method(ss.asymptotics[side].s_finite))
        s_val = math.nan if sf is None else float(np.exp(ss._logcum_piv[side][-1]))
        return EndpointReport(math.inf, s_val, math.nan, None, _method(ss.asymptotics[side].s_finite))
    if sf is False:
        return EndpointReport(chart.endpoint, sign * math.inf, math.inf, False,
                              _method(ss.asymptotics[side].s_finite))
    if sf is None:
        return EndpointReport(chart.endpoint, math.nan, math.nan, None, "numeric-extrapolation")
    s_val = _s_at_endpoint(ss, side)

    def log_integrand(t):
        return math.log(2.0) + ss.log_ratio_t(side, t, side) - ss.log_sigma2_t(side, t)

    ladder = ss.ladder(side, log_integrand)
    p = _access_exponent(ss, side)
    if p is not None:
        finite = p > -1
        method = "symbolic-exponent"
    elif ladder.outcome == "inconclusive":
        finite = None
        method = "numeric-extrapolation"
    else:
        finite = ladder.outcome == "finite"
        method = "numeric-extrapolation"
    if finite is None:
        integral = math.nan
    elif finite:
        integral = ladder.value if math.isfinite(ladder.value) else math.nan
    else:
        integral = math.inf
    return EndpointReport(chart.endpoint, s_val, integral, finite, method, ladder)


def _s_at_endpoint(ss: ScaleSpeed, side: str) -> float:
    if side == "left":
        if ss.normalization == "left":
            return 0.0
        return -float(np.exp(ss._logcum_bnd["left"][0])) - ss._ref_offset
    total = np.exp(ss._logcum_bnd["right"][0])
    if ss.normalization == "left":
        return float(np.exp(ss._logcum_bnd["left"][0]) + total)
    return float(total) - ss._ref_offset


def _method(sym) -> str:
    return "symbolic-exponent" if sym is not None else "numeric-extrapolation"


def classify_boundaries(ss: ScaleSpeed, spec: Optional[DiffusionSpec] = None) -> BoundaryReport:
    """Accessibility of both endpoints and the finite-time absorption flag.

    On ``(a, +inf)`` absorption at ``a`` in finite time requires
    ``s(+inf) = +inf``, ``s(a) > -inf`` and a finite integral of
    ``(s - s(a)) m`` near ``a``. On a bounded interval it requires one of:
    both endpoints accessible, or one accessible while the scale function
    diverges at the other.
    """
    if spec is not None and spec is not ss.spec and spec != ss.spec:
        raise ValueError("scale/speed object was built from a different spec")
    left = _endpoint_report(ss, "left")
    right = _endpoint_report(ss, "right")
    if ss.charts["right"].infinite:
        s_inf = None if ss.s_finite["right"] is None else not ss.s_finite["right"]
        absorbed = _and3(s_inf, left.accessible)
    else:
        sa_inf = None if ss.s_finite["left"] is None else not ss.s_finite["left"]
        sb_inf = None if ss.s_finite["right"] is None else not ss.s_finite["right"]
        absorbed = _or3(
            _and3(left.accessible, right.accessible),
            _and3(left.accessible, sb_inf),
            _and3(sa_inf, right.accessible),
        )
    return BoundaryReport(left, right, absorbed)


# --------------------------------------------------------------------------
# Green formula

GREEN_CONSTANT = 1.0


def green_expectation(ss: ScaleSpeed, x: float, f: CoefficientExpr,
                      constant: float = GREEN_CONSTANT) -> float:
    """``E_x[int_0^{T_a} f(Z_s) ds]`` from the Green kernel.

    Requires ``s(a)`` finite and ``s(+inf) = +inf``; the kernel is
    ``constant * (s(x ^ y) - s(a))`` against ``m(dy)``. The default constant
    is the one that matches simulation under the speed density ``2/(s' sigma^2)``.
    """
    if not ss.s_finite["left"] or not ss.charts["right"].infinite or ss.s_finite["right"] is not False:
        raise ValueError("Green kernel implemented for absorption at a with s(+inf) = +inf")
    log_sx = float(np.atleast_1d(ss.log_s_minus_left(np.array([x])))[0])
    total = 0.0
    for side, chart in ss.charts.items():
        def log_integrand(t, side=side, chart=chart):
            y = chart.y_of(t)
            fv = chart.evaluate(f, t)
            with np.errstate(all="ignore"):
                log_kernel = np.minimum(ss.log_s_left_t(side, t), log_sx)
                return (log_kernel + np.log(fv) + math.log(2.0) - ss._log_sprime_t(side, t)
                        - ss.log_sigma2_t(side, t))

        k_last = chart.n_panels // NODES_PER_OCTAVE - 1
        # split octaves at x so the kink of the kernel sits on a node
        pieces = []
        tx = float(chart.t_of(x)) if bool(chart.contains(np.array([x]))[0]) else None
        for k in range(0, k_last + 1):
            lo, hi = chart.octave(k)
            if tx is not None and min(lo, hi) < tx < max(lo, hi):
                pieces += [(lo, tx), (tx, hi)]
            else:
                pieces.append((lo, hi))
        lo, hi = (np.array(v) for v in zip(*pieces))
        res = integrate_intervals(log_integrand, lo, hi, rtol=_LADDER_RTOL, log=True, strict=True)
        total += float(np.sum(np.exp(res.value)))
    return constant * total
