"""Compiled path kernels.

Model coefficients are turned into small compiled functions with the
uniform signature ``fn(y, dist_left, dist_right, out)`` and handed to the
kernels as first-class function values, so every kernel is compiled once
per process regardless of how many models are simulated.

Kernels that record a path write into caller-supplied buffers and return
the number of records they wanted to write. When that exceeds the buffer
capacity the caller enlarges the buffers and runs the kernel again; the
noise is a pure function of (seed, trajectory, coordinate, block), so the
rerun reproduces the same path.
"""
from __future__ import annotations

import math
import threading

import numpy as np
from numba import njit, types

from .coefficients import CoefficientExpr, to_source
from .rng import refill_normals, refill_uniforms

f8 = types.float64
i8 = types.int64
u8 = types.uint64
b1 = types.boolean
F1 = f8[:]
F2 = f8[:, :]
I1 = i8[:]

MODEL_SIG = types.void(f8, f8, f8, F1)
MODEL_FN = types.FunctionType(MODEL_SIG)

# outcome codes shared by the kernels
UNDECIDED = 0
LEFT = 1
RIGHT = 2
ESCAPED = 3
EXTINCTION_FIRST = 1
FIXATION_FIRST = 2


@njit(nogil=True, cache=True)
def _pow(base, p):
    return base ** p


_model_cache: dict = {}
_model_lock = threading.Lock()


def compile_model(exprs, domain=(0.0, math.inf)):
    """Compile ``exprs`` into one function filling ``out[k] = exprs[k](y)``.

    ``y - a`` and ``b - y`` are read from the distance arguments so that
    values next to an endpoint keep full relative precision.
    """
    a, b = (float(v) for v in domain)
    left = (a, "dl") if math.isfinite(a) else None
    right = (b, "dr") if math.isfinite(b) else None
    lines = ["def _model(y, dl, dr, out):"]
    for k, e in enumerate(exprs):
        if not isinstance(e, CoefficientExpr):
            raise TypeError(f"expected CoefficientExpr, got {type(e).__name__}")
        lines.append(f"    out[{k}] = {to_source(e, 'y', left, right)}")
    if not exprs:
        lines.append("    return")
    source = "\n".join(lines) + "\n"
    with _model_lock:
        fn = _model_cache.get(source)
        if fn is None:
            namespace = {"math": math, "_pow": _pow}
            exec(compile(source, "<model>", "exec"), namespace)
            fn = njit(MODEL_SIG, nogil=True, error_model="numpy")(namespace["_model"])
            _model_cache[source] = fn
    return fn


# --------------------------------------------------------------------------
# One-dimensional diffusion in real time


@njit(nogil=True)
def _step_size(dt, floor, drift, sig, dist):
    h = dt
    while h > floor and abs(drift) * h + sig * math.sqrt(h) > 0.1 * dist:
        h *= 0.5
    if h < floor:
        h = floor
    return h


SIG_PATH_1D = i8(
    MODEL_FN, MODEL_FN, i8, f8, f8, f8, f8, f8, f8, f8, f8, b1, u8, u8,
    F1, F1, F1, F1, F2, b1,
)


@njit(SIG_PATH_1D, nogil=True, cache=True)
def path_1d(coef, integ, n_integ, x0, a, b, dt, eps, t_budget, floor, reflect, bridge,
            key0, key1, info, integrals, rec_t, rec_y, rec_int, record):
    """Euler path from ``x0`` until absorption or ``t_budget``.

    ``info`` receives (code, absorption or stop time, steps, final state).
    """
    normals = np.zeros((1, 4))
    uniforms = np.zeros((1, 4))
    pos = np.full(2, 4, dtype=np.int64)
    blocks = np.zeros(2, dtype=np.uint64)
    words = np.zeros(4, dtype=np.uint64)
    cv = np.zeros(2)
    fz = np.zeros(max(n_integ, 1))
    fn = np.zeros(max(n_integ, 1))
    lo = a + eps
    hi = b - eps
    cap = rec_t.shape[0]

    z = x0
    t = 0.0
    for k in range(n_integ):
        integrals[k] = 0.0
    zc = min(max(z, lo), hi)
    integ(zc, zc - a, b - zc, fz)
    n_rec = 0
    if record:
        if n_rec < cap:
            rec_t[n_rec] = t
            rec_y[n_rec] = z
            for k in range(n_integ):
                rec_int[n_rec, k] = 0.0
        n_rec += 1
    steps = 0
    code = UNDECIDED
    while t < t_budget:
        zt = min(max(z, a), b)
        coef(zt, zt - a, b - zt, cv)
        sig = cv[0]
        drift = cv[1]
        dist = min(z - a, b - z)
        h = _step_size(dt, floor, drift, sig, dist)
        if pos[0] >= 4:
            refill_normals(key0, key1, 0, normals, blocks, words)
            pos[0] = 0
        zn = z + drift * h + sig * math.sqrt(h) * normals[0, pos[0]]
        pos[0] += 1
        if zn > reflect:
            zn = 2.0 * reflect - zn
        steps += 1
        if zn <= lo:
            code = LEFT
        elif zn >= hi:
            code = RIGHT
        elif bridge:
            if pos[1] >= 4:
                refill_uniforms(key0, key1, 0, uniforms, blocks, words)
                pos[1] = 0
            u = uniforms[0, pos[1]]
            pos[1] += 1
            s2h = sig * sig * h
            p_left = 0.0
            p_right = 0.0
            if s2h > 0.0:
                p_left = math.exp(-2.0 * (z - lo) * (zn - lo) / s2h)
                if hi < math.inf:
                    p_right = math.exp(-2.0 * (hi - z) * (hi - zn) / s2h)
            if u < p_left:
                code = LEFT
            elif u < p_left + p_right:
                code = RIGHT
        zc = min(max(zn, lo), hi)
        integ(zc, zc - a, b - zc, fn)
        for k in range(n_integ):
            integrals[k] += 0.5 * h * (fz[k] + fn[k])
            fz[k] = fn[k]
        t += h
        if code == LEFT:
            zn = a
        elif code == RIGHT:
            zn = b
        if record:
            if n_rec < cap:
                rec_t[n_rec] = t
                rec_y[n_rec] = zn
                for k in range(n_integ):
                    rec_int[n_rec, k] = integrals[k]
            n_rec += 1
        z = zn
        if code != UNDECIDED:
            break
    info[0] = code
    info[1] = t
    info[2] = steps
    info[3] = z
    return n_rec


SIG_BATCH_1D = types.void(
    MODEL_FN, MODEL_FN, i8, f8, f8, f8, f8, f8, f8, f8, f8, b1, u8, i8, i8,
    I1, F1, F2, I1,
)


@njit(SIG_BATCH_1D, nogil=True, cache=True)
def batch_1d(coef, integ, n_integ, x0, a, b, dt, eps, t_budget, floor, reflect, bridge,
             key0, start, count, codes, times, integrals, steps):
    info = np.zeros(4)
    ints = np.zeros(max(n_integ, 1))
    dummy1 = np.zeros(0)
    dummy2 = np.zeros((0, 1))
    for j in range(start, start + count):
        path_1d(coef, integ, n_integ, x0, a, b, dt, eps, t_budget, floor, reflect, bridge,
                key0, np.uint64(j), info, ints, dummy1, dummy1, dummy2, False)
        codes[j] = np.int64(info[0])
        times[j] = info[1]
        steps[j] = np.int64(info[2])
        for k in range(n_integ):
            integrals[j, k] = ints[k]


# --------------------------------------------------------------------------
# One-dimensional diffusion on a logarithmic clock


@njit(nogil=True)
def _log_chart(phi, a, b, bounded):
    """Distances to both endpoints for chart coordinate ``phi``."""
    if bounded:
        w = b - a
        if phi >= 0.0:
            e = math.exp(-phi)
            dl = w / (1.0 + e)
            dr = w * e / (1.0 + e)
        else:
            e = math.exp(phi)
            dl = w * e / (1.0 + e)
            dr = w / (1.0 + e)
        y = a + dl if dl <= dr else b - dr
    else:
        dl = math.exp(phi)
        dr = math.inf
        y = a + dl
    return y, dl, dr


@njit(nogil=True)
def _log_clock_terms(coef, integ, n_integ, phi, a, b, bounded, cv, fv, w):
    """Chart drift, real-time rate and integrand weights at ``phi``."""
    y, dl, dr = _log_chart(phi, a, b, bounded)
    coef(y, dl, dr, cv)
    integ(y, dl, dr, fv)
    sig = cv[0]
    drift = cv[1]
    if bounded:
        width = b - a
        scale = dl * dr / (width * sig)
        d = drift * dl * dr / (width * sig * sig) + (dl - dr) / (2.0 * width)
    else:
        scale = dl / sig
        d = drift * dl / (sig * sig) - 0.5
    rate = scale * scale
    for k in range(n_integ):
        w[k] = fv[k] * rate
    return d, rate


SIG_LOG_CLOCK = types.void(
    MODEL_FN, MODEL_FN, i8, f8, f8, f8, b1, f8, f8, F1, u8, i8, i8, I1, F1, I1, F2,
)


@njit(SIG_LOG_CLOCK, nogil=True, cache=True)
def batch_log_clock(coef, integ, n_integ, x0, a, b, bounded, dc, clock_budget, depths,
                    key0, start, count, codes, times, level_side, level_integrals):
    """Paths in the chart ``phi = log(y - a)`` (or the logit on bounded domains).

    The clock is the quadratic variation of ``phi``, which turns the
    approach to a boundary into unit-rate Brownian motion with bounded
    drift. ``depths`` are increasing distances (in ``phi`` units) from the
    origin at which the running integrals are recorded. Row ``j *
    n_levels + k`` of ``level_integrals`` holds path ``j`` at depth ``k``.
    """
    n_levels = depths.shape[0]
    normals = np.zeros((1, 4))
    uniforms = np.zeros((1, 4))
    pos = np.zeros(2, dtype=np.int64)
    blocks = np.zeros(2, dtype=np.uint64)
    words = np.zeros(4, dtype=np.uint64)
    cv = np.zeros(2)
    nf = max(n_integ, 1)
    fv = np.zeros(nf)
    w0 = np.zeros(nf)
    w1 = np.zeros(nf)
    ints = np.zeros(nf)
    floor = dc * 2.0 ** -20
    for j in range(start, start + count):
        pos[:] = 4
        blocks[:] = 0
        key1 = np.uint64(j)
        if bounded:
            phi = math.log((x0 - a) / (b - x0))
        else:
            phi = math.log(x0 - a)
        d, rate = _log_clock_terms(coef, integ, n_integ, phi, a, b, bounded, cv, fv, w0)
        for k in range(n_integ):
            ints[k] = 0.0
        t = 0.0
        clock = 0.0
        level = 0
        code = UNDECIDED
        while clock < clock_budget:
            ds = dc
            while ds > floor and abs(d) * ds > 0.1:
                ds *= 0.5
            if pos[0] >= 4:
                refill_normals(key0, key1, 0, normals, blocks, words)
                pos[0] = 0
            phin = phi + d * ds + math.sqrt(ds) * normals[0, pos[0]]
            pos[0] += 1
            dn, raten = _log_clock_terms(coef, integ, n_integ, phin, a, b, bounded, cv, fv, w1)
            for k in range(n_integ):
                ints[k] += 0.5 * ds * (w0[k] + w1[k])
                w0[k] = w1[k]
            t += 0.5 * ds * (rate + raten)
            clock += ds
            phi = phin
            d = dn
            rate = raten
            if not bounded and phi > 700.0:
                code = ESCAPED
                break
            depth = abs(phi) if bounded else -phi
            side = RIGHT if (bounded and phi > 0.0) else LEFT
            while level < n_levels and depth >= depths[level]:
                level_side[j * n_levels + level] = side
                for k in range(n_integ):
                    level_integrals[j * n_levels + level, k] = ints[k]
                level += 1
            if level == n_levels:
                code = side
                break
        for lv in range(level, n_levels):
            level_side[j * n_levels + lv] = UNDECIDED
            for k in range(n_integ):
                level_integrals[j * n_levels + lv, k] = math.nan
        codes[j] = code
        times[j] = t


# --------------------------------------------------------------------------
# Coupled population size and allele frequency


SIG_COUPLED = i8(
    MODEL_FN, f8, f8, f8, i8, f8, f8, f8, f8, f8, u8, u8, F1, F1, F1, F1, b1,
)


@njit(SIG_COUPLED, nogil=True, cache=True)
def path_coupled(model, selection, n0, x0, scheme, dc, eps_n, eps_x, t_budget, floor_frac,
                 key0, key1, info, rec_t, rec_n, rec_x, record):
    """Race between fixation of X and extinction of N.

    ``model`` fills (sigma_N, drift_N, f). Coordinate 0 drives N and
    coordinate 1 drives X. ``scheme`` 0 steps (log N, X) on the clock
    ``u`` with ``dt = f(N) du``, on which X is a plain Wright-Fisher
    diffusion; scheme 1 is Euler in real time with full truncation.
    ``info`` receives (code, decision time, N, X, steps, clock).
    """
    normals = np.zeros((2, 4))
    pos = np.full(4, 4, dtype=np.int64)
    blocks = np.zeros(4, dtype=np.uint64)
    words = np.zeros(4, dtype=np.uint64)
    cv = np.zeros(3)
    cap = rec_t.shape[0]
    floor = dc * floor_frac
    log_eps = math.log(eps_n)

    n = n0
    x = x0
    t = 0.0
    clock = 0.0
    steps = 0
    code = UNDECIDED
    n_rec = 0
    if record:
        if n_rec < cap:
            rec_t[0] = 0.0
            rec_n[0] = n
            rec_x[0] = x
        n_rec += 1
    if x <= eps_x or x >= 1.0 - eps_x:
        code = FIXATION_FIRST
    elif n <= eps_n:
        code = EXTINCTION_FIRST

    if scheme == 0:
        lg = math.log(n) if n > 0.0 else -math.inf
        model(n, n, math.inf, cv)
        while code == UNDECIDED and t < t_budget:
            sig = cv[0]
            f = cv[2]
            kappa2 = sig * sig * f / (n * n)
            mu_l = (cv[1] + selection * n * (1.0 - x)) * f / n - 0.5 * kappa2
            vx = x * (1.0 - x)
            mu_x = -selection * vx * f
            du = dc
            if kappa2 * du > dc:
                du = dc / kappa2
            if abs(mu_l) * du > 0.1:
                du = 0.1 / abs(mu_l)
            distx = min(x, 1.0 - x)
            while du > floor and abs(mu_x) * du + math.sqrt(vx * du) > 0.1 * distx:
                du *= 0.5
            if pos[0] >= 4:
                refill_normals(key0, key1, 0, normals, blocks, words)
                refill_normals(key0, key1, 1, normals, blocks, words)
                pos[0] = 0
            nb = normals[0, pos[0]]
            nw = normals[1, pos[0]]
            pos[0] += 1
            lgn = lg + mu_l * du + math.sqrt(kappa2 * du) * nb
            xn = x + mu_x * du + math.sqrt(vx * du) * nw
            steps += 1
            nn = math.exp(lgn)
            model(nn, nn, math.inf, cv)
            t += 0.5 * du * (f + cv[2])
            clock += du
            ext = lgn <= log_eps
            fix = xn <= eps_x or xn >= 1.0 - eps_x
            if ext and fix:
                # both thresholds crossed in one step: compare crossing fractions
                frac_n = (lg - log_eps) / (lg - lgn)
                bound = eps_x if xn <= eps_x else 1.0 - eps_x
                frac_x = (x - bound) / (x - xn)
                code = FIXATION_FIRST if frac_x < frac_n else EXTINCTION_FIRST
            elif ext:
                code = EXTINCTION_FIRST
            elif fix:
                code = FIXATION_FIRST
            lg = lgn
            n = nn
            x = min(max(xn, 0.0), 1.0)
            if record:
                if n_rec < cap:
                    rec_t[n_rec] = t
                    rec_n[n_rec] = n
                    rec_x[n_rec] = x
                n_rec += 1
    else:
        while code == UNDECIDED and t < t_budget:
            nt = max(n, 0.0)
            model(nt, nt, math.inf, cv)
            sig = cv[0]
            drift = cv[1] + selection * nt * (1.0 - x)
            f = cv[2]
            vx = x * (1.0 - x) / f
            mu_x = -selection * x * (1.0 - x)
            distx = min(x, 1.0 - x)
            h = dc
            while h > floor and (
                abs(drift) * h + sig * math.sqrt(h) > 0.1 * n
                or abs(mu_x) * h + math.sqrt(vx * h) > 0.1 * distx
            ):
                h *= 0.5
            if h < floor:
                h = floor
            if pos[0] >= 4:
                refill_normals(key0, key1, 0, normals, blocks, words)
                refill_normals(key0, key1, 1, normals, blocks, words)
                pos[0] = 0
            nb = normals[0, pos[0]]
            nw = normals[1, pos[0]]
            pos[0] += 1
            nn = n + drift * h + sig * math.sqrt(h) * nb
            xn = x + mu_x * h + math.sqrt(vx * h) * nw
            steps += 1
            t += h
            clock += h / f
            ext = nn <= eps_n
            fix = xn <= eps_x or xn >= 1.0 - eps_x
            if ext and fix:
                frac_n = (n - eps_n) / (n - nn)
                bound = eps_x if xn <= eps_x else 1.0 - eps_x
                frac_x = (x - bound) / (x - xn)
                code = FIXATION_FIRST if frac_x < frac_n else EXTINCTION_FIRST
            elif ext:
                code = EXTINCTION_FIRST
            elif fix:
                code = FIXATION_FIRST
            n = max(nn, 0.0)
            x = min(max(xn, 0.0), 1.0)
            if record:
                if n_rec < cap:
                    rec_t[n_rec] = t
                    rec_n[n_rec] = n
                    rec_x[n_rec] = x
                n_rec += 1
    info[0] = code
    info[1] = t
    info[2] = n
    info[3] = x
    info[4] = steps
    info[5] = clock
    return n_rec


SIG_BATCH_COUPLED = types.void(
    MODEL_FN, f8, f8, f8, i8, f8, f8, f8, f8, f8, u8, i8, i8, I1, F1, F1, F1,
)


@njit(SIG_BATCH_COUPLED, nogil=True, cache=True)
def batch_coupled(model, selection, n0, x0, scheme, dc, eps_n, eps_x, t_budget, floor_frac,
                  key0, start, count, codes, times, n_final, x_final):
    info = np.zeros(6)
    dummy = np.zeros(0)
    for j in range(start, start + count):
        path_coupled(model, selection, n0, x0, scheme, dc, eps_n, eps_x, t_budget, floor_frac,
                     key0, np.uint64(j), info, dummy, dummy, dummy, False)
        codes[j] = np.int64(info[0])
        times[j] = info[1]
        n_final[j] = info[2]
        x_final[j] = info[3]


# --------------------------------------------------------------------------
# L-allele Wright-Fisher through nested ratios


@njit(nogil=True)
def _proportions(ratios, props):
    """X^i = R_i * prod_{j<i}(1 - R_j); the last allele takes the remainder."""
    n_ratio = ratios.shape[0]
    rest = 1.0
    for i in range(n_ratio):
        props[i] = ratios[i] * rest
        rest *= 1.0 - ratios[i]
    props[n_ratio] = rest


SIG_PATH_MULTI = i8(F1, f8, f8, f8, f8, u8, u8, I1, F1, F1, F1, F2, i8, b1)


@njit(SIG_PATH_MULTI, nogil=True, cache=True)
def path_multiallele(x0, dc, eps, t_budget, floor_frac, key0, key1, ext_step, ext_time,
                     info, rec_t, rec_x, stride, record):
    """L-allele neutral Wright-Fisher path; ratio ``i`` uses noise coordinate ``i``.

    ``info`` receives (fixed flag, time, steps, worst simplex defect).
    """
    n_all = x0.shape[0]
    n_ratio = n_all - 1
    normals = np.zeros((n_ratio, 4))
    pos = np.full(2 * n_ratio, 4, dtype=np.int64)
    blocks = np.zeros(2 * n_ratio, dtype=np.uint64)
    words = np.zeros(4, dtype=np.uint64)
    ratios = np.zeros(n_ratio)
    props = np.zeros(n_all)
    sig = np.zeros(n_ratio)
    cap = rec_t.shape[0]
    floor = dc * floor_frac

    rest = 1.0
    for i in range(n_ratio):
        ratios[i] = x0[i] / rest if rest > 0.0 else 0.0
        rest -= x0[i]
    for i in range(n_all):
        ext_step[i] = -1
        ext_time[i] = math.nan
    _proportions(ratios, props)
    alive = 0
    for i in range(n_all):
        if props[i] <= 0.0:
            ext_step[i] = 0
            ext_time[i] = 0.0
        else:
            alive += 1
    worst = 0.0
    t = 0.0
    steps = 0
    n_rec = 0
    if record:
        if n_rec < cap:
            rec_t[0] = 0.0
            rec_x[0, :] = props
        n_rec += 1
    while alive > 1 and t < t_budget:
        h = dc
        rest = 1.0
        for i in range(n_ratio):
            r = ratios[i]
            if rest > 0.0 and 0.0 < r < 1.0:
                sig[i] = math.sqrt(r * (1.0 - r) / rest)
                dist = min(r, 1.0 - r)
                while h > floor and sig[i] * math.sqrt(h) > 0.1 * dist:
                    h *= 0.5
            else:
                sig[i] = 0.0
            rest *= 1.0 - r
        if h < floor:
            h = floor
        sq = math.sqrt(h)
        for i in range(n_ratio):
            # every coordinate consumes its stream each step, alive or not,
            # so the draws stay aligned with the step index
            if pos[2 * i] >= 4:
                refill_normals(key0, key1, i, normals, blocks, words)
                pos[2 * i] = 0
            z = normals[i, pos[2 * i]]
            pos[2 * i] += 1
            if sig[i] > 0.0:
                r = ratios[i] + sig[i] * sq * z
                if r <= eps:
                    r = 0.0
                elif r >= 1.0 - eps:
                    r = 1.0
                ratios[i] = r
        steps += 1
        t += h
        _proportions(ratios, props)
        total = 0.0
        for i in range(n_all):
            total += props[i]
            if props[i] < 0.0 or props[i] > 1.0:
                worst = max(worst, abs(props[i] - min(max(props[i], 0.0), 1.0)))
            if props[i] <= 0.0 and ext_step[i] < 0:
                ext_step[i] = steps
                ext_time[i] = t
                alive -= 1
        worst = max(worst, abs(total - 1.0))
        if record and (steps % stride == 0 or alive <= 1):
            if n_rec < cap:
                rec_t[n_rec] = t
                rec_x[n_rec, :] = props
            n_rec += 1
    info[0] = 1.0 if alive <= 1 else 0.0
    info[1] = t
    info[2] = steps
    info[3] = worst
    return n_rec


SIG_BATCH_MULTI = types.void(F1, f8, f8, f8, f8, u8, i8, i8, types.int64[:, :], F2, F1, F1, I1, F1)


@njit(SIG_BATCH_MULTI, nogil=True, cache=True)
def batch_multiallele(x0, dc, eps, t_budget, floor_frac, key0, start, count,
                      ext_steps, ext_times, fixed, times, steps, worst):
    n_all = x0.shape[0]
    info = np.zeros(4)
    es = np.zeros(n_all, dtype=np.int64)
    et = np.zeros(n_all)
    d1 = np.zeros(0)
    d2 = np.zeros((0, n_all))
    for j in range(start, start + count):
        path_multiallele(x0, dc, eps, t_budget, floor_frac, key0, np.uint64(j), es, et,
                         info, d1, d2, 1, False)
        for i in range(n_all):
            ext_steps[j, i] = es[i]
            ext_times[j, i] = et[i]
        fixed[j] = info[0]
        times[j] = info[1]
        steps[j] = np.int64(info[2])
        worst[j] = info[3]
