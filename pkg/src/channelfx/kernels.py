"""Hot loops: preconditioned conjugate gradients and Brownian particles.

Every kernel exists twice, a numba ``@njit`` version and a pure numpy
version with the same signature.  The public names (:func:`pcg`,
:func:`particle_passage_times`) dispatch to numba unless the environment
variable ``CHANNELFX_DISABLE_NUMBA`` is set to a non-empty value other
than ``0``, or numba cannot be imported.  ``CHANNELFX_THREADS`` caps the
number of numba threads.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_flag = os.environ.get("CHANNELFX_DISABLE_NUMBA", "")
USE_NUMBA = HAVE_NUMBA and _flag in ("", "0")

if HAVE_NUMBA and os.environ.get("CHANNELFX_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["CHANNELFX_THREADS"]), numba.config.NUMBA_NUM_THREADS)))

# geometry codes understood by the particle kernels
GEO_PARAMETRIC = 0
GEO_CONFORMAL = 1
MAP_STRIP, MAP_LOG, MAP_POWER = 0, 1, 2

# particle exit status
ABSORBED, TIMED_OUT, ESCAPED = 0, 1, 2

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------


def _csr_matvec_py(indptr, indices, data, x):
    rows = np.repeat(np.arange(indptr.size - 1), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=indptr.size - 1)


def pcg_numpy(indptr, indices, data, b, x0, dinv, tol, max_iter):
    """Jacobi-preconditioned CG; returns ``(x, iterations, rel_residual)``.

    ``x`` is the iterate with the smallest true residual seen at restart
    checkpoints; the recursive residual is re-synchronised whenever it
    claims convergence.
    """
    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = x0.copy()
    r = b - _csr_matvec_py(indptr, indices, data, x)
    best, best_res = x.copy(), np.sqrt(r @ r) / bnorm
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        if best_res <= tol:
            break
        Ap = _csr_matvec_py(indptr, indices, data, p)
        pAp = p @ Ap
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if np.sqrt(r @ r) / bnorm <= tol or it == max_iter:
            r = b - _csr_matvec_py(indptr, indices, data, x)
            res = np.sqrt(r @ r) / bnorm
            if res < best_res:
                best, best_res = x.copy(), res
            z = dinv * r
            p = z.copy()
            rz = r @ z
            continue
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best, it, best_res


if HAVE_NUMBA:

    @njit(cache=True)
    def _matvec_nb(indptr, indices, data, x, out):
        n = indptr.size - 1
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] = acc

    @njit(cache=True)
    def _dot_nb(a, b):
        acc = 0.0
        for i in range(a.size):
            acc += a[i] * b[i]
        return acc

    @njit(cache=True)
    def pcg_numba(indptr, indices, data, b, x0, dinv, tol, max_iter):
        n = b.size
        bnorm = math.sqrt(_dot_nb(b, b))
        if bnorm == 0.0:
            return np.zeros(n), 0, 0.0
        x = x0.copy()
        Ap = np.empty(n)
        _matvec_nb(indptr, indices, data, x, Ap)
        r = b - Ap
        best = x.copy()
        best_res = math.sqrt(_dot_nb(r, r)) / bnorm
        z = dinv * r
        p = z.copy()
        rz = _dot_nb(r, z)
        it = 0
        while it < max_iter:
            if best_res <= tol:
                break
            _matvec_nb(indptr, indices, data, p, Ap)
            pAp = _dot_nb(p, Ap)
            if pAp <= 0.0:
                break
            alpha = rz / pAp
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * Ap[i]
            it += 1
            if math.sqrt(_dot_nb(r, r)) / bnorm <= tol or it == max_iter:
                _matvec_nb(indptr, indices, data, x, Ap)
                for i in range(n):
                    r[i] = b[i] - Ap[i]
                res = math.sqrt(_dot_nb(r, r)) / bnorm
                if res < best_res:
                    best[:] = x
                    best_res = res
                for i in range(n):
                    z[i] = dinv[i] * r[i]
                    p[i] = z[i]
                rz = _dot_nb(r, z)
                continue
            for i in range(n):
                z[i] = dinv[i] * r[i]
            rz_new = _dot_nb(r, z)
            beta = rz_new / rz
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            rz = rz_new
        return best, it, best_res


def pcg(indptr, indices, data, b, x0, dinv, tol, max_iter, use_numba=None):
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    args = (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
        np.ascontiguousarray(dinv, dtype=np.float64),
        float(tol),
        int(max_iter),
    )
    x, it, res = (pcg_numba if use else pcg_numpy)(*args)
    return x, int(it), float(res)


# ---------------------------------------------------------------------------
# counter-based random numbers (splitmix64 finalizer on key + counter)
# ---------------------------------------------------------------------------


def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def particle_keys(seed, n):
    """One independent stream key per particle index."""
    with np.errstate(over="ignore"):
        base = _mix_np(np.array([seed], dtype=np.uint64) * _GAMMA + np.uint64(1))
        return _mix_np(base ^ _mix_np((np.arange(n, dtype=np.uint64) + np.uint64(1)) * _GAMMA))


def _uniform_np(keys, ctr):
    with np.errstate(over="ignore"):
        z = _mix_np(keys + ctr * _GAMMA)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# ---------------------------------------------------------------------------
# particle geometry
# ---------------------------------------------------------------------------


def _locate_np(geo, table, x, y):
    """Return ``u, v, grad u, grad v`` (as 2-vectors) at positions."""
    if int(geo[0]) == GEO_PARAMETRIC:
        a, b = geo[1], geo[2]
        n = table.shape[0]
        t = np.clip((x - a) / (b - a) * (n - 1), 0.0, n - 1.0)
        i = np.minimum(t.astype(np.int64), n - 2)
        f = t - i
        row = table[i] * (1.0 - f)[:, None] + table[i + 1] * f[:, None]
        c, cp, w, wp = row[:, 0], row[:, 1], row[:, 2], row[:, 3]
        u = x
        v = (y - c) / w
        one = np.ones_like(x)
        return u, v, one, np.zeros_like(x), -(cp + v * wp) / w, one / w
    z = x + 1j * y
    code = int(geo[5])
    if code == MAP_STRIP:
        zeta, dF = z, np.ones_like(z)
    elif code == MAP_LOG:
        zeta, dF = np.log(z), 1.0 / z
    else:
        zeta = np.exp(geo[6] * np.log(z))
        dF = geo[6] * zeta / z
    return zeta.real, zeta.imag, dF.real, -dF.imag, dF.imag, dF.real


def _inside(geo, u, v, slack):
    return (u >= geo[1] - slack) & (v >= geo[3] - slack) & (v <= geo[4] + slack)


def _table_np(geo, table, x):
    a, b = geo[1], geo[2]
    n = table.shape[0]
    t = np.clip((x - a) / (b - a) * (n - 1), 0.0, n - 1.0)
    i = np.minimum(t.astype(np.int64), n - 2)
    f = (t - i)[:, None]
    return table[i] * (1.0 - f) + table[i + 1] * f


def _inverse_np(geo, zeta):
    code = int(geo[5])
    if code == MAP_STRIP:
        return zeta
    if code == MAP_LOG:
        return np.exp(zeta)
    return np.exp(np.log(zeta) / geo[6])


def _reflect_np(geo, table, x, y):
    """Mirror points that left through ``u = a`` or a wall back inside.

    Parametric walls ``y = c(x) +- w(x)/2`` are mirrored across the tangent
    at the foot point; conformal channels use the Schwarz reflection
    ``v -> 2 v_wall - v`` (an exact mirror for straight walls and rays).
    """
    a, lo, hi = geo[1], geo[3], geo[4]
    if int(geo[0]) == GEO_CONFORMAL:
        for _ in range(2):
            u, v, _, _, _, _ = _locate_np(geo, table, x, y)
            out = (u < a) | (v > hi) | (v < lo)
            if not np.any(out):
                break
            u, v = u[out], v[out]
            u = np.where(u < a, 2.0 * a - u, u)
            v = np.where(v > hi, 2.0 * hi - v, np.where(v < lo, 2.0 * lo - v, v))
            z = _inverse_np(geo, u + 1j * v)
            x, y = x.copy(), y.copy()
            x[out], y[out] = z.real, z.imag
    else:
        for _ in range(2):
            x = np.where(x < a, 2.0 * a - x, x)
            row = _table_np(geo, table, x)
            v = (y - row[:, 0]) / row[:, 2]
            side = np.where(v > hi, 1.0, np.where(v < lo, -1.0, 0.0))
            out = side != 0.0
            if np.any(out):
                xo, yo, so = x[out], y[out], side[out]
                xf = xo.copy()
                for _ in range(4):
                    r = _table_np(geo, table, xf)
                    Y = r[:, 0] + so * 0.5 * r[:, 2]
                    Yp = r[:, 1] + so * 0.5 * r[:, 3]
                    xf = xo - (Y - yo) * Yp
                r = _table_np(geo, table, xf)
                Y = r[:, 0] + so * 0.5 * r[:, 2]
                Yp = r[:, 1] + so * 0.5 * r[:, 3]
                norm = np.sqrt(1.0 + Yp * Yp)
                nx, ny = -Yp / norm, 1.0 / norm
                d = (xo - xf) * nx + (yo - Y) * ny
                x = x.copy()
                y = y.copy()
                x[out] = xo - 2.0 * d * nx
                y[out] = yo - 2.0 * d * ny
    u, _, gux, guy, _, _ = _locate_np(geo, table, x, y)
    return x, y, u, np.hypot(gux, guy)


def passage_times_numpy(geo, table, x0, y0, keys, D0, dt, t_max):
    """Vectorized first-passage times; see :func:`particle_passage_times`."""
    n = x0.size
    b = geo[2]
    slack = 1e-12 * max(1.0, abs(geo[2]))
    x, y = x0.copy(), y0.copy()
    t = np.zeros(n)
    h = np.full(n, dt)
    ctr = np.zeros(n, dtype=np.uint64)
    status = np.full(n, TIMED_OUT, dtype=np.int64)
    times = np.full(n, np.nan)
    u, _, gux, guy, _, _ = _locate_np(geo, table, x, y)
    gu = np.hypot(gux, guy)
    active = np.arange(n)
    while active.size:
        k = keys[active]
        c = ctr[active]
        u1 = _uniform_np(k, c)
        u2 = _uniform_np(k, c + np.uint64(1))
        ub = _uniform_np(k, c + np.uint64(2))
        ctr[active] = c + np.uint64(3)
        rad = np.sqrt(-2.0 * np.log(u1))
        s = np.sqrt(2.0 * D0 * h[active])
        xn = x[active] + s * rad * np.cos(2.0 * np.pi * u2)
        yn = y[active] + s * rad * np.sin(2.0 * np.pi * u2)
        xn, yn, un, gun = _reflect_np(geo, table, xn, yn)
        _, vn, _, _, _, _ = _locate_np(geo, table, xn, yn)
        ok = _inside(geo, un, vn, slack) | (un >= b)
        fail = active[~ok]
        h[fail] *= 0.5
        if np.any(h[fail] < dt * 2.0**-10):
            bad = fail[h[fail] < dt * 2.0**-10]
            status[bad] = ESCAPED
            times[bad] = t[bad]
        good = ok
        idx = active[good]
        hh = h[idx]
        d0 = (b - u[idx]) / gu[idx]
        d1 = (b - un[good]) / gun[good]
        crossed = un[good] >= b
        bridge = np.exp(-np.maximum(d0 * d1, 0.0) / (D0 * hh))
        crossed |= ub[good] < bridge
        t[idx] += hh
        x[idx], y[idx] = xn[good], yn[good]
        u[idx], gu[idx] = un[good], gun[good]
        h[idx] = dt
        done = idx[crossed]
        status[done] = ABSORBED
        times[done] = t[done]
        late = idx[~crossed & (t[idx] >= t_max)]
        times[late] = t[late]
        finished = (status != TIMED_OUT) | (t >= t_max)
        active = active[~finished[active]]
    return times, status


if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True, inline="always")
    def _uniform_nb(key, ctr):
        z = _mix_nb(key + ctr * np.uint64(0x9E3779B97F4A7C15))
        return (float(z >> np.uint64(11)) + 0.5) * 2.0**-53

    @njit(cache=True)
    def _locate_nb(geo, table, x, y):
        if int(geo[0]) == GEO_PARAMETRIC:
            a, b = geo[1], geo[2]
            n = table.shape[0]
            t = (x - a) / (b - a) * (n - 1)
            if t < 0.0:
                t = 0.0
            elif t > n - 1.0:
                t = n - 1.0
            i = int(t)
            if i > n - 2:
                i = n - 2
            f = t - i
            c = table[i, 0] * (1.0 - f) + table[i + 1, 0] * f
            cp = table[i, 1] * (1.0 - f) + table[i + 1, 1] * f
            w = table[i, 2] * (1.0 - f) + table[i + 1, 2] * f
            wp = table[i, 3] * (1.0 - f) + table[i + 1, 3] * f
            v = (y - c) / w
            return x, v, 1.0, 0.0, -(cp + v * wp) / w, 1.0 / w
        z = complex(x, y)
        code = int(geo[5])
        if code == MAP_STRIP:
            zeta = z
            dF = complex(1.0, 0.0)
        elif code == MAP_LOG:
            zeta = np.log(z)
            dF = 1.0 / z
        else:
            zeta = np.exp(geo[6] * np.log(z))
            dF = geo[6] * zeta / z
        return zeta.real, zeta.imag, dF.real, -dF.imag, dF.imag, dF.real

    @njit(cache=True, inline="always")
    def _row_nb(geo, table, x, k):
        a, b = geo[1], geo[2]
        n = table.shape[0]
        t = (x - a) / (b - a) * (n - 1)
        if t < 0.0:
            t = 0.0
        elif t > n - 1.0:
            t = n - 1.0
        i = int(t)
        if i > n - 2:
            i = n - 2
        f = t - i
        return table[i, k] * (1.0 - f) + table[i + 1, k] * f

    @njit(cache=True)
    def _reflect_nb(geo, table, x, y):
        a, lo, hi = geo[1], geo[3], geo[4]
        if int(geo[0]) == GEO_CONFORMAL:
            for _ in range(2):
                u, v, _, _, _, _ = _locate_nb(geo, table, x, y)
                if u >= a and lo <= v <= hi:
                    break
                if u < a:
                    u = 2.0 * a - u
                if v > hi:
                    v = 2.0 * hi - v
                elif v < lo:
                    v = 2.0 * lo - v
                zeta = complex(u, v)
                code = int(geo[5])
                if code == MAP_STRIP:
                    z = zeta
                elif code == MAP_LOG:
                    z = np.exp(zeta)
                else:
                    z = np.exp(np.log(zeta) / geo[6])
                x, y = z.real, z.imag
            return x, y
        for _ in range(2):
            if x < a:
                x = 2.0 * a - x
            v = (y - _row_nb(geo, table, x, 0)) / _row_nb(geo, table, x, 2)
            if v > hi:
                side = 1.0
            elif v < lo:
                side = -1.0
            else:
                break
            xf = x
            for _ in range(4):
                Y = _row_nb(geo, table, xf, 0) + side * 0.5 * _row_nb(geo, table, xf, 2)
                Yp = _row_nb(geo, table, xf, 1) + side * 0.5 * _row_nb(geo, table, xf, 3)
                xf = x - (Y - y) * Yp
            Y = _row_nb(geo, table, xf, 0) + side * 0.5 * _row_nb(geo, table, xf, 2)
            Yp = _row_nb(geo, table, xf, 1) + side * 0.5 * _row_nb(geo, table, xf, 3)
            norm = math.sqrt(1.0 + Yp * Yp)
            nx, ny = -Yp / norm, 1.0 / norm
            d = (x - xf) * nx + (y - Y) * ny
            x -= 2.0 * d * nx
            y -= 2.0 * d * ny
        return x, y

    @njit(cache=True, parallel=True)
    def passage_times_numba(geo, table, x0, y0, keys, D0, dt, t_max):
        n = x0.size
        a, b, lo, hi = geo[1], geo[2], geo[3], geo[4]
        slack = 1e-12 * max(1.0, abs(b))
        times = np.empty(n)
        status = np.empty(n, dtype=np.int64)
        for p in prange(n):
            key = keys[p]
            ctr = np.uint64(0)
            x, y = x0[p], y0[p]
            u, _, gux, guy, _, _ = _locate_nb(geo, table, x, y)
            gu = math.hypot(gux, guy)
            t = 0.0
            h = dt
            st = TIMED_OUT
            while t < t_max:
                u1 = _uniform_nb(key, ctr)
                u2 = _uniform_nb(key, ctr + np.uint64(1))
                ub = _uniform_nb(key, ctr + np.uint64(2))
                ctr += np.uint64(3)
                rad = math.sqrt(-2.0 * math.log(u1))
                s = math.sqrt(2.0 * D0 * h)
                xn = x + s * rad * math.cos(2.0 * math.pi * u2)
                yn = y + s * rad * math.sin(2.0 * math.pi * u2)
                xn, yn = _reflect_nb(geo, table, xn, yn)
                un, vn, ax, ay, _, _ = _locate_nb(geo, table, xn, yn)
                inside = un >= b or (un >= a - slack and vn >= lo - slack and vn <= hi + slack)
                if not inside:
                    h *= 0.5
                    if h < dt * 2.0**-10:
                        st = ESCAPED
                        break
                    continue
                gun = math.hypot(ax, ay)
                crossed = un >= b
                if not crossed:
                    d0 = (b - u) / gu
                    d1 = (b - un) / gun
                    prod = d0 * d1
                    if prod < 0.0:
                        prod = 0.0
                    crossed = ub < math.exp(-prod / (D0 * h))
                t += h
                x, y, u, gu = xn, yn, un, gun
                h = dt
                if crossed:
                    st = ABSORBED
                    break
            times[p] = t
            status[p] = st
        return times, status


def particle_passage_times(geo, table, x0, y0, keys, D0, dt, t_max, use_numba=None):
    """First passage times of independent reflected Brownian particles.

    ``geo`` packs ``[code, a, b, v_lo, v_hi, map_code, alpha]``; ``table``
    holds ``c, c', w, w'`` on a uniform u-grid for parametric channels.
    Returns ``(times, status)`` with status ``ABSORBED``, ``TIMED_OUT`` or
    ``ESCAPED`` per particle.
    """
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    fn = passage_times_numba if use else passage_times_numpy
    return fn(
        np.ascontiguousarray(geo, dtype=np.float64),
        np.ascontiguousarray(table, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
        np.ascontiguousarray(y0, dtype=np.float64),
        np.ascontiguousarray(keys, dtype=np.uint64),
        float(D0),
        float(dt),
        float(t_max),
    )
