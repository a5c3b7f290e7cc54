"""Time-dependent diffusion: reduced 1-D, full 2-D, and a Brownian oracle."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from . import kernels
from .errors import GeometryError, StabilityError, ValidationError
from .geom import ConjugatePair, Parametric2D, Reparametrized, _points
from .harmonic import build_operator
from .profiles import Field2D, ScalarProfile, fmt

BOUNDARY_CONDITIONS = ("reflecting", "absorbing", "fixed-value")


@dataclass(frozen=True, eq=False)
class TimeSeries1D:
    """Effective concentration ``p(u, t)`` at recorded stamps.

    ``sigma`` is the cell volume density and ``du`` the cell width, so the
    mass at stamp ``k`` is ``sum(p[k] * sigma) * du``.  ``flux`` (optional)
    holds the face fluxes of the step ending at each stamp after the first.
    """

    t: np.ndarray
    u: np.ndarray
    p: np.ndarray
    sigma: np.ndarray
    du: float
    flux: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValidationError("time stamps must increase strictly")
        if self.p.shape != (self.t.size, self.u.size):
            raise ValidationError("time series shape does not match its grids")

    def __len__(self):
        return self.t.size

    def profile(self, k):
        return ScalarProfile(self.u, self.p[k], "concentration")

    def mass(self):
        return self.p @ self.sigma * self.du

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"u={fmt(u)}" for u in self.u])
        for t, row in zip(self.t, self.p):
            writer.writerow([fmt(t)] + [fmt(x) for x in row])
        return buf.getvalue()


def _steps(dt, T):
    if not (dt > 0 and T > 0):
        raise ValidationError("dt and T must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValidationError(f"T={T} is not a whole number of steps dt={dt}")
    return n


def _uniform_cells(u):
    du = np.diff(u)
    if u.size < 3 or not np.allclose(du, du[0], rtol=1e-9, atol=0.0):
        raise ValidationError("the initial profile must sit on >= 3 uniform cell centres")
    return float(du[0])


class Effective1D:
    """Conservative operator of ``sigma p_t = d_u((D / sigma) d_u p)``.

    Cells are centred at ``u``; ``D`` (metric convention, pairs with
    ``g = sigma^2``) and ``sigma`` are interpolated to centres and faces.
    """

    def __init__(self, D, sigma, u, bc="reflecting", values=(0.0, 0.0)):
        if bc not in BOUNDARY_CONDITIONS:
            raise ValidationError(f"unknown boundary condition {bc!r}; expected one of {BOUNDARY_CONDITIONS}")
        u = np.asarray(u, dtype=float)
        du = _uniform_cells(u)
        faces = np.concatenate([[u[0] - 0.5 * du], 0.5 * (u[1:] + u[:-1]), [u[-1] + 0.5 * du]])
        s_c = np.asarray(sigma(u), dtype=float)
        k_f = np.asarray(D(faces), dtype=float) / np.asarray(sigma(faces), dtype=float)
        if np.any(s_c <= 0) or np.any(k_f <= 0):
            raise ValidationError("D and sigma must be positive")
        self.u, self.du, self.faces = u, du, faces
        self.mass = s_c * du
        self.sigma = s_c
        t = k_f / du
        if bc == "reflecting":
            t[0] = t[-1] = 0.0
        else:
            t[0] *= 2.0
            t[-1] *= 2.0
        self.t = t
        self.bc = bc
        self.values = (0.0, 0.0) if bc == "absorbing" else tuple(float(x) for x in values)

    def flux(self, p):
        """Flux ``-(D / sigma) d_u p`` through every face (positive towards +u)."""
        ext_a, ext_b = self.values
        F = np.empty(self.u.size + 1)
        F[1:-1] = -self.t[1:-1] * np.diff(p)
        F[0] = -self.t[0] * (p[0] - ext_a)
        F[-1] = -self.t[-1] * (ext_b - p[-1])
        return F

    def banded(self, dt):
        """``M + dt A`` in the layout of :func:`scipy.linalg.solve_banded`."""
        n = self.u.size
        ab = np.zeros((3, n))
        ab[1] = self.mass + dt * (self.t[:-1] + self.t[1:])
        ab[0, 1:] = -dt * self.t[1:-1]
        ab[2, :-1] = -dt * self.t[1:-1]
        return ab

    def source(self):
        out = np.zeros(self.u.size)
        out[0] = self.t[0] * self.values[0]
        out[-1] += self.t[-1] * self.values[1]
        return out

    def stable_dt(self):
        return float(np.min(self.mass / (self.t[:-1] + self.t[1:] + 1e-300)))


def solve_effective_1d(D, sigma, p0, dt, T, bc="reflecting", values=(0.0, 0.0), mode="implicit", save_every=1):
    """March the reduced equation from ``p0`` to time ``T``.

    ``p0`` fixes the cells: its samples are the (uniform) cell centres.
    ``bc`` is ``reflecting``, ``absorbing`` or ``fixed-value`` (with
    ``values = (p_a, p_b)``).  Implicit Euler is the default; explicit
    Euler raises :class:`StabilityError` when ``dt`` exceeds its bound.
    """
    op = Effective1D(D, sigma, p0.u, bc, values)
    n = _steps(dt, T)
    src = op.source()
    if mode == "explicit":
        if dt > op.stable_dt():
            raise StabilityError(f"explicit step dt={dt:g} exceeds the stability bound {op.stable_dt():g}")
    elif mode == "implicit":
        ab = op.banded(dt)
    else:
        raise ValidationError(f"unknown time-stepping mode {mode!r}")
    p = p0.values.copy()
    ts, ps, fs = [0.0], [p.copy()], []
    for k in range(1, n + 1):
        if mode == "implicit":
            # rebuild the update from face fluxes so the cell balance holds to round-off
            F = op.flux(solve_banded((1, 1), ab, op.mass * p + dt * src))
        else:
            F = op.flux(p)
        p = p - dt * np.diff(F) / op.mass
        if k % save_every == 0 or k == n:
            ts.append(k * dt)
            ps.append(p.copy())
            fs.append(F)
    return TimeSeries1D(np.array(ts), op.u, np.array(ps), op.sigma, op.du, np.array(fs))


def solve_full_2d(spec, grid, P0, dt, T, D0=1.0, bc="reflecting", save_every=1):
    """Implicit Euler for ``P_t = D0 Laplace P`` on the channel.

    Walls reflect; the lateral sections reflect (``bc="reflecting"``) or
    absorb (``bc="absorbing"``, ``P = 0``).  Returns ``(times, fields)``.
    """
    pts = _points(spec, grid)
    P0.check_grid(pts)
    lateral = {"reflecting": "neumann", "absorbing": "dirichlet"}.get(bc)
    if lateral is None:
        raise ValidationError(f"unknown boundary condition {bc!r} for the 2-D solver")
    op = build_operator(spec, pts, lateral)
    n = _steps(dt, T)
    M = op.mass.ravel()
    lu = splu((sp.diags(M) + dt * D0 * op.matrix).tocsc())
    P = P0.values.ravel().copy()
    times, fields = [0.0], [P0]
    for k in range(1, n + 1):
        P = lu.solve(M * P)
        if k % save_every == 0 or k == n:
            times.append(k * dt)
            fields.append(Field2D(P.reshape(pts.shape), pts, P0.units))
    return np.array(times), fields


def field_mass(P, spec, grid):
    """``int P sqrt|g| du dv`` with the finite-volume cell volumes."""
    pts = _points(spec, grid)
    P.check_grid(pts)
    uu, vv = pts.mesh()
    vol = np.sqrt(spec.metric_fields(uu, vv)[0]) * pts.wv[None, :] * pts.du
    return float(np.sum(P.values * vol))


def project_full(times, fields, spec, grid):
    """Effective concentration of every stamp of a 2-D run."""
    pts = _points(spec, grid)
    uu, vv = pts.mesh()
    vol = np.sqrt(spec.metric_fields(uu, vv)[0]) * pts.wv[None, :]
    s = vol.sum(axis=1)
    ps = []
    for P in fields:
        P.check_grid(pts)
        ps.append((P.values * vol).sum(axis=1) / s)
    return TimeSeries1D(np.asarray(times, dtype=float), pts.u, np.array(ps), s, pts.du)


def _panel_rule(a, b, panels, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    return edges, nodes, half[:, None] * w[None, :], x, w


def mfpt_effective(D_f, sigma, a, b, panels=256, order=8):
    """Mean first passage time from ``a`` (reflecting) to ``b`` (absorbing).

    ``D_f`` is the Fick-Jacobs coefficient; both profiles are spline
    interpolated.  Evaluates the double integral by nested composite
    Gauss-Legendre quadrature.
    """
    if not b > a:
        raise ValidationError("need a < b")
    edges, nodes, weights, x, w = _panel_rule(a, b, panels, order)
    s_nodes = sigma(nodes)
    d_nodes = D_f(nodes)
    if np.any(s_nodes <= 0) or np.any(d_nodes <= 0):
        raise ValidationError("D_f and sigma must be positive on [a, b]")
    cum = np.concatenate([[0.0], np.cumsum((s_nodes * weights).sum(axis=1))])
    # inner integral from each panel's left edge to each outer node
    left = edges[:-1, None, None]
    half = 0.5 * (nodes[:, :, None] - left)
    inner_nodes = left + half * (1.0 + x[None, None, :])
    partial = (sigma(inner_nodes) * w[None, None, :]).sum(axis=2) * half[:, :, 0]
    inner = cum[:-1, None] + partial
    return float(np.sum(inner / (d_nodes * s_nodes) * weights))


@dataclass
class MFPTResult:
    mean: float
    stderr: float
    n: int
    absorbed: int
    timed_out: int
    backend: str

    def to_json(self):
        return dict(self.__dict__)


def _particle_geometry(spec, table_size):
    base = spec
    if isinstance(base, Reparametrized):
        # same point set and sections; absorb at the image of b
        base = base.base
    if isinstance(base, Parametric2D):
        a, b = base.u_range
        u = np.linspace(a, b, table_size)
        table = np.column_stack([base.c(u), base.c.d1(u), base.w(u), base.w.d1(u)])
        geo = [kernels.GEO_PARAMETRIC, a, b, -0.5, 0.5, 0, 0.0]
        return base, np.array(geo, float), table
    if isinstance(base, ConjugatePair):
        code = {"strip": kernels.MAP_STRIP, "log-wedge": kernels.MAP_LOG, "power": kernels.MAP_POWER}[base.map_id]
        a, b = base.u_range
        geo = [kernels.GEO_CONFORMAL, a, b, base.v_range[0], base.v_range[1], code, base.map.alpha]
        return base, np.array(geo, float), np.zeros((2, 4))
    raise ValidationError(f"the particle oracle does not support {type(spec).__name__} channels")


def start_positions(spec, N, seed):
    """``N`` points uniform (in arc length) on the section ``u = a``."""
    rng = np.random.default_rng([int(seed), 0x5EC7])
    lo, hi = spec.v_bounds
    a = spec.u_range[0]
    if isinstance(spec, ConjugatePair) and spec.map_id == "power":
        # arc-length density is |G'(a + i v)|; rejection against its max
        vv = np.linspace(lo, hi, 2049)
        m = np.abs(spec.map.inverse_d1(a + 1j * vv))
        cap = 1.05 * m.max()
        out = np.empty(0)
        while out.size < N:
            v = rng.uniform(lo, hi, 2 * N)
            keep = rng.uniform(0.0, cap, 2 * N) < np.abs(spec.map.inverse_d1(a + 1j * v))
            out = np.concatenate([out, v[keep]])
        v = out[:N]
    else:
        v = rng.uniform(lo, hi, N)
    xy = spec.embedding(np.full(N, a), v)
    return xy[:, 0], xy[:, 1]


def brownian_mfpt(spec, N, dt, seed, D0=1.0, t_max=None, use_numba=None, table_size=4097):
    """Monte Carlo mean first passage time from ``u = a`` to ``u = b``.

    Walls and ``u = a`` reflect specularly; a Brownian-bridge test catches
    crossings of ``u = b`` within a step.  Deterministic for a fixed seed.
    """
    if N < 2:
        raise ValidationError("need at least two particles")
    base, geo, table = _particle_geometry(spec, table_size)
    x0, y0 = start_positions(base, N, seed)
    keys = kernels.particle_keys(seed, N)
    t_max = 1e6 * dt if t_max is None else float(t_max)
    times, status = kernels.particle_passage_times(geo, table, x0, y0, keys, D0, dt, t_max, use_numba)
    escaped = np.flatnonzero(status == kernels.ESCAPED)
    if escaped.size:
        raise GeometryError(f"{escaped.size} particles left the channel after reflection; reduce dt")
    done = status == kernels.ABSORBED
    sample = times[done]
    used = "numba" if (kernels.USE_NUMBA if use_numba is None else use_numba and kernels.HAVE_NUMBA) else "numpy"
    # statistics of the absorbed particles only; nan when too few finished
    mean = float(sample.mean()) if sample.size else float("nan")
    stderr = float(sample.std(ddof=1) / np.sqrt(sample.size)) if sample.size > 1 else float("nan")
    return MFPTResult(
        mean,
        stderr,
        int(N),
        int(done.sum()),
        int(N - done.sum()),
        used,
    )
