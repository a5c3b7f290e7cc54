"""Parametric channels, their induced metric and section integrals.

A channel is a map ``x(u, v)`` from ``[a, b] x Omega`` into the plane or
space.  Sliding along ``u`` generates the channel; ``v`` labels points of
a cross section.  Everything downstream (coefficients, solvers, the
particle oracle) consumes the small interface defined by
:class:`ChannelSpec`:

* ``metric_fields(u, v)`` -- ``det g``, ``det g_v`` and ``div U`` on a
  reduced ``(u, v)`` rectangle;
* ``conductivity(u, v)`` -- the tensor ``sqrt|g| g^-1`` (times the polar
  Jacobian for tubes) used by the finite-volume solvers;
* ``v_bounds`` / ``v_measure`` -- the reduced section domain and its
  integration measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ValidationError
from .functions import FunctionExpr
from .maps import ConformalMap
from .profiles import CellGrid, Field2D, Grid2D, QuadratureGrid, ScalarProfile

__all__ = [
    "ChannelSpec",
    "Parametric2D",
    "Tube3D",
    "ConjugatePair",
    "Reparametrized",
    "MetricSample",
    "metric_at",
    "sigma",
    "volume",
    "volume_profile",
    "area",
    "flux_grad_u",
    "flux_scaled_U",
    "cross_section_density",
    "reparametrize",
    "volume_parametrization",
    "spec_from_json",
]


@dataclass(frozen=True)
class MetricSample:
    det_g: float
    det_gv: float
    div_U: float
    dxdu: np.ndarray
    dxdv: np.ndarray


def _check_range(u_range, path):
    try:
        a, b = (float(x) for x in u_range)
    except (TypeError, ValueError):
        raise ValidationError("range must be a pair of numbers", path) from None
    if not a < b:
        raise ValidationError(f"range must satisfy a < b, got [{a}, {b}]", path)
    return a, b


class ChannelSpec:
    """Common behaviour of all channel families."""

    type_name = ""
    dim = 2
    u_range = (0.0, 1.0)

    @property
    def v_bounds(self):
        return (-0.5, 0.5)

    def v_measure(self, v):
        return np.ones_like(np.asarray(v, dtype=float))

    @property
    def length(self):
        return self.u_range[1] - self.u_range[0]

    # subclasses implement: jacobian, metric_fields, conductivity,
    # embedding, reduced_jacobian, to_json

    def div_u_fd(self, u, v):
        """Centered-difference ``div U = 1/2 d/du log det g``."""
        eps = 1e-5 * self.length
        up = self.metric_fields(np.asarray(u) + eps, v)[0]
        dn = self.metric_fields(np.asarray(u) - eps, v)[0]
        return 0.25 * (np.log(up) - np.log(dn)) / eps

    def exact_natural(self, u, v, bc):
        """Closed-form natural projection with lateral data ``bc``, if known."""
        return None

    def in_domain(self, u, v, rtol=1e-12):
        a, b = self.u_range
        lo, hi = self.v_bounds
        tol_u = rtol * max(1.0, abs(a), abs(b))
        tol_v = rtol * max(1.0, abs(lo), abs(hi))
        return (a - tol_u <= u <= b + tol_u) and (lo - tol_v <= v <= hi + tol_v)

    def __eq__(self, other):
        return type(self) is type(other) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self.to_json()))


class Parametric2D(ChannelSpec):
    """Planar channel ``x(u, v) = (u, c(u) + v w(u))``, ``v`` in ``[-1/2, 1/2]``."""

    type_name = "parametric2d"

    def __init__(self, c, w, u_range=(0.0, 1.0)):
        self.c = c if isinstance(c, FunctionExpr) else FunctionExpr.constant(c)
        self.w = w if isinstance(w, FunctionExpr) else FunctionExpr.constant(w)
        self.u_range = _check_range(u_range, "/u_range")
        wmin = self.w.min_on(*self.u_range)
        if not wmin > 0.0:
            raise ValidationError(f"width must be positive on the u-range (min {wmin:g})", "/w")

    def jacobian(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        dxdu = np.stack([np.ones_like(u), self.c.d1(u) + v * self.w.d1(u)], axis=-1)
        dxdv = np.stack([np.zeros_like(u), self.w(u) + 0.0 * v], axis=-1)
        return dxdu, dxdv[..., None]

    def metric_fields(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        w = self.w(u)
        det = w * w
        return det, det.copy(), self.w.d1(u) / w

    def conductivity(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        w = self.w(u)
        q = self.c.d1(u) + v * self.w.d1(u)
        return w, -q, (1.0 + q * q) / w

    def embedding(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        return np.stack([u, self.c(u) + v * self.w(u)], axis=-1)

    reduced_jacobian = jacobian

    def is_straight(self):
        def const(f):
            return f.kind == "polynomial" and all(x == 0.0 for x in f.coef[1:])

        return const(self.c) and const(self.w)

    def exact_natural(self, u, v, bc):
        if not self.is_straight():
            return None
        a, b = self.u_range
        return bc[0] + (bc[1] - bc[0]) * (np.asarray(u) - a) / (b - a) + 0.0 * np.asarray(v)

    def to_json(self):
        return {"type": self.type_name, "c": self.c.to_json(), "w": self.w.to_json(), "u_range": list(self.u_range)}


class Tube3D(ChannelSpec):
    """Solid of revolution ``x = (u, R(u) v1, R(u) v2)`` over the unit disk.

    The reduced rectangle uses the radial coordinate ``s = |v|`` in
    ``[0, 1]``; the angle is integrated out (``v_measure = 2 pi s``).
    """

    type_name = "tube3d"
    dim = 3

    def __init__(self, R, u_range=(0.0, 1.0)):
        self.R = R if isinstance(R, FunctionExpr) else FunctionExpr.constant(R)
        self.u_range = _check_range(u_range, "/u_range")
        rmin = self.R.min_on(*self.u_range)
        if not rmin > 0.0:
            raise ValidationError(f"radius must be positive on the u-range (min {rmin:g})", "/R")

    @property
    def v_bounds(self):
        return (0.0, 1.0)

    def v_measure(self, v):
        return 2.0 * np.pi * np.asarray(v, dtype=float)

    def in_domain(self, u, v, rtol=1e-12):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        a, b = self.u_range
        tol = rtol * max(1.0, abs(a), abs(b))
        if v.size == 1:
            s = abs(float(v[0]))
        elif v.size == 2:
            s = float(np.hypot(v[0], v[1]))
        else:
            return False
        return (a - tol <= u <= b + tol) and s <= 1.0 + rtol

    def jacobian(self, u, v):
        """Embedding Jacobian at ``u`` and Cartesian disk point ``v = (v1, v2)``."""
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        v1, v2 = v[..., 0], v[..., 1]
        R, dR = self.R(u), self.R.d1(u)
        one, zero = np.ones_like(v1 * R), np.zeros_like(v1 * R)
        dxdu = np.stack([one, dR * v1, dR * v2], axis=-1)
        dxdv = np.stack(
            [np.stack([zero, R + zero, zero], axis=-1), np.stack([zero, zero, R + zero], axis=-1)], axis=-1
        )
        return dxdu, dxdv

    def metric_fields(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        R = self.R(u)
        det = R**4
        return det, det.copy(), 2.0 * self.R.d1(u) / R

    def conductivity(self, u, s):
        u, s = np.broadcast_arrays(np.asarray(u, float), np.asarray(s, float))
        R, dR = self.R(u), self.R.d1(u)
        f = 2.0 * np.pi * s
        return f * R * R, -f * R * dR * s, f * (1.0 + dR * dR * s * s)

    def embedding(self, u, s):
        u, s = np.broadcast_arrays(np.asarray(u, float), np.asarray(s, float))
        return np.stack([u, s * self.R(u), np.zeros_like(u)], axis=-1)

    def reduced_jacobian(self, u, s):
        u, s = np.broadcast_arrays(np.asarray(u, float), np.asarray(s, float))
        R, dR = self.R(u), self.R.d1(u)
        zero = np.zeros_like(u)
        dxdu = np.stack([np.ones_like(u), s * dR, zero], axis=-1)
        dxds = np.stack([zero, R, zero], axis=-1)
        return dxdu, dxds[..., None]

    def exact_natural(self, u, v, bc):
        R = self.R
        if not (R.kind == "polynomial" and all(x == 0.0 for x in R.coef[1:])):
            return None
        a, b = self.u_range
        return bc[0] + (bc[1] - bc[0]) * (np.asarray(u) - a) / (b - a) + 0.0 * np.asarray(v)

    def to_json(self):
        return {"type": self.type_name, "R": self.R.to_json(), "u_range": list(self.u_range)}


class ConjugatePair(ChannelSpec):
    """Planar channel ``{v1 <= v <= v2}`` for a conjugate pair ``u + i v = F(z)``.

    Parametrized by the inverse map, ``z = G(u + i v)``.
    """

    type_name = "conjugate"

    def __init__(self, map_id, v_range, u_range, alpha=1.0):
        self.map = map_id if isinstance(map_id, ConformalMap) else ConformalMap(map_id, float(alpha))
        self.v_range = _check_range(v_range, "/v_range")
        self.u_range = _check_range(u_range, "/u_range")
        self.map.check_rectangle(self.u_range, self.v_range)

    @property
    def map_id(self):
        return self.map.map_id

    @property
    def v_bounds(self):
        return self.v_range

    @property
    def delta_v(self):
        return self.v_range[1] - self.v_range[0]

    def _zeta(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        return u + 1j * v

    def jacobian(self, u, v):
        dG = self.map.inverse_d1(self._zeta(u, v))
        dxdu = np.stack([dG.real, dG.imag], axis=-1)
        dxdv = np.stack([-dG.imag, dG.real], axis=-1)
        return dxdu, dxdv[..., None]

    reduced_jacobian = jacobian

    def metric_fields(self, u, v):
        zeta = self._zeta(u, v)
        dG = self.map.inverse_d1(zeta)
        m2 = (dG * np.conj(dG)).real
        div = 2.0 * (self.map.inverse_d2(zeta) / dG).real
        return m2 * m2, m2, div

    def conductivity(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        # conformal coordinates: sqrt|g| g^-1 is the identity
        return np.ones_like(u), np.zeros_like(u), np.ones_like(u)

    def embedding(self, u, v):
        z = self.map.inverse(self._zeta(u, v))
        return np.stack([z.real, z.imag], axis=-1)

    def exact_natural(self, u, v, bc):
        a, b = self.u_range
        return bc[0] + (bc[1] - bc[0]) * (np.asarray(u) - a) / (b - a) + 0.0 * np.asarray(v)

    def to_json(self):
        doc = {"type": self.type_name, "map": self.map_id, "v_range": list(self.v_range), "u_range": list(self.u_range)}
        if self.map_id == "power":
            doc["alpha"] = self.map.alpha
        return doc


class Reparametrized(ChannelSpec):
    """The channel of ``base`` relabelled by ``t = f(u)`` (``f' > 0``)."""

    type_name = "reparametrized"

    def __init__(self, base, f):
        self.base = base
        self.f = f
        a, b = base.u_range
        dmin = f.derivative(np.linspace(a, b, 4097), 1).min()
        if not dmin > 0.0:
            raise ValidationError(f"reparametrization must be strictly increasing (min f' = {dmin:g})", "/f")
        self.u_range = (float(f(a)), float(f(b)))
        self.dim = base.dim

    @property
    def v_bounds(self):
        return self.base.v_bounds

    def v_measure(self, v):
        return self.base.v_measure(v)

    def in_domain(self, u, v, rtol=1e-12):
        lo, hi = self.u_range
        tol = rtol * max(1.0, abs(lo), abs(hi))
        if not lo - tol <= u <= hi + tol:
            return False
        return self.base.in_domain(float(self.base_u(min(max(u, lo), hi))), v, rtol)

    def base_u(self, t):
        a, b = self.base.u_range
        lo, hi = self.u_range
        return self.f.inverse(np.clip(t, lo, hi), a, b)

    def jacobian(self, t, v):
        u = self.base_u(t)
        dxdu, dxdv = self.base.jacobian(u, v)
        return dxdu / np.asarray(self.f.d1(u))[..., None], dxdv

    def reduced_jacobian(self, t, v):
        u = self.base_u(t)
        dxdu, dxdv = self.base.reduced_jacobian(u, v)
        return dxdu / np.asarray(self.f.d1(u))[..., None], dxdv

    def metric_fields(self, t, v):
        u = self.base_u(t)
        det_g, det_gv, div = self.base.metric_fields(u, v)
        fp, fpp = self.f.d1(u), self.f.d2(u)
        return det_g / fp**2, det_gv, (div - fpp / fp) / fp

    def conductivity(self, t, v):
        u = self.base_u(t)
        kuu, kuv, kvv = self.base.conductivity(u, v)
        fp = self.f.d1(u)
        return kuu * fp, kuv + 0.0 * fp, kvv / fp

    def embedding(self, t, v):
        return self.base.embedding(self.base_u(t), v)

    def exact_natural(self, t, v, bc):
        return self.base.exact_natural(self.base_u(t), v, bc)

    def to_json(self):
        return {"type": self.type_name, "base": self.base.to_json(), "f": self.f.to_json()}


def spec_from_json(doc, path=""):
    """Build a :class:`ChannelSpec` from its JSON object."""
    if not isinstance(doc, dict):
        raise ValidationError("channel must be a JSON object", path)
    kind = doc.get("type")

    def need(key):
        if key not in doc:
            raise ValidationError(f"missing field {key!r}", path)
        return doc[key]

    try:
        if kind == "parametric2d":
            c = FunctionExpr.from_json(need("c"), "/c")
            w = FunctionExpr.from_json(need("w"), "/w")
            return Parametric2D(c, w, need("u_range"))
        if kind == "tube3d":
            return Tube3D(FunctionExpr.from_json(need("R"), "/R"), need("u_range"))
        if kind == "conjugate":
            return ConjugatePair(need("map"), need("v_range"), need("u_range"), doc.get("alpha", 1.0))
        if kind == "reparametrized":
            base = spec_from_json(need("base"), "/base")
            return Reparametrized(base, FunctionExpr.from_json(need("f"), "/f"))
    except ValidationError as exc:
        if exc.path.startswith(path) and path and exc.path != path:
            raise
        raise ValidationError(exc.message, path + exc.path) from None
    raise ValidationError(f"unknown channel type {kind!r}", f"{path}/type")


# -- pointwise metric ---------------------------------------------------------


def metric_at(spec, u, v):
    """Metric data at a single parameter point ``(u, v)``.

    ``det g`` and ``det g_v`` come from the Gram matrix of the embedding
    Jacobian; ``div U`` from the analytic derivative of ``log det g``.
    """
    if not spec.in_domain(float(u), v):
        raise DomainError(f"point (u={u}, v={v}) outside the channel parameter domain")
    dxdu, dxdv = spec.jacobian(float(u), np.asarray(v, dtype=float))
    cols = np.concatenate([dxdu[..., None], dxdv], axis=-1)
    gram = cols.T @ cols
    gv = dxdv.T @ dxdv
    if isinstance(spec, Tube3D):
        _, _, div = spec.metric_fields(float(u), 0.0)
    else:
        _, _, div = spec.metric_fields(float(u), float(np.asarray(v).ravel()[0]))
    return MetricSample(float(np.linalg.det(gram)), float(np.linalg.det(gv)), float(div), dxdu, dxdv)


# -- section integrals --------------------------------------------------------


def _points(spec, grid, u=None):
    if isinstance(grid, Grid2D):
        return grid
    if isinstance(grid, CellGrid):
        return grid.points(spec)
    if isinstance(grid, QuadratureGrid):
        return grid.points(spec, u)
    raise TypeError(f"unsupported grid {grid!r}")


def _integrate(pts, density, what):
    if not np.all(np.isfinite(density)):
        i, j = np.argwhere(~np.isfinite(density))[0]
        raise NumericError(f"non-finite {what} integrand", location=(float(pts.u[i]), float(pts.v[j])))
    return pts.section_integral(density)


def sigma(spec, grid, u=None):
    """Volume density ``d nu/du = int_Omega sqrt(det g) dv``."""
    pts = _points(spec, grid, u)
    uu, vv = pts.mesh()
    det_g = spec.metric_fields(uu, vv)[0]
    return ScalarProfile(pts.u, _integrate(pts, np.sqrt(det_g), "volume"), "volume/u")


def area(spec, grid, u=None):
    """Cross-section area ``A(u) = int_Omega sqrt(det g_v) dv``."""
    pts = _points(spec, grid, u)
    uu, vv = pts.mesh()
    det_gv = spec.metric_fields(uu, vv)[1]
    return ScalarProfile(pts.u, _integrate(pts, np.sqrt(det_gv), "area"), "area")


def flux_grad_u(spec, grid, u=None):
    """Flux of ``grad u`` across sections: ``int det g_v / sqrt(det g) dv``."""
    pts = _points(spec, grid, u)
    uu, vv = pts.mesh()
    det_g, det_gv, _ = spec.metric_fields(uu, vv)
    return ScalarProfile(pts.u, _integrate(pts, det_gv / np.sqrt(det_g), "flux"), "area/u")


def flux_scaled_U(spec, grid, lam):
    """Flux of ``lam * U`` across sections, ``int lam sqrt(det g) dv``.

    ``lam`` is a :class:`Field2D` on ``grid``.
    """
    pts = _points(spec, grid)
    lam.check_grid(pts)
    uu, vv = pts.mesh()
    det_g = spec.metric_fields(uu, vv)[0]
    return ScalarProfile(pts.u, _integrate(pts, lam.values * np.sqrt(det_g), "scaled flux"), "volume/u")


def section_divergence_integral(spec, grid, u=None):
    """``int_Omega div U sqrt(det g) dv``, the second derivative of volume."""
    pts = _points(spec, grid, u)
    uu, vv = pts.mesh()
    det_g, _, div = spec.metric_fields(uu, vv)
    return ScalarProfile(pts.u, _integrate(pts, div * np.sqrt(det_g), "divergence"), "volume/u^2")


def cross_section_density(flux, area_profile):
    """Average of ``|grad u|`` over each section, ``G = F_grad_u / A``."""
    flux.check_grid(area_profile)
    return flux.with_values(flux.values / area_profile.values, "1/u")


def volume_profile(spec, grid):
    """``nu`` at the uniform u-nodes of ``grid`` by cumulative trapezoid."""
    s = sigma(spec, grid)
    steps = 0.5 * (s.values[1:] + s.values[:-1]) * np.diff(s.u)
    return s.with_values(np.concatenate([[0.0], np.cumsum(steps)]), "volume")


def volume(spec, grid, u):
    """Volume of the channel piece between ``a`` and ``u``.

    Composite trapezoid with ``grid.n_u - 1`` uniform panels on ``[a, u]``.
    """
    a, b = spec.u_range
    tol = 1e-12 * max(1.0, abs(a), abs(b))
    if not (a - tol <= u <= b + tol):
        raise DomainError(f"u={u} outside [{a}, {b}]")
    if u <= a:
        return 0.0
    nodes = np.linspace(a, min(u, b), grid.n_u)
    s = sigma(spec, grid, nodes).values
    return float(np.sum(0.5 * (s[1:] + s[:-1]) * np.diff(nodes)))


def reparametrize(spec, f):
    """Relabel the sections of ``spec`` by ``t = f(u)``."""
    if isinstance(f, FunctionExpr) and f.kind == "polynomial" and f.coef == (0.0, 1.0):
        return spec
    return Reparametrized(spec, f)


def volume_parametrization(spec, grid, panels_order=8):
    """The volume function ``nu(u)`` as a Hermite-tabulated :class:`FunctionExpr`.

    Knot values are integrated with Gauss-Legendre on every panel and knot
    slopes are ``sigma`` itself, so ``f'`` equals ``sigma`` at the knots.
    """
    pts = grid.points(spec)
    u = pts.u
    x, w = np.polynomial.legendre.leggauss(panels_order)
    mid, half = 0.5 * (u[1:] + u[:-1]), 0.5 * np.diff(u)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    s_nodes = sigma(spec, grid, nodes).values.reshape(mid.size, panels_order)
    increments = (s_nodes * w[None, :]).sum(axis=1) * half
    nu = np.concatenate([[0.0], np.cumsum(increments)])
    return FunctionExpr.tabulated(u, nu, sigma(spec, grid).values)


def profiles(spec, grid, u=None):
    """All geometric profiles on a common u-grid."""
    s = sigma(spec, grid, u)
    A = area(spec, grid, u)
    F = flux_grad_u(spec, grid, u)
    return {"sigma": s, "area": A, "flux_grad_u": F, "G": cross_section_density(F, A)}


def field_on(spec, grid, fn, units=""):
    """Sample ``fn(u, v)`` on a grid as a :class:`Field2D`."""
    return Field2D.from_function(fn, _points(spec, grid), units)
