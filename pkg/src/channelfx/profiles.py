"""Sampled data containers: 1-D profiles, 2-D fields and their grids."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GridMismatchError, ValidationError


def fmt(x):
    """Format a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class ScalarProfile:
    """A function of ``u`` sampled on an increasing grid."""

    u: np.ndarray
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if u.ndim != 1 or u.shape != values.shape:
            raise GridMismatchError(f"profile grid {u.shape} and values {values.shape} differ")
        if u.size > 1 and np.any(np.diff(u) <= 0):
            raise ValidationError("profile grid must be strictly increasing")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.u.size

    def _interp(self):
        spline = self.__dict__.get("_spline")
        if spline is None:
            spline = CubicSpline(self.u, self.values) if self.u.size >= 4 else None
            object.__setattr__(self, "_spline", spline)
        return spline

    def __call__(self, u):
        spline = self._interp()
        if spline is None:
            return np.interp(u, self.u, self.values)
        return spline(u)

    def derivative(self, u=None):
        """Spline derivative, at the nodes unless ``u`` is given."""
        spline = self._interp()
        if spline is None:
            raise ValidationError("derivative needs at least 4 samples")
        return spline(self.u if u is None else u, 1)

    def same_grid(self, other, rtol=1e-12):
        return self.u.shape == other.u.shape and np.allclose(self.u, other.u, rtol=rtol, atol=0.0)

    def check_grid(self, *others):
        for other in others:
            if not self.same_grid(other):
                raise GridMismatchError("profiles live on different u-grids")

    def with_values(self, values, units=None):
        return ScalarProfile(self.u, values, self.units if units is None else units)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["u", "value"])
        for u, v in zip(self.u, self.values):
            writer.writerow([fmt(u), fmt(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, units=""):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["u", "value"]:
            raise ValidationError("profile CSV must start with the header 'u,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], units)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Concrete sample points of a channel's parameter rectangle.

    ``wv`` are integration weights over the cross-section domain (they
    include the polar Jacobian for tubes), so a section integral of a
    density ``f`` is ``f @ wv``.  ``kind`` is ``"quadrature"`` (uniform
    u-nodes incl. endpoints, Gauss-Legendre in v) or ``"cells"``
    (cell centres of a uniform finite-volume grid).
    """

    kind: str
    u: np.ndarray
    v: np.ndarray
    wv: np.ndarray
    u_range: tuple
    v_range: tuple

    @property
    def shape(self):
        return (self.u.size, self.v.size)

    @property
    def du(self):
        return (self.u_range[1] - self.u_range[0]) / (self.u.size if self.kind == "cells" else self.u.size - 1)

    @property
    def dv(self):
        return (self.v_range[1] - self.v_range[0]) / self.v.size

    def mesh(self):
        return np.meshgrid(self.u, self.v, indexing="ij")

    def section_integral(self, f):
        """Integrate a ``(n_u, n_v)`` density over each cross section."""
        return np.asarray(f) @ self.wv

    def matches(self, other):
        return (
            self.kind == other.kind
            and self.shape == other.shape
            and np.allclose(self.u, other.u, rtol=1e-13, atol=0.0)
            and np.allclose(self.v, other.v, rtol=1e-13, atol=1e-15)
        )


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform nodes in ``u`` (endpoints included) times Gauss-Legendre in ``v``."""

    n_u: int = 257
    n_v: int = 16

    def __post_init__(self):
        if self.n_u < 2 or self.n_v < 2:
            raise ValidationError("quadrature grid needs n_u >= 2 and n_v >= 2")

    def points(self, spec, u=None):
        """Materialize on ``spec``; ``u`` overrides the uniform u-nodes."""
        a, b = spec.u_range
        lo, hi = spec.v_bounds
        x, w = np.polynomial.legendre.leggauss(self.n_v)
        v = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wv = 0.5 * (hi - lo) * w * spec.v_measure(v)
        uu = np.linspace(a, b, self.n_u) if u is None else np.atleast_1d(np.asarray(u, dtype=float))
        return Grid2D("quadrature", uu, v, wv, (a, b), (lo, hi))


@dataclass(frozen=True)
class CellGrid:
    """Cell-centred finite-volume grid of ``n_u x n_v`` uniform cells."""

    n_u: int = 64
    n_v: int = 32

    def __post_init__(self):
        if self.n_u < 2 or self.n_v < 2:
            raise ValidationError("cell grid needs n_u >= 2 and n_v >= 2")

    def points(self, spec):
        a, b = spec.u_range
        lo, hi = spec.v_bounds
        du = (b - a) / self.n_u
        dv = (hi - lo) / self.n_v
        u = a + du * (np.arange(self.n_u) + 0.5)
        v = lo + dv * (np.arange(self.n_v) + 0.5)
        wv = dv * spec.v_measure(v)
        return Grid2D("cells", u, v, wv, (a, b), (lo, hi))

    @classmethod
    def parse(cls, text):
        """Parse ``"64x32"``."""
        try:
            nu, nv = (int(t) for t in str(text).lower().split("x"))
        except ValueError:
            raise ValidationError(f"grid must look like NUxNV, got {text!r}") from None
        return cls(nu, nv)


@dataclass(frozen=True, eq=False)
class Field2D:
    """Scalar field sampled on a :class:`Grid2D`.

    ``boundary`` optionally carries the constant values on the lateral
    sections ``u = a`` and ``u = b`` (Dirichlet data of a harmonic solve).
    """

    values: np.ndarray
    grid: Grid2D
    units: str = ""
    boundary: tuple | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn, grid, units="", boundary=None):
        uu, vv = grid.mesh()
        return cls(np.broadcast_to(fn(uu, vv), grid.shape).astype(float), grid, units, boundary)

    def check_grid(self, grid):
        if not self.grid.matches(grid):
            raise GridMismatchError("field sampled on a different grid")

    def to_csv(self):
        """One row per u-node, one column per v-node."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["u"] + [f"v={fmt(v)}" for v in self.grid.v])
        for u, row in zip(self.grid.u, self.values):
            writer.writerow([fmt(u)] + [fmt(x) for x in row])
        return buf.getvalue()
