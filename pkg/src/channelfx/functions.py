"""Scalar functions of the channel coordinate ``u``.

Centre lines, widths, radii and reparametrizations are all instances of
:class:`FunctionExpr`: a tagged union of polynomial, sinusoid and
tabulated (spline) functions that can be evaluated and differentiated
twice, and round-tripped through JSON.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import DomainError, ValidationError

KINDS = ("polynomial", "sinusoid", "tabulated")


@dataclass(frozen=True, eq=False)
class FunctionExpr:
    """A twice differentiable scalar function of one variable.

    Build instances through :meth:`polynomial`, :meth:`sinusoid`,
    :meth:`tabulated` or :meth:`from_json`.
    """

    kind: str
    coef: tuple = ()
    a0: float = 0.0
    amp: float = 0.0
    k: float = 0.0
    phase: float = 0.0
    knots: tuple = ()
    values: tuple = ()
    slopes: tuple | None = None
    _spline: object = field(default=None, repr=False, compare=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def polynomial(cls, coef):
        """Polynomial with coefficients in increasing degree order."""
        coef = tuple(float(c) for c in np.atleast_1d(coef))
        if not coef:
            raise ValidationError("polynomial needs at least one coefficient")
        return cls("polynomial", coef=coef)

    @classmethod
    def constant(cls, value):
        return cls.polynomial([value])

    @classmethod
    def sinusoid(cls, a0, amp, k, phase=0.0):
        """``a0 + amp * sin(k u + phase)``."""
        return cls("sinusoid", a0=float(a0), amp=float(amp), k=float(k), phase=float(phase))

    @classmethod
    def tabulated(cls, u, values, slopes=None):
        """Cubic spline through ``(u, values)``.

        With ``slopes`` the spline is the cubic Hermite interpolant, so the
        derivative at each knot is exactly the given slope.
        """
        u = np.asarray(u, dtype=float)
        values = np.asarray(values, dtype=float)
        if u.ndim != 1 or u.shape != values.shape:
            raise ValidationError("tabulated samples must be 1-D arrays of equal length")
        if u.size < 4:
            raise ValidationError("tabulated function needs at least 4 samples")
        if np.any(np.diff(u) <= 0):
            raise ValidationError("tabulated u-samples must be strictly increasing")
        if slopes is None:
            spline = CubicSpline(u, values)
        else:
            slopes = np.asarray(slopes, dtype=float)
            if slopes.shape != u.shape:
                raise ValidationError("slopes must match the u-samples")
            spline = CubicHermiteSpline(u, values, slopes)
            slopes = tuple(slopes.tolist())
        return cls(
            "tabulated",
            knots=tuple(u.tolist()),
            values=tuple(values.tolist()),
            slopes=slopes,
            _spline=spline,
        )

    # -- evaluation -------------------------------------------------------

    def derivative(self, u, order=1):
        """Value (``order=0``) or derivative of order 1 or 2 at ``u``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "polynomial":
            c = np.asarray(self.coef)
            if order:
                c = P.polyder(c, order)
            return P.polyval(u, c) + 0.0 * u
        if self.kind == "sinusoid":
            arg = self.k * u + self.phase
            if order == 0:
                return self.a0 + self.amp * np.sin(arg)
            if order == 1:
                return self.amp * self.k * np.cos(arg)
            if order == 2:
                return -self.amp * self.k**2 * np.sin(arg)
            raise ValueError("only derivatives up to order 2 are available")
        if order > 2:
            raise ValueError("only derivatives up to order 2 are available")
        return self._spline(u, order)

    def __call__(self, u):
        return self.derivative(u, 0)

    def d1(self, u):
        return self.derivative(u, 1)

    def d2(self, u):
        return self.derivative(u, 2)

    def inverse(self, y, lo, hi, tol=1e-14, max_iter=100):
        """Solve ``f(u) = y`` for ``u`` in ``[lo, hi]`` (``f`` increasing).

        Safeguarded Newton: a bisection bracket is kept alongside each
        Newton step, so convergence never depends on the starting guess.
        """
        y = np.asarray(y, dtype=float)
        flo, fhi = float(self(lo)), float(self(hi))
        span = fhi - flo
        scale = max(abs(flo), abs(fhi), 1.0)
        if np.any(y < flo - 1e-12 * scale) or np.any(y > fhi + 1e-12 * scale):
            raise DomainError(f"value outside the range [{flo}, {fhi}] of the function")
        a = np.full(y.shape, float(lo))
        b = np.full(y.shape, float(hi))
        x = lo + (hi - lo) * np.clip((y - flo) / span, 0.0, 1.0)
        for _ in range(max_iter):
            r = self(x) - y
            a = np.where(r < 0, x, a)
            b = np.where(r > 0, x, b)
            d = self.d1(x)
            step = np.where(d > 0, r / np.where(d > 0, d, 1.0), 0.0)
            xn = x - step
            bad = (xn <= a) | (xn >= b) | (d <= 0)
            xn = np.where(bad, 0.5 * (a + b), xn)
            done = np.abs(xn - x) <= tol * max(1.0, abs(hi - lo))
            x = xn
            if np.all(done):
                break
        return x

    # -- checks -----------------------------------------------------------

    def min_on(self, lo, hi, n=2049):
        """Minimum over a dense sample of ``[lo, hi]`` including the knots."""
        u = np.linspace(lo, hi, n)
        if self.kind == "tabulated":
            knots = np.asarray(self.knots)
            u = np.concatenate([u, knots[(knots >= lo) & (knots <= hi)]])
        return float(np.min(self(u)))

    # -- serialization ----------------------------------------------------

    def to_json(self):
        if self.kind == "polynomial":
            return {"kind": "polynomial", "coef": list(self.coef)}
        if self.kind == "sinusoid":
            return {"kind": "sinusoid", "a0": self.a0, "amp": self.amp, "k": self.k, "phase": self.phase}
        doc = {"kind": "tabulated", "u": list(self.knots), "values": list(self.values)}
        if self.slopes is not None:
            doc["slopes"] = list(self.slopes)
        return doc

    @classmethod
    def from_json(cls, doc, path=""):
        if not isinstance(doc, dict):
            raise ValidationError("function must be a JSON object", path)
        kind = doc.get("kind")
        try:
            if kind == "polynomial":
                return cls.polynomial(doc["coef"])
            if kind == "sinusoid":
                return cls.sinusoid(doc["a0"], doc["amp"], doc["k"], doc.get("phase", 0.0))
            if kind == "tabulated":
                return cls.tabulated(doc["u"], doc["values"], doc.get("slopes"))
        except KeyError as exc:
            raise ValidationError(f"missing field {exc.args[0]!r}", path) from None
        except ValidationError as exc:
            raise ValidationError(str(exc), path) from None
        raise ValidationError(f"unknown function kind {kind!r}; expected one of {KINDS}", f"{path}/kind")
