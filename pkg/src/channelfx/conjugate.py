"""Closed-form reference profiles for conjugate-pair channels.

For ``u + i v = F(z)`` the channel is ``{v1 <= v <= v2, a <= u <= b}``;
``|grad v| = |F'(z)| = 1 / |G'(zeta)|`` with ``G`` the inverse map.  The
section integrals of powers of ``|G'|`` are evaluated in closed form
(elementary functions, or a Gauss hypergeometric antiderivative for the
power map), so nothing here shares code with the quadrature in
:mod:`channelfx.geom`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import hyp2f1

from .errors import ValidationError
from .geom import ConjugatePair
from .profiles import ScalarProfile


def _as_spec(spec):
    if not isinstance(spec, ConjugatePair):
        raise ValidationError("expected a conjugate-pair channel")
    return spec


def _u_nodes(spec, u, n_u):
    if u is None:
        return np.linspace(*spec.u_range, n_u)
    return np.atleast_1d(np.asarray(u, dtype=float))


def _power_integral(u, v1, v2, q):
    """``int_{v1}^{v2} (u^2 + v^2)^q dv`` for each ``u``."""

    def prim(V):
        out = np.empty_like(u)
        zero = u == 0.0
        if np.any(~zero):
            uz = np.abs(u[~zero])
            out[~zero] = V * uz ** (2 * q) * hyp2f1(-q, 0.5, 1.5, -(V / uz) ** 2)
        if np.any(zero):
            e = 2 * q + 1
            if e == 0.0:
                out[zero] = np.sign(V) * np.log(abs(V)) if V != 0.0 else -np.inf
            else:
                out[zero] = np.sign(V) * abs(V) ** e / e
        return out

    if np.any(u == 0.0) and v1 <= 0.0 <= v2 and 2 * q + 1 <= 0:
        raise ValidationError("section integral diverges at the map's branch point")
    return prim(v2) - prim(v1)


def _moment(spec, u, k):
    """``int |G'(u + i v)|^k dv`` over the section at each ``u``."""
    v1, v2 = spec.v_range
    dv = v2 - v1
    m = spec.map
    if m.map_id == "strip":
        return np.full_like(u, dv)
    if m.map_id == "log-wedge":
        return np.exp(k * u) * dv
    alpha = m.alpha
    p = 1.0 / alpha - 1.0
    if alpha == 2.0 and k == 2:
        # (u^2 + v^2)^(-1/2) / 4
        au = np.abs(u)
        return 0.25 * (np.arcsinh(v2 / au) - np.arcsinh(v1 / au))
    return alpha ** (-k) * _power_integral(u, v1, v2, 0.5 * k * p)


def conjugate_J(spec, D0=1.0):
    """Stationary flux ``D0 (v2 - v1)`` of the natural projection."""
    spec = _as_spec(spec)
    return float(D0) * spec.delta_v


def conjugate_sigma(spec, u=None, n_u=257):
    spec = _as_spec(spec)
    u = _u_nodes(spec, u, n_u)
    return ScalarProfile(u, _moment(spec, u, 2), "volume/u")


def conjugate_area(spec, u=None, n_u=257):
    spec = _as_spec(spec)
    u = _u_nodes(spec, u, n_u)
    return ScalarProfile(u, _moment(spec, u, 1), "area")


def conjugate_D(spec, D0=1.0, u=None, n_u=257):
    """``D = J sigma``; the finite- and infinite-rate coefficients coincide here."""
    s = conjugate_sigma(spec, u, n_u)
    return s.with_values(conjugate_J(spec, D0) * s.values, "D")
