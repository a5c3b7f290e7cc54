"""Effective diffusion coefficients for infinitely fast transversal equilibration."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geom import _points, area, cross_section_density, flux_grad_u, sigma
from .profiles import ScalarProfile, fmt

CSV_COLUMNS = ("u", "sigma", "area", "G", "flux_grad_u", "D_inf", "D_fj")


def _check_D0(D0):
    D0 = float(D0)
    if not (np.isfinite(D0) and D0 > 0.0):
        raise ValidationError("D0 must be a positive number", "/D0")
    return D0


def effective_D_infinite(D0, flux, sigma_profile):
    """``D = D0 F_grad_u sigma``; pairs with the metric ``g = sigma^2``."""
    D0 = _check_D0(D0)
    flux.check_grid(sigma_profile)
    return flux.with_values(D0 * flux.values * sigma_profile.values, "D")


def fick_jacobs_D(D0, flux, sigma_profile):
    """Fick-Jacobs form ``D0 F_grad_u / sigma`` (equals ``D_inf / sigma^2``)."""
    D0 = _check_D0(D0)
    flux.check_grid(sigma_profile)
    return flux.with_values(D0 * flux.values / sigma_profile.values, "D")


def _section_mass(P, spec, grid):
    pts = _points(spec, grid)
    P.check_grid(pts)
    uu, vv = pts.mesh()
    vol = np.sqrt(spec.metric_fields(uu, vv)[0])
    return pts, pts.section_integral(P.values * vol), pts.section_integral(vol)


def effective_concentration(P, spec, grid):
    """Section mass of ``P`` divided by ``sigma``; a function of ``u``."""
    pts, mass, s = _section_mass(P, spec, grid)
    return ScalarProfile(pts.u, mass / s, P.units)


def literature_concentration(P, spec, grid):
    """Section mass of ``P`` per unit ``u`` (``sigma * p``); a density in ``u``."""
    pts, mass, _ = _section_mass(P, spec, grid)
    return ScalarProfile(pts.u, mass, P.units)


@dataclass(frozen=True, eq=False)
class EffectiveCoefficients:
    u: np.ndarray
    sigma: np.ndarray
    area: np.ndarray
    G: np.ndarray
    flux_grad_u: np.ndarray
    D_inf: np.ndarray
    D_fj: np.ndarray
    D0: float
    D_fin: np.ndarray | None = None
    J: float | None = None

    def profile(self, name):
        return ScalarProfile(self.u, getattr(self, name))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        cols = [getattr(self, c) for c in CSV_COLUMNS]
        for row in zip(*cols):
            writer.writerow([fmt(x) for x in row])
        return buf.getvalue()

    def summary(self):
        def stats(x):
            return {"min": float(np.min(x)), "max": float(np.max(x))}

        out = {"D0": self.D0, "n_u": int(self.u.size)}
        for name in CSV_COLUMNS[1:]:
            out[name] = stats(getattr(self, name))
        if self.J is not None:
            out["J"] = self.J
        return out


def compute_coefficients(spec, grid, D0=1.0, u=None):
    """Every infinite-rate profile of ``spec`` on one u-grid."""
    s = sigma(spec, grid, u)
    A = area(spec, grid, u)
    F = flux_grad_u(spec, grid, u)
    G = cross_section_density(F, A)
    D_inf = effective_D_infinite(D0, F, s)
    D_fj = fick_jacobs_D(D0, F, s)
    return EffectiveCoefficients(s.u, s.values, A.values, G.values, F.values, D_inf.values, D_fj.values, float(D0))
