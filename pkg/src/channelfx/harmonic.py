"""Natural projection function and the finite-transversal-rate coefficient.

The Laplace-Beltrami operator is discretized by cell-centred finite
volumes on the reduced ``(u, v)`` rectangle.  With ``K = sqrt|g| g^-1``
(see :meth:`ChannelSpec.conductivity`) the scheme is the Hessian of the
discrete energy

    E(phi) = 1/2 sum_faces T (jump phi)^2 + sum_vertices K^uv d_u phi d_v phi dA

so the matrix is symmetric, rows of interior cells sum to zero, and every
row is the divergence of explicit face fluxes.  Walls ``v = const`` carry
no flux; the lateral sections ``u = a`` and ``u = b`` carry Dirichlet data
(or no flux, for the time-dependent solver).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import (
    AssemblyError,
    GridMismatchError,
    ReductionError,
    SingularityError,
    SolverError,
    ValidationError,
)
from .geom import _points, flux_grad_u, flux_scaled_U, sigma
from .profiles import CellGrid, Field2D, Grid2D, ScalarProfile

__all__ = [
    "LaplaceSystem",
    "SolveReport",
    "assemble_laplace",
    "solve_harmonic",
    "flux_J",
    "face_flux_J",
    "rho_profile",
    "lambda_field",
    "effective_D_finite",
    "natural_field",
    "natural_projection",
]

WALL = "wall-neumann"
LATERAL = "lateral-dirichlet"
REFLECTING = "lateral-neumann"


@dataclass(frozen=True, eq=False)
class Operator:
    """Conservative diffusion operator on a cell grid."""

    grid: Grid2D
    matrix: sp.csr_matrix
    t_u: np.ndarray  # (n_u + 1, n_v) u-face transmissibilities, boundary faces included
    t_v: np.ndarray  # (n_u, n_v - 1) interior v-faces
    cross: np.ndarray  # (n_u - 1, n_v - 1) K^uv at interior vertices
    mass: np.ndarray  # (n_u, n_v) cell volumes
    lateral: str
    bc_a: np.ndarray  # rhs column multiplying h_a
    bc_b: np.ndarray


@dataclass(frozen=True, eq=False)
class LaplaceSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    faces: dict
    spec: object
    grid: Grid2D
    bc: tuple
    operator: Operator = field(repr=False)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    J_mean: float = float("nan")
    J_relative_std: float = float("nan")
    J_face: float = float("nan")
    backend: str = ""

    def to_json(self):
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "J_mean": self.J_mean,
            "J_relative_std": self.J_relative_std,
            "J_face": self.J_face,
            "backend": self.backend,
        }


def build_operator(spec, grid, lateral="dirichlet", stencil="9-point"):
    """Assemble ``A`` with ``A phi = -(net outward flux of K grad phi)``."""
    pts = _points(spec, grid)
    if pts.kind != "cells":
        raise ValidationError("finite-volume operators need a cell grid")
    nu, nv = pts.shape
    du, dv = pts.du, pts.dv
    a, b = pts.u_range
    lo, hi = pts.v_range
    uf = a + du * np.arange(nu + 1)
    vf = lo + dv * np.arange(nv + 1)

    uu, vv = pts.mesh()
    det_g = spec.metric_fields(uu, vv)[0]
    bad = ~(np.isfinite(det_g) & (det_g > 0))
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise AssemblyError("degenerate metric (det g <= 0)", location=(int(i), int(j)))
    mass = np.sqrt(det_g) * pts.wv[None, :] * du

    U, V = np.meshgrid(uf, pts.v, indexing="ij")
    kuu_f, kuv_uf, _ = spec.conductivity(U, V)
    U, V = np.meshgrid(pts.u, vf[1:-1], indexing="ij")
    _, _, kvv_f = spec.conductivity(U, V)
    U, V = np.meshgrid(uf[1:-1], vf, indexing="ij")
    _, kuv_vert, kvv_vert = spec.conductivity(U, V)

    if stencil == "orthogonal-only":
        scale = max(np.abs(kuu_f).max(), np.abs(kvv_f).max() if kvv_f.size else 0.0)
        if np.abs(kuv_vert).max() > 1e-12 * scale or np.abs(kuv_uf).max() > 1e-12 * scale:
            raise ValidationError("channel has mixed metric terms; use the 9-point stencil")
        kuv_vert = np.zeros_like(kuv_vert)
    elif stencil != "9-point":
        raise ValidationError(f"unknown stencil {stencil!r}")

    t_u = kuu_f * dv / du
    t_u[0] *= 2.0
    t_u[-1] *= 2.0
    if lateral == "neumann":
        t_u[0] = 0.0
        t_u[-1] = 0.0
    elif lateral != "dirichlet":
        raise ValidationError(f"unknown lateral condition {lateral!r}")
    # walls: conormal condition eliminates d_v phi at wall vertices
    wall = np.divide(kuv_vert**2, kvv_vert, out=np.zeros_like(kuv_vert), where=kvv_vert > 0)
    t_u[1:-1, 0] -= 0.5 * wall[:, 0] * dv / du
    t_u[1:-1, -1] -= 0.5 * wall[:, -1] * dv / du
    t_v = kvv_f * du / dv
    cross = kuv_vert[:, 1:-1]

    idx = np.arange(nu * nv).reshape(nu, nv)
    rows, cols, vals = [], [], []

    def couple(p, q, t):
        # two-point term t * (phi_q - phi_p)^2 / 2
        rows.extend([p.ravel(), q.ravel(), p.ravel(), q.ravel()])
        cols.extend([p.ravel(), q.ravel(), q.ravel(), p.ravel()])
        t = t.ravel()
        vals.extend([t, t, -t, -t])

    couple(idx[:-1, :], idx[1:, :], t_u[1:-1])
    couple(idx[:, :-1], idx[:, 1:], t_v)
    diag = np.zeros((nu, nv))
    diag[0] += t_u[0]
    diag[-1] += t_u[-1]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())

    if np.any(cross):
        c = 0.5 * cross
        sw, nw = idx[:-1, :-1], idx[:-1, 1:]
        se, ne = idx[1:, :-1], idx[1:, 1:]
        for p, q, s in ((sw, sw, c), (ne, ne, c), (nw, nw, -c), (se, se, -c)):
            rows.append(p.ravel())
            cols.append(q.ravel())
            vals.append(s.ravel())
        for p, q, s in ((sw, ne, -c), (nw, se, c)):
            rows.extend([p.ravel(), q.ravel()])
            cols.extend([q.ravel(), p.ravel()])
            vals.extend([s.ravel(), s.ravel()])

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nu * nv, nu * nv)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()

    bc_a = np.zeros((nu, nv))
    bc_b = np.zeros((nu, nv))
    bc_a[0] = t_u[0]
    bc_b[-1] = t_u[-1]
    return Operator(pts, A, t_u, t_v, cross, mass, lateral, bc_a.ravel(), bc_b.ravel())


def assemble_laplace(spec, grid, bc=(0.0, 1.0), stencil="9-point"):
    """Linear system for the harmonic function with lateral values ``bc``.

    ``h = bc[0]`` on ``u = a``, ``h = bc[1]`` on ``u = b`` and zero flux
    through the walls.
    """
    if isinstance(grid, CellGrid) and (grid.n_u < 8 or grid.n_v < 8):
        raise ValidationError("harmonic solves need at least an 8x8 grid")
    op = build_operator(spec, grid, "dirichlet", stencil)
    h_a, h_b = (float(x) for x in bc)
    rhs = h_a * op.bc_a + h_b * op.bc_b
    faces = {"u=a": LATERAL, "u=b": LATERAL, "v=lo": WALL, "v=hi": WALL}
    return LaplaceSystem(op.matrix, rhs, faces, spec, op.grid, (h_a, h_b), op)


def solve_harmonic(system, tol=1e-10, max_iter=None, use_numba=None):
    """Jacobi-preconditioned CG solve of an assembled system.

    Raises :class:`SolverError` carrying the best iterate when the relative
    residual does not reach ``tol`` within ``max_iter`` iterations.
    """
    A = system.matrix
    n = A.shape[0]
    if max_iter is None:
        max_iter = int(50 * np.sqrt(n))
    dinv = 1.0 / A.diagonal()
    h_a, h_b = system.bc
    x0 = np.full(n, 0.5 * (h_a + h_b))
    x, it, res = kernels.pcg(A.indptr, A.indices, A.data, system.rhs, x0, dinv, tol, max_iter, use_numba)
    grid = system.grid
    if res > tol:
        best = Field2D(x.reshape(grid.shape), grid, "h", system.bc)
        raise SolverError(
            f"CG did not reach tol={tol:g} in {max_iter} iterations (residual {res:.3e})",
            best=best,
            residual=res,
            iterations=it,
        )
    h = Field2D(x.reshape(grid.shape), grid, "h", system.bc)
    J = flux_J(h, system.spec, grid, 1.0)
    Jf = face_flux_J(system, h)
    report = SolveReport(
        it, res, float(J.values.mean()), _relative_std(J.values), float(Jf.mean()), kernels.backend() if use_numba is None else ("numba" if use_numba else "numpy")
    )
    return h, report


def _relative_std(values):
    mean = values.mean()
    if mean == 0.0:
        return 0.0 if np.all(values == 0.0) else float("inf")
    return float(values.std() / abs(mean))


def face_flux_J(system, h):
    """Conservative flux of ``grad h`` through every u-face column (``D0 = 1``).

    Returns ``n_u + 1`` totals from ``u = a`` to ``u = b``; for a converged
    solve they agree to solver tolerance.
    """
    op = system.operator
    phi = h.values
    h_a, h_b = system.bc
    nu, nv = phi.shape
    F = np.empty((nu + 1, nv))
    F[1:-1] = op.t_u[1:-1] * (phi[1:] - phi[:-1])
    F[0] = op.t_u[0] * (phi[0] - h_a)
    F[-1] = op.t_u[-1] * (h_b - phi[-1])
    if op.cross.size:
        gv = phi[:-1, 1:] + phi[1:, 1:] - phi[:-1, :-1] - phi[1:, :-1]
        half = 0.25 * op.cross * gv
        F[1:-1, :-1] += half
        F[1:-1, 1:] += half
    return F.sum(axis=1)


def _grad_cells(phi, du, dv):
    """Second-order ``d_u`` and ``d_v`` of a cell field.

    Edge rows use one-sided three-point differences of the cell values.
    The lateral Dirichlet data are deliberately left out: the discrete
    solution differs from them by a smooth O(h^2) error, so mixing the two
    would cost an order in the end columns.
    """
    gu = np.empty_like(phi)
    gu[1:-1] = (phi[2:] - phi[:-2]) / (2.0 * du)
    gu[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * du)
    gu[-1] = (3.0 * phi[-1] - 4.0 * phi[-2] + phi[-3]) / (2.0 * du)
    gv = np.empty_like(phi)
    gv[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) / (2.0 * dv)
    gv[:, 0] = (-3.0 * phi[:, 0] + 4.0 * phi[:, 1] - phi[:, 2]) / (2.0 * dv)
    gv[:, -1] = (3.0 * phi[:, -1] - 4.0 * phi[:, -2] + phi[:, -3]) / (2.0 * dv)
    return gu, gv


def _require_cells(h, spec, grid):
    pts = _points(spec, grid)
    h.check_grid(pts)
    if pts.kind != "cells":
        raise ValidationError("this operation needs a field on a cell grid")
    return pts


def flux_J(h, spec, grid, D0=1.0):
    """``J(u) = D0 * flux of grad h`` across the section through each cell column.

    Evaluated from reconstructed gradients, independently of the face
    fluxes used by the solver, so its spread along ``u`` measures the
    discretization error.
    """
    pts = _require_cells(h, spec, grid)
    gu, gv = _grad_cells(h.values, pts.du, pts.dv)
    uu, vv = pts.mesh()
    kuu, kuv, _ = spec.conductivity(uu, vv)
    dens = (kuu * gu + kuv * gv) * pts.dv
    return ScalarProfile(pts.u, D0 * dens.sum(axis=1), "flux")


def rho_profile(h, spec, grid):
    """Section average of ``h`` weighted by volume (effective density of ``h``).

    Sampled at the cell-centre columns, plus the lateral sections when the
    field carries its Dirichlet values.
    """
    pts = _require_cells(h, spec, grid)
    uu, vv = pts.mesh()
    w = np.sqrt(spec.metric_fields(uu, vv)[0]) * pts.wv[None, :]
    rho = (h.values * w).sum(axis=1) / w.sum(axis=1)
    if h.boundary is None:
        return ScalarProfile(pts.u, rho, h.units)
    a, b = pts.u_range
    return ScalarProfile(np.r_[a, pts.u, b], np.r_[h.boundary[0], rho, h.boundary[1]], h.units)


def lambda_field(h, rho, spec, grid):
    """``lambda = dh(U) + (h - rho(u)) div U`` on the cells of ``h``."""
    pts = _require_cells(h, spec, grid)
    gu, _ = _grad_cells(h.values, pts.du, pts.dv)
    uu, vv = pts.mesh()
    div = spec.metric_fields(uu, vv)[2]
    rho_c = np.interp(pts.u, rho.u, rho.values)
    return Field2D(gu + (h.values - rho_c[:, None]) * div, pts, "1/u", None)


def effective_D_finite(J_mean, sigma_profile, flux_lambdaU, rel_floor=1e-12):
    """``D = J sigma^2 / F_{lambda U}``.

    Raises :class:`ReductionError` listing the nodes where the scaled flux
    is not safely positive.
    """
    sigma_profile.check_grid(flux_lambdaU)
    F = flux_lambdaU.values
    scale = max(np.abs(F).max(), np.abs(sigma_profile.values).max())
    bad = np.flatnonzero(~(F > rel_floor * scale))
    if bad.size:
        raise ReductionError(
            f"scaled flux F_lambdaU is not positive at {bad.size} of {F.size} nodes", nodes=bad.tolist()
        )
    return sigma_profile.with_values(J_mean * sigma_profile.values**2 / F, "D")


@dataclass(frozen=True, eq=False)
class NaturalField:
    """``H = grad h / |grad h|^2`` at cell centres.

    ``Hu, Hv`` are parameter-space components; ``vectors`` the embedding
    components; ``grad_norm`` is ``|grad h|``.
    """

    Hu: np.ndarray
    Hv: np.ndarray
    vectors: np.ndarray
    grad_norm: np.ndarray
    grid: Grid2D


def natural_field(h, spec, grid, rel_floor=1e-12):
    pts = _require_cells(h, spec, grid)
    gu, gv = _grad_cells(h.values, pts.du, pts.dv)
    uu, vv = pts.mesh()
    dxdu, dxdv = spec.reduced_jacobian(uu, vv)
    dxdv = dxdv[..., 0]
    guu = np.einsum("...k,...k", dxdu, dxdu)
    guv = np.einsum("...k,...k", dxdu, dxdv)
    gvv = np.einsum("...k,...k", dxdv, dxdv)
    det = guu * gvv - guv**2
    au = (gvv * gu - guv * gv) / det
    av = (-guv * gu + guu * gv) / det
    norm2 = gu * au + gv * av
    floor = rel_floor * max(np.abs(norm2).max(), 1e-300)
    bad = ~(norm2 > floor)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise SingularityError("gradient of h vanishes", location=(float(pts.u[i]), float(pts.v[j])))
    Hu, Hv = au / norm2, av / norm2
    vectors = Hu[..., None] * dxdu + Hv[..., None] * dxdv
    return NaturalField(Hu, Hv, vectors, np.sqrt(norm2), pts)


@dataclass
class FiniteRateResult:
    h: Field2D
    report: SolveReport
    J: ScalarProfile
    rho: ScalarProfile
    lam: Field2D
    sigma: ScalarProfile
    flux_lambdaU: ScalarProfile
    D_inf: ScalarProfile
    D_fin: ScalarProfile | None
    reduction_error: str | None = None

    @property
    def J_mean(self):
        return float(self.J.values.mean())


def natural_projection(spec, grid, bc=(0.0, 1.0), D0=1.0, tol=1e-10, max_iter=None, stencil="9-point", h=None):
    """Full finite-rate pipeline on a cell grid.

    Pass ``h`` to skip the solve and use an injected field (e.g. a closed
    form); otherwise the harmonic system is assembled and solved.
    """
    pts = _points(spec, grid)
    if h is None:
        system = assemble_laplace(spec, grid, bc, stencil)
        h, report = solve_harmonic(system, tol, max_iter)
    else:
        h.check_grid(pts)
        report = SolveReport(0, 0.0)
    J = flux_J(h, spec, pts, D0)
    report.J_mean = float(J.values.mean()) / D0
    report.J_relative_std = _relative_std(J.values)
    rho = rho_profile(h, spec, pts)
    lam = lambda_field(h, rho, spec, pts)
    s = sigma(spec, pts)
    F_lam = flux_scaled_U(spec, pts, lam)
    D_inf = s.with_values(D0 * flux_grad_u(spec, pts).values * s.values, "D")
    try:
        D_fin = effective_D_finite(float(J.values.mean()), s, F_lam)
        err = None
    except ReductionError as exc:
        D_fin, err = None, str(exc)
    return FiniteRateResult(h, report, J, rho, lam, s, F_lam, D_inf, D_fin, err)


def check_same_grid(a, b):
    if not a.grid.matches(b.grid):
        raise GridMismatchError("fields live on different grids")
