import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelfx.errors import AssemblyError, ReductionError, SingularityError, SolverError, ValidationError
from channelfx.functions import FunctionExpr
from channelfx.geom import ConjugatePair, Parametric2D, Tube3D, reparametrize
from channelfx.harmonic import (
    assemble_laplace,
    build_operator,
    effective_D_finite,
    face_flux_J,
    flux_J,
    natural_field,
    natural_projection,
    solve_harmonic,
)
from channelfx.profiles import CellGrid, Field2D, ScalarProfile

STRIP = Parametric2D(FunctionExpr.constant(0.0), FunctionExpr.constant(1.0))
WEDGE = ConjugatePair("log-wedge", (-math.pi / 12, math.pi / 12), (0.0, 1.0))
WAVY = Parametric2D(FunctionExpr.sinusoid(0.0, 0.1, 2 * np.pi), FunctionExpr.sinusoid(1.0, 0.3, 2 * np.pi))


def tilted(s):
    return Parametric2D(FunctionExpr.polynomial([0.0, s]), FunctionExpr.constant(1.0))


# -- operator --------------------------------------------------------------------


@pytest.mark.parametrize("spec", [STRIP, WEDGE, WAVY, tilted(0.7)])
def test_operator_symmetric_with_zero_row_sums(spec):
    op = build_operator(spec, CellGrid(16, 8), "neumann")
    A = op.matrix
    assert abs(A - A.T).max() < 1e-13 * abs(A).max()
    np.testing.assert_allclose(A @ np.ones(A.shape[0]), 0.0, atol=1e-12 * abs(A).max())


def test_operator_positive_definite_with_dirichlet_ends():
    A = build_operator(WAVY, CellGrid(8, 8)).matrix.toarray()
    assert np.linalg.eigvalsh(A).min() > 0


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-2, 2))
def test_tilted_channel_annihilates_along_channel_coordinate(s, k):
    # xi is linear along the channel axis, so its gradient is parallel to the walls
    spec = tilted(s)
    op = build_operator(spec, CellGrid(16, 8), "neumann")
    g = op.grid
    xy = spec.embedding(*g.mesh())
    xi = k * (xy[..., 0] + s * xy[..., 1])
    r = (op.matrix @ xi.ravel()).reshape(g.shape)
    np.testing.assert_allclose(r[1:-1], 0.0, atol=1e-12 * (1 + abs(k)))


def test_orthogonal_only_stencil():
    assemble_laplace(STRIP, CellGrid(8, 8), stencil="orthogonal-only")
    assemble_laplace(WEDGE, CellGrid(8, 8), stencil="orthogonal-only")
    with pytest.raises(ValidationError):
        assemble_laplace(tilted(0.5), CellGrid(8, 8), stencil="orthogonal-only")
    with pytest.raises(ValidationError):
        assemble_laplace(STRIP, CellGrid(8, 8), stencil="5-point")


def test_grid_too_small():
    with pytest.raises(ValidationError):
        assemble_laplace(STRIP, CellGrid(4, 8))


def test_degenerate_metric_reports_cell():
    class Pinched(Parametric2D):
        def metric_fields(self, u, v):
            det, det_v, div = super().metric_fields(u, v)
            return np.where(u > 0.9, 0.0, det), det_v, div

    with pytest.raises(AssemblyError) as exc:
        build_operator(Pinched(FunctionExpr.constant(0.0), FunctionExpr.constant(1.0)), CellGrid(10, 8))
    assert exc.value.location == (9, 0)


def test_boundary_faces_tagged():
    faces = assemble_laplace(STRIP, CellGrid(8, 8)).faces
    assert faces == {"u=a": "lateral-dirichlet", "u=b": "lateral-dirichlet", "v=lo": "wall-neumann", "v=hi": "wall-neumann"}


# -- solves ----------------------------------------------------------------------


@pytest.mark.parametrize("bc", [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0)])
def test_strip_solution_is_affine(bc):
    system = assemble_laplace(STRIP, CellGrid(32, 8), bc)
    h, report = solve_harmonic(system, tol=1e-13)
    exact = bc[0] + (bc[1] - bc[0]) * h.grid.u
    np.testing.assert_allclose(h.values, exact[:, None] + 0 * h.values, atol=1e-11)
    assert report.J_mean == pytest.approx(bc[1] - bc[0], rel=1e-10)
    assert h.boundary == bc


def test_wedge_solution_is_linear_in_u():
    h, report = solve_harmonic(assemble_laplace(WEDGE, CellGrid(32, 16)), tol=1e-13)
    np.testing.assert_allclose(h.values, np.broadcast_to(h.grid.u[:, None], h.values.shape), atol=1e-11)
    assert report.J_mean == pytest.approx(math.pi / 6, rel=1e-10)
    assert report.J_relative_std < 1e-10


def test_face_fluxes_are_conserved():
    system = assemble_laplace(WAVY, CellGrid(32, 16))
    h, report = solve_harmonic(system, tol=1e-12)
    F = face_flux_J(system, h)
    np.testing.assert_allclose(F, F.mean(), rtol=1e-9)
    assert report.J_face == pytest.approx(report.J_mean, rel=1e-2)


def test_flux_linearity():
    grid = CellGrid(32, 16)
    J = {}
    for bc in [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (3.0, 3.0)]:
        h, _ = solve_harmonic(assemble_laplace(WAVY, grid, bc), tol=1e-13)
        J[bc] = flux_J(h, WAVY, grid).values
    base = J[(0.0, 1.0)]
    for (a, b), values in J.items():
        np.testing.assert_allclose(values, (b - a) * base, rtol=1e-10, atol=1e-11 * abs(base).max())


def test_solver_error_carries_best_iterate():
    system = assemble_laplace(WAVY, CellGrid(32, 16))
    with pytest.raises(SolverError) as exc:
        solve_harmonic(system, max_iter=3)
    err = exc.value
    assert err.iterations == 3
    assert err.residual > 1e-10
    assert err.best.values.shape == (32, 16)


def test_J_std_shrinks_at_second_order():
    # reparametrized wedge: h is not affine in u, so the discretization error is visible
    spec = reparametrize(WEDGE, FunctionExpr.polynomial([0.0, 1.0, 0.5]))
    std = [natural_projection(spec, CellGrid(n, n // 2)).report.J_relative_std for n in (32, 64, 128)]
    assert std[0] < 1e-3
    orders = np.log2(np.array(std[:-1]) / np.array(std[1:]))
    assert np.all(orders > 1.9)


@pytest.mark.parametrize(
    "spec",
    [
        Parametric2D(FunctionExpr.sinusoid(0.1, 0.1, 2 * np.pi, -np.pi / 2), FunctionExpr.sinusoid(0.5, 0.15, 2 * np.pi, np.pi / 2)),
        Tube3D(FunctionExpr.sinusoid(1.0, 0.2, 2 * np.pi, np.pi / 2)),
    ],
)
def test_J_std_second_order_with_square_corners(spec):
    # walls meet u = a, b at right angles, so h has no corner singularity
    std = [natural_projection(spec, CellGrid(n, n // 2)).report.J_relative_std for n in (32, 64, 128)]
    assert np.all(np.log2(np.array(std[:-1]) / np.array(std[1:])) > 1.9)


# -- finite-rate pipeline --------------------------------------------------------


def test_strip_pipeline_is_identity():
    r = natural_projection(STRIP, CellGrid(32, 16))
    np.testing.assert_allclose(r.lam.values, 1.0, atol=1e-9)
    np.testing.assert_allclose(r.D_fin.values, 1.0, atol=1e-10)
    np.testing.assert_allclose(r.D_inf.values, 1.0, atol=1e-14)
    np.testing.assert_allclose(r.rho.values, np.r_[0.0, r.h.grid.u, 1.0], atol=1e-10)


def test_wedge_D_fin_matches_closed_form():
    r = natural_projection(WEDGE, CellGrid(64, 32))
    u = r.h.grid.u
    np.testing.assert_allclose(r.D_fin.values, (math.pi / 6) ** 2 * np.exp(2 * u), rtol=1e-9)


def test_D_fin_gap_closes_when_sections_agree():
    spec = reparametrize(WEDGE, FunctionExpr.polynomial([0.0, 1.0, 0.5]))
    gaps = []
    for n in (64, 128, 256):
        r = natural_projection(spec, CellGrid(n, n // 2))
        gaps.append(np.max(np.abs(r.D_fin.values / r.D_inf.values - 1)))
    assert np.all(np.log2(np.array(gaps[:-1]) / np.array(gaps[1:])) > 1.9)


def test_stable_solution_identity():
    # (D_fin / sigma) d rho / du = J: exact for centred differences, O(du^2) for the spline
    gaps = []
    for n in (32, 64, 128):
        r = natural_projection(WAVY, CellGrid(n, n // 2))
        u = r.D_fin.u
        rho = r.rho.values[1:-1]
        centred = (rho[2:] - rho[:-2]) / (u[2:] - u[:-2])
        q = r.D_fin.values[1:-1] / r.sigma.values[1:-1] * centred
        np.testing.assert_allclose(q, r.J_mean, rtol=1e-12)
        inner = ScalarProfile(u, rho)
        q = r.D_fin.values / r.sigma.values * inner.derivative()
        gaps.append(np.abs(q / r.J_mean - 1)[n // 8 : -n // 8].max())
    assert np.all(np.log2(np.array(gaps[:-1]) / np.array(gaps[1:])) > 1.9)


def test_injected_field_skips_the_solve():
    grid = CellGrid(16, 8).points(WEDGE)
    h = Field2D.from_function(lambda u, v: u + 0 * v, grid, "h", (0.0, 1.0))
    r = natural_projection(WEDGE, grid, h=h)
    assert r.report.iterations == 0
    np.testing.assert_allclose(r.J.values, math.pi / 6, rtol=1e-12)


def test_constant_data_gives_zero_flux_and_no_D_fin():
    r = natural_projection(STRIP, CellGrid(16, 8), bc=(2.0, 2.0))
    np.testing.assert_allclose(r.J.values, 0.0, atol=1e-12)
    assert r.D_fin is None
    assert "not positive" in r.reduction_error


def test_effective_D_finite_lists_bad_nodes():
    s = ScalarProfile([0, 1, 2], [1.0, 1.0, 1.0])
    with pytest.raises(ReductionError) as exc:
        effective_D_finite(1.0, s, s.with_values([1.0, -0.5, 0.0]))
    assert list(exc.value.nodes) == [1, 2]


def test_natural_field():
    grid = CellGrid(16, 8).points(WEDGE)
    h = Field2D.from_function(lambda u, v: u + 0 * v, grid, "h", (0.0, 1.0))
    nf = natural_field(h, WEDGE, grid)
    uu, _ = grid.mesh()
    # |grad u| = e^{-u} on the log wedge; H = grad h / |grad h|^2 has u-component 1
    np.testing.assert_allclose(nf.grad_norm, np.exp(-uu), rtol=1e-12)
    np.testing.assert_allclose(nf.Hu, 1.0, rtol=1e-12)
    np.testing.assert_allclose(nf.Hv, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(nf.vectors, axis=-1), np.exp(uu), rtol=1e-12)
    flat = Field2D.from_function(lambda u, v: 1.0 + 0 * u, grid)
    with pytest.raises(SingularityError):
        natural_field(flat, WEDGE, grid)
