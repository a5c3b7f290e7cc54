import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve

from channelfx import kernels
from channelfx.coeff import compute_coefficients
from channelfx.errors import StabilityError, ValidationError
from channelfx.functions import FunctionExpr
from channelfx.geom import ConjugatePair, Parametric2D, Tube3D
from channelfx.harmonic import build_operator, natural_projection
from channelfx.profiles import CellGrid, Field2D, QuadratureGrid, ScalarProfile
from channelfx.sim import (
    TimeSeries1D,
    brownian_mfpt,
    field_mass,
    mfpt_effective,
    project_full,
    solve_effective_1d,
    solve_full_2d,
    start_positions,
)

STRIP = Parametric2D(FunctionExpr.constant(0.0), FunctionExpr.constant(1.0))


def one(u):
    return np.ones_like(np.asarray(u, dtype=float))


def centres(n):
    return (np.arange(n) + 0.5) / n


def sinusoid_channel(scale):
    return Parametric2D(FunctionExpr.constant(0.0), FunctionExpr.sinusoid(scale, 0.3 * scale, 2 * np.pi))


def pde_mfpt(spec, n_u, n_v):
    """Section-averaged 2-D mean exit time from u = a (reflecting) to u = b (absorbing)."""
    op = build_operator(spec, CellGrid(n_u, n_v), "dirichlet")
    A = op.matrix - sp.diags(op.bc_a)  # make u = a a no-flux face
    tau = spsolve(A.tocsc(), op.mass.ravel()).reshape(n_u, n_v)
    at_a = (9 * tau[0] - tau[1]) / 8
    return float(np.average(at_a, weights=op.grid.wv))


# -- 1-D solver ------------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.5), st.floats(0.0, 0.8), st.floats(1e-4, 1e-2))
def test_1d_reflecting_conserves_mass(amp, skew, dt):
    D = lambda u: 1.0 + amp * np.sin(5 * u)
    s = lambda u: 1.0 + skew * u**2
    u = centres(64)
    p0 = ScalarProfile(u, np.exp(-20 * (u - 0.3) ** 2))
    ts = solve_effective_1d(D, s, p0, dt, 1000 * dt)
    m = ts.mass()
    assert np.max(np.abs(m - m[0])) < 1e-12 * m[0]


def test_1d_fluxes_balance_each_step():
    u = centres(32)
    ts = solve_effective_1d(one, lambda x: 1 + x, ScalarProfile(u, u**2), 1e-3, 0.01, bc="absorbing")
    lost = np.diff(ts.mass())
    np.testing.assert_allclose(lost, -1e-3 * (ts.flux[:, -1] - ts.flux[:, 0]), atol=1e-15)


def test_1d_eigenmode_decay():
    u = centres(256)
    p0 = ScalarProfile(u, np.sin(np.pi * u))
    ts = solve_effective_1d(one, one, p0, 1e-4, 0.1, bc="absorbing", save_every=100)
    rate = -np.diff(np.log(ts.p[:, 128])) / np.diff(ts.t)
    assert rate[-1] == pytest.approx(np.pi**2, rel=1e-2)


def test_1d_fixed_value_steady_state():
    # steady flux through a widening channel: (D / sigma) p' = const
    D = lambda u: (1 + u) ** 2
    s = lambda u: 1 + u
    errors = []
    for n in (64, 128):
        u = centres(n)
        ts = solve_effective_1d(D, s, ScalarProfile(u, 0 * u), 1.0, 200.0, bc="fixed-value", values=(1.0, 0.0))
        np.testing.assert_allclose(ts.flux[-1], ts.flux[-1].mean(), rtol=1e-12)
        errors.append(np.max(np.abs(ts.p[-1] - (1 - np.log1p(u) / np.log(2)))))
        assert ts.flux[-1].mean() == pytest.approx(1 / np.log(2), rel=1e-4)
    assert errors[0] < 1e-4
    assert errors[0] / errors[1] > 3.5


def test_explicit_matches_implicit_and_guards_stability():
    u = centres(32)
    p0 = ScalarProfile(u, np.cos(np.pi * u))
    with pytest.raises(StabilityError):
        solve_effective_1d(one, one, p0, 1e-2, 0.1, mode="explicit")
    a = solve_effective_1d(one, one, p0, 1e-4, 0.01, mode="explicit")
    b = solve_effective_1d(one, one, p0, 1e-4, 0.01)
    assert np.max(np.abs(a.p[-1] - b.p[-1])) < 1e-3


@pytest.mark.parametrize(
    "kwargs",
    [{"bc": "periodic"}, {"mode": "crank"}, {"T": 0.105}, {"dt": -1.0}],
)
def test_1d_validation(kwargs):
    u = centres(16)
    args = {"dt": 0.01, "T": 0.1}
    args.update(kwargs)
    with pytest.raises(ValidationError):
        solve_effective_1d(one, one, ScalarProfile(u, u), **args)


def test_non_uniform_cells_rejected():
    with pytest.raises(ValidationError):
        solve_effective_1d(one, one, ScalarProfile([0.1, 0.2, 0.5], [1, 1, 1]), 0.1, 0.1)


def test_time_series_csv_and_checks():
    ts = solve_effective_1d(one, one, ScalarProfile(centres(4), [1, 2, 3, 4]), 0.5, 1.0)
    lines = ts.to_csv().splitlines()
    assert lines[0] == "t,u=0.125,u=0.375,u=0.625,u=0.875"
    assert len(lines) == 4
    assert lines[1] == "0,1,2,3,4"
    with pytest.raises(ValidationError):
        TimeSeries1D(np.array([0.0, 0.0]), ts.u, ts.p[:2], ts.sigma, ts.du)


# -- 2-D solver and projection ---------------------------------------------------


def test_2d_reflecting_conserves_mass():
    spec = sinusoid_channel(1.0)
    grid = CellGrid(32, 8).points(spec)
    P0 = Field2D.from_function(lambda u, v: np.exp(-30 * (u - 0.4) ** 2) * (1 + v), grid)
    times, fields = solve_full_2d(spec, grid, P0, 1e-4, 0.1, save_every=100)
    m = np.array([field_mass(P, spec, grid) for P in fields])
    assert times.size == 11
    assert np.max(np.abs(m - m[0])) < 1e-12 * m[0]
    ts = project_full(times, fields, spec, grid)
    np.testing.assert_allclose(ts.mass(), m, rtol=1e-12)


def test_strip_2d_matches_1d():
    grid = CellGrid(32, 8).points(STRIP)
    f = lambda u: np.cos(np.pi * u) + u
    P0 = Field2D.from_function(lambda u, v: f(u) + 0 * v, grid)
    times, fields = solve_full_2d(STRIP, grid, P0, 1e-3, 0.05)
    ts2 = project_full(times, fields, STRIP, grid)
    ts1 = solve_effective_1d(one, one, ScalarProfile(grid.u, f(grid.u)), 1e-3, 0.05)
    np.testing.assert_allclose(ts2.p, ts1.p, atol=1e-10)


def test_2d_absorbing_ends_lose_mass():
    grid = CellGrid(16, 8).points(STRIP)
    P0 = Field2D.from_function(lambda u, v: 1.0 + 0 * u * v, grid)
    _, fields = solve_full_2d(STRIP, grid, P0, 1e-3, 0.05, bc="absorbing")
    assert field_mass(fields[-1], STRIP, grid) < 0.8
    with pytest.raises(ValidationError):
        solve_full_2d(STRIP, grid, P0, 1e-3, 0.05, bc="fixed-value")


def test_reduced_model_error_shrinks_with_width():
    """Finite-rate D stays accurate for wide channels; the plain reduction only when narrow."""
    gaps_fj, gaps_fin = [], []
    for scale in (1.0, 0.5, 0.25):
        spec = sinusoid_channel(scale)
        ref = pde_mfpt(spec, 256, 64)
        co = compute_coefficients(spec, QuadratureGrid(257, 16))
        tau_fj = mfpt_effective(co.profile("D_fj"), co.profile("sigma"), 0.0, 1.0)
        r = natural_projection(spec, CellGrid(128, 32))
        D_f = r.D_fin.with_values(r.D_fin.values / r.sigma.values**2)
        tau_fin = mfpt_effective(D_f, r.sigma, 0.0, 1.0)
        gaps_fj.append(abs(tau_fj / ref - 1))
        gaps_fin.append(abs(tau_fin / ref - 1))
    assert gaps_fj[0] > gaps_fj[1] > gaps_fj[2]
    assert gaps_fj[0] > 0.03
    assert max(gaps_fin) < 1e-3


def test_projected_dynamics_approach_reduced_dynamics_as_channel_narrows():
    f = lambda u: 1 + 0.5 * np.cos(np.pi * u)
    gaps = []
    for scale in (1.0, 0.5, 0.25):
        spec = sinusoid_channel(scale)
        grid = CellGrid(64, 16).points(spec)
        P0 = Field2D.from_function(lambda u, v: f(u) + 0 * v, grid)
        times, fields = solve_full_2d(spec, grid, P0, 1e-3, 0.2)
        full = project_full(times, fields, spec, grid)
        r = natural_projection(spec, CellGrid(64, 16))
        reduced = solve_effective_1d(r.D_fin, r.sigma, ScalarProfile(grid.u, f(grid.u)), 1e-3, 0.2)
        gaps.append(np.abs(full.p - reduced.p).max())
    assert gaps[0] > gaps[1] > gaps[2]


# -- mean first passage ----------------------------------------------------------


def test_mfpt_effective_closed_forms():
    assert mfpt_effective(one, one, 0.0, 1.0) == pytest.approx(0.5, rel=1e-14)
    assert mfpt_effective(lambda u: 2 + 0 * u, one, 0.0, 3.0) == pytest.approx(9 / 4, rel=1e-14)
    # log wedge: sigma ~ e^{2u}, D_fj = e^{-2u}
    tau = mfpt_effective(lambda u: np.exp(-2 * u), lambda u: 0.6 * np.exp(2 * u), 0.0, 1.0)
    assert tau == pytest.approx((math.e**2 - 3) / 4, rel=1e-13)
    with pytest.raises(ValidationError):
        mfpt_effective(one, one, 1.0, 0.0)


def test_pde_mfpt_helper_on_strip():
    assert pde_mfpt(STRIP, 64, 8) == pytest.approx(0.5, rel=1e-4)


def test_brownian_is_deterministic():
    spec = sinusoid_channel(0.25)
    a = brownian_mfpt(spec, 200, 1e-3, seed=3)
    b = brownian_mfpt(spec, 200, 1e-3, seed=3)
    c = brownian_mfpt(spec, 200, 1e-3, seed=4)
    assert a == b
    assert a.mean != c.mean


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize(
    "spec",
    [
        sinusoid_channel(0.25),
        ConjugatePair("log-wedge", (-0.3, 0.3), (0.0, 1.0)),
        ConjugatePair("power", (0.2, 0.6), (0.5, 1.0), alpha=2.0),
    ],
)
def test_backends_agree(spec):
    a = brownian_mfpt(spec, 100, 1e-3, seed=1, use_numba=True)
    b = brownian_mfpt(spec, 100, 1e-3, seed=1, use_numba=False)
    assert (a.backend, b.backend) == ("numba", "numpy")
    assert a.mean == b.mean and a.stderr == b.stderr


def test_strip_mfpt_independent_of_width():
    # wall reflections only touch the transverse coordinate of a straight channel
    wide = Parametric2D(FunctionExpr.constant(0.0), FunctionExpr.constant(3.0))
    assert brownian_mfpt(STRIP, 300, 1e-3, seed=3).mean == brownian_mfpt(wide, 300, 1e-3, seed=3).mean


def test_brownian_strip_rough_check():
    r = brownian_mfpt(STRIP, 2000, 1e-3, seed=11)
    assert r.absorbed == 2000
    assert abs(r.mean - 0.5) < 4 * r.stderr + 0.01


def test_time_cap_counts_unfinished():
    r = brownian_mfpt(STRIP, 50, 1e-3, seed=2, t_max=0.01)
    assert r.timed_out > 0
    assert r.absorbed + r.timed_out == 50


def test_start_positions_lie_on_inlet():
    spec = ConjugatePair("power", (0.2, 0.6), (0.5, 1.0), alpha=2.0)
    x, y = start_positions(spec, 500, 0)
    zeta = (x + 1j * y) ** 2
    np.testing.assert_allclose(zeta.real, 0.5, atol=1e-12)
    assert np.all((zeta.imag >= 0.2 - 1e-12) & (zeta.imag <= 0.6 + 1e-12))


def test_unsupported_geometry():
    with pytest.raises(ValidationError):
        brownian_mfpt(Tube3D(FunctionExpr.constant(1.0)), 10, 1e-3, 0)
    with pytest.raises(ValidationError):
        brownian_mfpt(STRIP, 1, 1e-3, 0)
