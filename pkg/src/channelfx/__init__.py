"""Effective one-dimensional diffusion in channels."""

__version__ = "0.1.0"

from .coeff import (
    EffectiveCoefficients,
    compute_coefficients,
    effective_concentration,
    effective_D_infinite,
    fick_jacobs_D,
    literature_concentration,
)
from .conjugate import conjugate_area, conjugate_D, conjugate_J, conjugate_sigma
from .errors import *  # noqa: F401,F403
from .functions import FunctionExpr
from .geom import (
    ConjugatePair,
    Parametric2D,
    Reparametrized,
    Tube3D,
    area,
    cross_section_density,
    flux_grad_u,
    flux_scaled_U,
    metric_at,
    reparametrize,
    sigma,
    spec_from_json,
    volume,
    volume_parametrization,
)
from .harmonic import (
    assemble_laplace,
    effective_D_finite,
    flux_J,
    lambda_field,
    natural_field,
    natural_projection,
    rho_profile,
    solve_harmonic,
)
from .profiles import CellGrid, Field2D, QuadratureGrid, ScalarProfile
from .sim import (
    TimeSeries1D,
    brownian_mfpt,
    mfpt_effective,
    project_full,
    solve_effective_1d,
    solve_full_2d,
)
