"""Arrival time of mean curvature flow for mean-convex domains.

The arrival time u solves div(Du/|Du|) + 1/|Du| = 0 with u = 0 on the
boundary; it is computed as the limit of the uniformly elliptic problems
div(Du/W) + 1/W = 0, W = sqrt(eps^2 + |Du|^2), along a decreasing ladder
of eps. Diagnostics check the flow identities on the computed field.
"""

from .domain import GridSpec, ImplicitDomain, ShapeSpec, build_domain, shape_from_catalog
from .errors import (ConfigurationError, EmptySlabError, MCFError, MeanConvexityError,
                     MonotonicityViolation, OracleError, PerturbationError, PlumbingError,
                     SolverFailure, WindowError)
from .fields import ScalarField
from .solver import (EpsilonLadder, SolverParams, epsilon_continuation, solve_regularized)
from .radial import exact_ball_arrival, solve_radial
from .brakke import brakke_residual, extinction_time, mass_drop_scan, translating_graph_residual
from .measures import (measure_mu, measure_mu_coarea, inverse_gradient_measure, phi_catalog,
                       defect_measure_scan)
from .variational import functional_J, functional_J_set, minimality_probe, uniqueness_two_route

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "ImplicitDomain", "ShapeSpec", "build_domain", "shape_from_catalog",
    "ConfigurationError", "EmptySlabError", "MCFError", "MeanConvexityError",
    "MonotonicityViolation", "OracleError", "PerturbationError", "PlumbingError",
    "SolverFailure", "WindowError", "ScalarField", "EpsilonLadder", "SolverParams",
    "epsilon_continuation", "solve_regularized", "exact_ball_arrival", "solve_radial",
    "brakke_residual", "extinction_time", "mass_drop_scan", "translating_graph_residual",
    "measure_mu", "measure_mu_coarea", "inverse_gradient_measure", "phi_catalog",
    "defect_measure_scan", "functional_J", "functional_J_set", "minimality_probe",
    "uniqueness_two_route",
]
