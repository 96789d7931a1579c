"""Curvature flow of convex graphs over strictly convex planar domains.

Evolves u by du/dt = w (f(kappa) - Phi(x, u)) under the flux condition
u_nu = phi(x, u), certifies the qualitative behaviour of the flow as
runtime monitors, and solves the stationary problem f(kappa) = Phi
directly for cross-checking.
"""

from .domain_grid import Domain, DomainError, Grid, ScalarField, build_domain
from .flow_engine import (BarrierParams, ConfigError, FlowBreakdownError,
                          FlowConfig, FlowEngine, FlowResult, FlowState,
                          IncompatibleInitialDataError, InitialReport,
                          MonitorRecord, check_initial, run_flow,
                          solve_stationary, sphere_cap_exact, sphere_cap_preset)
from .geometry import (ForcingSpec, F_and_Fij, G_derivatives, GraphPointData,
                       affine_forcing, constant_forcing, curvature_matrix,
                       graph_point, graph_quantities, principal_curvatures,
                       speed, sphere_cap_forcing)
from .radial_oracle import (RadialConfig, RadialEngine, RadialResult,
                            lift_to_grid, radial_curvatures, run_radial_flow)
from .symfunc import (ConeVector, ConeViolationError, CurvatureFunction,
                      StructureReport, check_structure, eval_f, grad_f,
                      normalized_sigma_k, sigma_k)

__version__ = "0.1.0"

__all__ = [
    "BarrierParams", "ConeVector", "ConeViolationError", "ConfigError",
    "CurvatureFunction", "Domain", "DomainError", "FlowBreakdownError",
    "FlowConfig", "FlowEngine", "FlowResult", "FlowState", "ForcingSpec",
    "F_and_Fij", "G_derivatives", "GraphPointData", "Grid",
    "IncompatibleInitialDataError", "InitialReport", "MonitorRecord",
    "RadialConfig", "RadialEngine", "RadialResult", "ScalarField",
    "StructureReport", "affine_forcing", "build_domain", "check_initial",
    "check_structure", "constant_forcing", "curvature_matrix", "eval_f",
    "grad_f", "graph_point", "graph_quantities", "lift_to_grid",
    "normalized_sigma_k", "principal_curvatures", "radial_curvatures",
    "run_flow", "run_radial_flow", "sigma_k", "solve_stationary", "speed",
    "sphere_cap_exact", "sphere_cap_forcing", "sphere_cap_preset",
]
