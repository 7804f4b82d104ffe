"""Hybridized DG solver for the Stokes equations with exactly divergence-free velocities."""
from .analysis import (
    CompatibilityReport,
    ConvergenceTable,
    ErrorReport,
    check_element_compatibility,
    compute_errors,
    convergence_rates,
    estimate_inf_sup,
    norm_p,
    norm_v,
    norm_vprime,
    project_fields,
)
from .assembly import (
    PRESETS,
    ElementFamily,
    QuadratureOrders,
    SolutionFields,
    assemble_global,
    condense,
    default_alpha,
    element_family,
    recover_fields,
    solve,
)
from .cases import bearing_case, hydrostatic_case, make_case, manufactured_case
from .errors import (
    CondensationError,
    DegenerateGeometryError,
    InvalidArgumentError,
    SingularMatrixError,
    SolverAccuracyError,
)
from .mapping import MappingMode
from .mesh import Mesh, generate_bearing_mesh, generate_square_mesh, generate_trapezoidal_mesh
from .quadrature import quadrature

__version__ = "0.1.0"
