"""Singular Moser-Trudinger and Onofri functionals on the unit disk and the flat torus."""
from .config import DEFAULT, Tolerances
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    GeometryError,
    InvalidInputError,
    InvalidOrderError,
    InvalidWeightError,
    MonotonicityError,
    RegimeError,
    ScaleError,
    SchemaError,
    SingMTError,
    UnsupportedGeometryError,
)
from .functionals import (
    ConicalWeight,
    FunctionalParams,
    disk_test_family,
    lambda_q_disk,
    mt_functional_disk,
    onofri_deficit,
)
from .maximizer import (
    MaximizeOptions,
    MaximizerReport,
    euler_lagrange_residual,
    maximize,
    sup_convergence_scan,
    threshold_bound,
)
from .radial import RadialFunction, bubble_profile, dirichlet_energy, moser_function
from .rearrangement import PolarGridFunction, rearrange
from .torus import (
    TorusField,
    green_function,
    lambda_q_torus,
    supercritical_family,
    surface_functional,
    test_family_w,
)

__version__ = "0.1.0"
