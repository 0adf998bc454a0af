# Space-time Galerkin POD for suboptimal control of Burgers' equation
from .errors import (
    InvalidArgumentError,
    InvalidConfigurationError,
    OutOfDomainError,
    SolverFailure,
    StgpodError,
)
from .fem_space import assemble_spatial_operators, build_fem_space, project_function
from .time_basis import build_time_basis, evaluate_basis

__all__ = [
    "InvalidArgumentError",
    "InvalidConfigurationError",
    "OutOfDomainError",
    "SolverFailure",
    "StgpodError",
    "assemble_spatial_operators",
    "build_fem_space",
    "build_time_basis",
    "evaluate_basis",
    "project_function",
]
