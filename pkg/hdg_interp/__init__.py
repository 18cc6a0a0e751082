"""Interpolatory HDG methods for semilinear reaction-diffusion problems on triangles."""
from .config import DegreeConfig, TimeConfig, get_settings
from .errors import (
    ConfigurationError,
    EvaluationError,
    HDGError,
    LinearAlgebraError,
    MeshIntegrityError,
    PostprocessError,
    StepConvergenceError,
    UnsupportedDegreeError,
)
from .hdg_assembly import (
    CondensedSystem,
    ElementOperators,
    FieldState,
    HDGDiscretization,
    assemble_element,
    check_flux_continuity,
    condense,
    solve_condensed,
    solve_elliptic_projection,
)
from .mesh import Mesh, build_uniform_square, classify_faces, read_mesh_file, write_mesh_file
from .problems import ManufacturedProblem, get_problem
from .study import SweepResult, emit_csv, error_norms, run_sweep
from .time_stepper import CHAFFEE_INFANTE, NO_REACTION, Nonlinearity, initial_state, integrate, step

__version__ = "0.1.0"

__all__ = [
    "CHAFFEE_INFANTE",
    "NO_REACTION",
    "CondensedSystem",
    "ConfigurationError",
    "DegreeConfig",
    "ElementOperators",
    "EvaluationError",
    "FieldState",
    "HDGDiscretization",
    "HDGError",
    "LinearAlgebraError",
    "ManufacturedProblem",
    "Mesh",
    "MeshIntegrityError",
    "Nonlinearity",
    "PostprocessError",
    "StepConvergenceError",
    "SweepResult",
    "TimeConfig",
    "UnsupportedDegreeError",
    "assemble_element",
    "build_uniform_square",
    "check_flux_continuity",
    "classify_faces",
    "condense",
    "emit_csv",
    "error_norms",
    "get_problem",
    "get_settings",
    "initial_state",
    "integrate",
    "read_mesh_file",
    "run_sweep",
    "solve_condensed",
    "solve_elliptic_projection",
    "step",
    "write_mesh_file",
]
