"""P1 finite elements for the Keller-Segel chemotaxis system with algebraic flux correction."""

from .assembly import Operators, assemble_artificial_diffusion, assemble_convection, assemble_mass, assemble_stiffness
from .config import KRule, RunConfig
from .experiments import error_norms, run_blowup, run_convergence, simulate
from .limiter import QStrategy
from .mesh import Mesh, MeshError, build_uniform_unit_square
from .stepper import RunResult, Scheme, State, StepFailure, StepParams, run, step

__version__ = "0.1.0"
