"""Cell-by-cell (EMI) cardiac simulations with a BDDC-preconditioned interface solver."""

from .assembly import assemble_global, assemble_local, assemble_rhs, assemble_stiffness
from .bddc import BddcPreconditioner, build_bddc, build_scaling, rho_weights
from .diagnostics import apply_ED, apply_PD, s_prime_seminorm, verify_projection_bound
from .ionic import IonicParams, MembraneState, ionic_rhs, splitting_step
from .krylov import SolveReport, pcg, zero_mean_shift
from .mesh import GeometryConfig, build_decomposition, classify_primal_dual, enumerate_dofs
from .schur import SchurSystem, build_schur
from .simulation import RunConfig, Simulation, StepSolver, run_simulation

__version__ = "0.1.0"

__all__ = [
    "GeometryConfig", "build_decomposition", "enumerate_dofs", "classify_primal_dual",
    "assemble_stiffness", "assemble_local", "assemble_global", "assemble_rhs",
    "IonicParams", "MembraneState", "ionic_rhs", "splitting_step",
    "SchurSystem", "build_schur", "BddcPreconditioner", "build_bddc", "build_scaling", "rho_weights",
    "SolveReport", "pcg", "zero_mean_shift",
    "apply_ED", "apply_PD", "s_prime_seminorm", "verify_projection_bound",
    "RunConfig", "Simulation", "StepSolver", "run_simulation",
]
