"""Neumann eigenvalues of the Laplace-Beltrami operator under metric perturbation.

P1 finite elements on planar charts carrying a Riemannian metric, first
variation (branch) matrices of multiple eigenvalues, a discrete
Liapunov-Schmidt reduction, branch tracking and finite-difference checks of
the underlying tensor calculus.
"""

__version__ = "0.1.0"

from .errors import NumericalError, ValidationError  # noqa: E402
from .mesh import Mesh, generate_annulus, generate_disk, generate_square, load_mesh, save_mesh, validate_mesh  # noqa: E402
from .metric import MetricField, SymTensorField, metric_at_t, random_perturbation  # noqa: E402
from .fem import assemble_derivatives, assemble_mass, assemble_pencil, assemble_stiffness  # noqa: E402
from .eigensolver import EigenCluster, EigenPair, cluster, solve_gevp, solve_window  # noqa: E402
from .perturbation import (  # noqa: E402
    BranchMatrix,
    discrete_branch_matrix,
    genericity_experiment,
    hadamard_matrix,
    residual_tensor,
    splitting_perturbation,
    track_branches,
)
from .liapunov_schmidt import LiapunovSchmidt, Reduction  # noqa: E402

__all__ = [
    "NumericalError",
    "ValidationError",
    "Mesh",
    "generate_square",
    "generate_disk",
    "generate_annulus",
    "load_mesh",
    "save_mesh",
    "validate_mesh",
    "MetricField",
    "SymTensorField",
    "metric_at_t",
    "random_perturbation",
    "assemble_pencil",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_derivatives",
    "EigenPair",
    "EigenCluster",
    "solve_gevp",
    "solve_window",
    "cluster",
    "BranchMatrix",
    "hadamard_matrix",
    "discrete_branch_matrix",
    "track_branches",
    "residual_tensor",
    "splitting_perturbation",
    "genericity_experiment",
    "LiapunovSchmidt",
    "Reduction",
]
