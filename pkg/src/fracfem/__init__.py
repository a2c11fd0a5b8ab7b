"""Finite elements for space-fractional diffusion on simplicial meshes.

Riemann-Liouville derivatives of P1 basis functions are evaluated exactly
along axis-parallel paths traced through the mesh, and the stiffness matrix
is accumulated into a sparsity pattern predicted from vertex patch extents.
"""
__version__ = "0.1.0"

from ._kernels import BACKEND, available_backends
from .assembly import (DiscreteSystem, OperatorTerm, PatternError, SparsityPattern, assemble,
                       build_sparsity_pattern, classical_stiffness, classical_term, matrix_stats)
from .fracops import (FractionalOrder, SegmentBasisTrace, derivative_classical,
                      eval_all_local_basis, eval_fractional_derivative, eval_global_basis,
                      gamma_function, segment_contribution_interior,
                      segment_contribution_terminal)
from .mesh import (MeshError, MeshFormatError, PatchBounds, SimplicialMesh, generate_ball_mesh,
                   generate_cube_mesh, load_mesh, patch_bounds, save_mesh)
from .problem import (ConvergenceRecord, FractionalDiffusionProblem, ball_problem,
                      convergence_study, cube_problem, error_norms, manufactured_rhs, solve,
                      weak_form_terms)
from .quadrature import QuadratureRule, quadrature_rule
from .raypath import (IntegrationPath, RayQuery, SegmentHit, Side, TraversalError, exit_face,
                      ray_simplex_intersect, trace_path)
