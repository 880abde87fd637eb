"""Multiscale edge-element solver for heterogeneous curl-curl problems.

The package builds lowest-order edge-element (Nédélec) discretizations of
curl-curl problems on structured simplicial meshes of the unit square/cube,
constructs a local commuting projection onto the coarse edge space, and uses
it to assemble localized fine-scale correctors that upgrade the coarse space
to a multiscale method with optimal rates under rough coefficients.
"""

from .assembly import Checkerboard, assemble_B, assemble_load
from .falk_winther import (ProjectionSet, build_projection, dump_triplets,
                           zero_boundary_rows)
from .harness import (ExperimentConfig, ExperimentReport, ProjectionCache,
                      energy_error, fit_rate, main, reference_solve,
                      run_example, validate)
from .lod import (CorrectorBasis, LodConfig, MultiscaleSolution,
                  SourceCorrectorSet, build_corrector_basis, build_forms,
                  reconstruct, solve_lod, source_correctors)
from .linsolve import RankDeficiencyError, SolverError, solve_saddle, solve_spd
from .mesh import Patch, build_structured_mesh, layer_patch, uniform_refine
from .spaces import SparseOperator, coarse_to_fine, dof_map

__version__ = "1.0.0"

__all__ = [
    "Checkerboard", "assemble_B", "assemble_load",
    "ProjectionSet", "build_projection", "dump_triplets", "zero_boundary_rows",
    "ExperimentConfig", "ExperimentReport", "ProjectionCache", "energy_error",
    "fit_rate", "main", "reference_solve", "run_example", "validate",
    "CorrectorBasis", "LodConfig", "MultiscaleSolution", "SourceCorrectorSet",
    "build_corrector_basis", "build_forms", "reconstruct", "solve_lod",
    "source_correctors",
    "RankDeficiencyError", "SolverError", "solve_saddle", "solve_spd",
    "Patch", "build_structured_mesh", "layer_patch", "uniform_refine",
    "SparseOperator", "coarse_to_fine", "dof_map",
    "__version__",
]
