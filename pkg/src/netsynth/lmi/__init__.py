"""Affine matrix-inequality modelling, assembly, solving and export."""
from .expr import AffineExpr, DecisionVar, as_expr, bmat, kron, quad_form, symmetrize
from .problem import Constraint, LmiProblem, SolveOutcome, solve
from .backends import (AutoBackend, Backend, BackendResult, ClarabelBackend, CvxoptBackend,
                       make_backend)
from .sdpa import SdpaData, export_sdpa, read_sdpa, to_sdpa_data, write_sdpa
from .conditions import (assemble_decomposed_efbsp, assemble_dual_efbsp,
                         assemble_fbsp_analysis, assemble_primal_efbsp,
                         eigen_multiplier_polynomial, multiplier_condition, dual_nominal,
                         local_data, VARIANTS)

__all__ = [
    "AffineExpr", "DecisionVar", "as_expr", "bmat", "kron", "quad_form", "symmetrize",
    "Constraint", "LmiProblem", "SolveOutcome", "solve",
    "AutoBackend", "Backend", "BackendResult", "ClarabelBackend", "CvxoptBackend", "make_backend",
    "SdpaData", "export_sdpa", "read_sdpa", "to_sdpa_data", "write_sdpa",
    "assemble_decomposed_efbsp", "assemble_dual_efbsp", "assemble_fbsp_analysis",
    "assemble_primal_efbsp", "eigen_multiplier_polynomial", "multiplier_condition", "dual_nominal",
    "local_data", "VARIANTS",
]
