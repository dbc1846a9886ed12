"""Second-order cone programs: builder, canonicalization and solver."""
from .ipm import ConeDims, conelp
from .program import ConvexProgram, Expr, Solution, vstack

__all__ = ["ConeDims", "ConvexProgram", "Expr", "Solution", "conelp", "vstack"]
