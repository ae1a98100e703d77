"""Generating-function simulation of weakly open bosonic networks."""

__version__ = "0.1.0"

from .coeff import CoeffTensor, OperatorConvention, f_to_g, g_to_f, reconstruct_matrix  # noqa: E402
from .evolve import IntegratorConfig, OperatorRun, evolve_operator, evolve_unseparated  # noqa: E402
from .generators import NetworkSpec  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .reference import conventional_solve, reference_solve  # noqa: E402

__all__ = [
    "BACKEND",
    "CoeffTensor",
    "IntegratorConfig",
    "NetworkSpec",
    "OperatorConvention",
    "OperatorRun",
    "conventional_solve",
    "evolve_operator",
    "evolve_unseparated",
    "f_to_g",
    "g_to_f",
    "reconstruct_matrix",
    "reference_solve",
]
