"""Numerical toolkit for the randomness cost of catalytic resource erasure.

Subpackages
-----------
states      density-matrix algebra over labeled registers
entropies   one-shot and asymptotic entropic quantities
free_sets   executable free-resource families
protocols   convex-split erasure protocols, converses, rate estimation
cli         reproducible experiment harness (``erasure`` command)
"""

__version__ = "0.1.0"

from .states import (
    DensityMatrix,
    RegisterLayout,
    UnitaryOp,
    controlled_swap,
    cq_extension,
    dominance_check,
    fidelity,
    partial_trace,
    purified_distance,
    purify,
    tensor,
    uhlmann_partner,
)

__all__ = [
    "DensityMatrix",
    "RegisterLayout",
    "UnitaryOp",
    "controlled_swap",
    "cq_extension",
    "dominance_check",
    "fidelity",
    "partial_trace",
    "purified_distance",
    "purify",
    "tensor",
    "uhlmann_partner",
    "__version__",
]
