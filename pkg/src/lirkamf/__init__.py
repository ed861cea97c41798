"""Linearly implicit Runge-Kutta methods with approximate matrix factorization."""

from .analysis import (
    amplification_2d,
    amplification_3d,
    estimate_order,
    stability_amf,
    stability_exact,
)
from .integrator import (
    RunReport,
    SemiLinearProblem,
    Strategy,
    integrate,
    relative_error,
    step_amf,
    step_amf_calvo,
    step_exact,
)
from .operators import (
    AmfResolvent,
    GeneralSparse,
    Kronecker,
    PointwiseBlocks,
    Resolvent,
    SingularFactorError,
    SumOperator,
    Tridiagonal,
)
from .problems import build_allen_cahn, build_brusselator, dominant_eigenvalue
from .tableaus import ImexTableau, lirk3, lirk4, validate

__version__ = "0.1.0"
