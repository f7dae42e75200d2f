"""Structure-preserving time integration for generalized gradient flows
via skew gradient embedding."""

__version__ = "0.1.0"

from .hilbert import (  # noqa: E402,F401
    DimensionError,
    EnergyFunctional,
    GeneralizedGradientFlow,
    InnerProduct,
    RankTwoSkew,
    discrete_gradient_avf,
    inner_product,
    sge_skew,
    wedge_apply,
)
from .integrators import SchemeConfig, StepHistory, integrate, rank2_solve, step  # noqa: E402,F401
