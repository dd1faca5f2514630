"""Desk-scale lab for few-step flow-matching sampling.

The package trains a toy velocity backbone on 2-D distributions, trains a
lightweight deviation network (SideNet) on top of the frozen backbone, and
samples with a family of ODE solvers: Euler, Heun, single-anchor
interpolation, and the bi-anchor interpolation solver. An analysis module
verifies quadrature exactness degrees and empirical convergence orders
against analytic fields with closed-form trajectories.
"""

__version__ = "0.1.0"

from .quadrature import QuadratureRule, make_rule
from .flow import (
    FlowProblem,
    LearnedField,
    LinearStateField,
    TimeOnlyField,
    VelocityField,
    exact_solution,
)
from .sidenet import ChainTrainConfig, SideNetModel, train_sidenet
from .solvers import (
    SamplerConfig,
    SamplingResult,
    ba_solve,
    euler_solve,
    heun_solve,
    single_anchor_solve,
)

__all__ = [
    "QuadratureRule",
    "make_rule",
    "FlowProblem",
    "LearnedField",
    "LinearStateField",
    "TimeOnlyField",
    "VelocityField",
    "exact_solution",
    "ChainTrainConfig",
    "SideNetModel",
    "train_sidenet",
    "SamplerConfig",
    "SamplingResult",
    "ba_solve",
    "euler_solve",
    "heun_solve",
    "single_anchor_solve",
]
