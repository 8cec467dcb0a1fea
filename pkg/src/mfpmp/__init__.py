"""Particle methods for mean-field optimal control in Wasserstein space."""

from .controls import (AffineBasis, ConstantBasis, ControlField, ControlSignal,
                       RBFBasis, affine_control, constant_control, zero_control)
from .dynamics import (GaussianGradient, LinearAttraction, LinearDrift, ConstantDrift,
                       NonlocalField, Trajectory, ZeroKernel, simulate)
from .functionals import (ControlEnergy, PotentialEnergy, TargetAttraction, Tracking,
                          Variance)
from .measures import EmpiricalMeasure, dirac, uniform_measure
from .optimizer import optimize, parameter_gradient, total_cost
from .pmp import costate_backward, k_function, maximization_check, stationarity_check
from .problem import Problem
from .transport import w1, w2, wasserstein
from .variations import NeedleParams, first_order_condition, needle_first_order

__version__ = "0.1.0"
