"""Data of one mean-field optimal control problem."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controls import ControlField, ControlSignal
from .dynamics import NonlocalField, Trajectory, simulate
from .functionals import RunningCost, TerminalCost
from .measures import EmpiricalMeasure, support_radius


@dataclass
class Problem:
    """``min int_0^T L(mu(t), u(t)) dt + phi(mu(T))`` over admissible controls.

    ``working_radius`` is the radius of the ball on which the C^1 bound of
    the controls is measured; it defaults to ``2 (R0 + 1)`` where ``R0`` is
    the support radius of the initial cloud.
    """

    field: NonlocalField
    mu0: EmpiricalMeasure
    T: float
    terminal: TerminalCost
    running: Optional[RunningCost] = None
    dt: float = 1e-3
    c1_bound: float = np.inf
    working_radius: Optional[float] = None
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.working_radius is None:
            self.working_radius = 2.0 * (support_radius(self.mu0) + 1.0)

    @property
    def dim(self) -> int:
        return self.mu0.dim

    def simulate(self, u: ControlSignal, with_jacobians: bool = False) -> Trajectory:
        return simulate(self.field, u, self.mu0, self.T, self.dt, with_jacobians)

    def project(self, u: ControlSignal) -> ControlSignal:
        return u.projected(self.working_radius)

    def project_field(self, omega: ControlField) -> ControlField:
        return omega.projected(self.working_radius)

    def running_value(self, x, w, omega) -> float:
        if self.running is None:
            return 0.0
        return self.running.value(x, w, omega)

    def running_gradient(self, x, omega) -> np.ndarray:
        if self.running is None:
            return np.zeros_like(x)
        return self.running.gradient(x, omega)

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))
