"""Terminal and running costs with their Wasserstein gradient maps.

Each cost exposes its value on a particle cloud together with the map
``x -> gradient(x)`` whose pairing ``sum_i w_i <gradient(x_i), F(x_i)>`` is
the derivative of the cost along ``(I + eps F)_# mu`` at ``eps = 0``.
"""

from __future__ import annotations

import numpy as np

from .controls import ControlField
from .measures import EmpiricalMeasure


class CostError(ValueError):
    pass


# -- scalar potentials V : R^d -> R -----------------------------------------

class Potential:
    name = "potential"

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def spec(self):
        return {"potential": self.name}


class QuadraticPotential(Potential):
    """``V(x) = |x - center|^2``."""

    name = "quadratic"

    def __init__(self, center=0.0, dim=None):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if dim is not None and c.shape[0] == 1 and dim > 1:
            c = np.full(dim, c[0])
        self.center = c

    def value(self, x):
        return np.sum((x - self.center) ** 2, axis=1)

    def gradient(self, x):
        return 2.0 * (x - self.center)

    def spec(self):
        return {"potential": self.name, "center": self.center.tolist()}


class GaussianBump(Potential):
    """``V(x) = exp(-|x - center|^2 / width^2)``; strictly positive."""

    name = "gaussian_bump"

    def __init__(self, center=0.0, width=1.0, dim=None):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if dim is not None and c.shape[0] == 1 and dim > 1:
            c = np.full(dim, c[0])
        self.center = c
        self.width = float(width)

    def value(self, x):
        return np.exp(-np.sum((x - self.center) ** 2, axis=1) / self.width ** 2)

    def gradient(self, x):
        return (-2.0 / self.width ** 2) * self.value(x)[:, None] * (x - self.center)

    def spec(self):
        return {"potential": self.name, "center": self.center.tolist(),
                "width": self.width}


POTENTIALS = {"quadratic": QuadraticPotential, "gaussian_bump": GaussianBump}


# -- terminal costs -----------------------------------------------------------

class TerminalCost:
    name = "terminal"

    def value(self, x, w) -> float:
        raise NotImplementedError

    def gradient(self, x, w) -> np.ndarray:
        raise NotImplementedError

    def spec(self):
        return {"family": self.name}


class Variance(TerminalCost):
    """``1/2 int |x - mean|^2 dmu``; gradient ``x - mean``."""

    name = "variance"

    def value(self, x, w):
        dev = x - w @ x
        return 0.5 * float(w @ np.sum(dev ** 2, axis=1))

    def gradient(self, x, w):
        return x - w @ x


class PotentialEnergy(TerminalCost):
    """``(int V dmu) ** power``."""

    name = "potential"

    def __init__(self, potential: Potential, power: float = 1.0):
        if power <= 0:
            raise CostError("power must be positive")
        self.potential = potential
        self.power = float(power)

    def _integral(self, x, w):
        I = float(w @ self.potential.value(x))
        if self.power != 1.0 and I <= 0.0:
            raise CostError(
                f"power {self.power} of a non-positive integral ({I:.3g}) "
                "is not differentiable")
        return I

    def value(self, x, w):
        I = self._integral(x, w)
        return I if self.power == 1.0 else I ** self.power

    def gradient(self, x, w):
        g = self.potential.gradient(x)
        if self.power == 1.0:
            return g
        return self.power * self._integral(x, w) ** (self.power - 1.0) * g

    def spec(self):
        return {"family": self.name, **self.potential.spec(), "power": self.power}


class TargetAttraction(PotentialEnergy):
    """Mean squared distance to a target point."""

    name = "target_attraction"

    def __init__(self, target):
        super().__init__(QuadraticPotential(target), 1.0)
        self.target = self.potential.center

    def spec(self):
        return {"family": self.name, "target": self.target.tolist()}


def eval_terminal(cost: TerminalCost, mu: EmpiricalMeasure) -> float:
    return cost.value(mu.points, mu.weights)


def terminal_gradient(cost: TerminalCost, mu: EmpiricalMeasure) -> np.ndarray:
    return cost.gradient(mu.points, mu.weights)


# -- running costs ------------------------------------------------------------

class RunningCost:
    """``L(mu, omega) = int l(x, omega(x)) dmu(x)`` for a C^1 integrand."""

    name = "running"

    def integrand(self, x, v):
        raise NotImplementedError

    def grad_x(self, x, v):
        raise NotImplementedError

    def grad_v(self, x, v):
        raise NotImplementedError

    def value(self, x, w, omega: ControlField) -> float:
        return float(w @ self.integrand(x, omega.value(x)))

    def gradient(self, x, omega: ControlField) -> np.ndarray:
        """``grad_x l(x, omega(x)) + D omega(x)^T grad_v l(x, omega(x))``."""
        v = omega.value(x)
        return self.grad_x(x, v) + np.einsum(
            "nji,nj->ni", omega.jacobian(x), self.grad_v(x, v))

    def param_gradient(self, x, w, omega: ControlField) -> np.ndarray:
        """Derivative of ``L(mu, omega)`` in the control parameters."""
        v = omega.value(x)
        return omega.basis.pair(x, w[:, None] * self.grad_v(x, v))

    def spec(self):
        return {"family": self.name}


class ControlEnergy(RunningCost):
    """``l(x, v) = lam |v|^2``."""

    name = "control_energy"

    def __init__(self, lam: float = 1.0):
        self.lam = float(lam)

    def integrand(self, x, v):
        return self.lam * np.sum(v ** 2, axis=1)

    def grad_x(self, x, v):
        return np.zeros_like(x)

    def grad_v(self, x, v):
        return 2.0 * self.lam * v

    def spec(self):
        return {"family": self.name, "lam": self.lam}


class Tracking(ControlEnergy):
    """``l(x, v) = lam |v|^2 + beta |x - target|^2``."""

    name = "tracking"

    def __init__(self, lam: float = 1.0, beta: float = 1.0, target=0.0):
        super().__init__(lam)
        self.beta = float(beta)
        self.target = np.atleast_1d(np.asarray(target, dtype=float))

    def integrand(self, x, v):
        return super().integrand(x, v) + self.beta * np.sum((x - self.target) ** 2, axis=1)

    def grad_x(self, x, v):
        return 2.0 * self.beta * (x - self.target)

    def spec(self):
        return {"family": self.name, "lam": self.lam, "beta": self.beta,
                "target": self.target.tolist()}


def eval_running(cost: RunningCost, mu: EmpiricalMeasure, omega: ControlField) -> float:
    return cost.value(mu.points, mu.weights, omega)


def running_gradient(cost: RunningCost, mu: EmpiricalMeasure,
                     omega: ControlField) -> np.ndarray:
    return cost.gradient(mu.points, omega)


def make_terminal(spec: dict, dim: int) -> TerminalCost:
    family = spec.get("family")
    if family == "variance":
        return Variance()
    if family == "target_attraction":
        return TargetAttraction(_vec(spec.get("target", 0.0), dim))
    if family == "potential":
        name = spec.get("potential", "quadratic")
        if name not in POTENTIALS:
            raise CostError(f"unknown potential {name!r}; available: "
                            f"{', '.join(POTENTIALS)}")
        kw = {k: v for k, v in spec.items()
              if k in ("center", "width")}
        return PotentialEnergy(POTENTIALS[name](dim=dim, **kw),
                               spec.get("power", 1.0))
    raise CostError(f"unknown terminal cost {family!r}; available: "
                    "variance, potential, target_attraction")


def make_running(spec, dim: int):
    if spec is None:
        return None
    family = spec.get("family")
    if family == "control_energy":
        return ControlEnergy(spec.get("lam", 1.0))
    if family == "tracking":
        return Tracking(spec.get("lam", 1.0), spec.get("beta", 1.0),
                        _vec(spec.get("target", 0.0), dim))
    raise CostError(f"unknown running cost {family!r}; available: "
                    "control_energy, tracking")


def _vec(v, dim):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape[0] == 1 and dim > 1:
        a = np.full(dim, a[0])
    return a
