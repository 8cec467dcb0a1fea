"""Direct method: projected gradient descent over piecewise-constant controls."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .controls import ControlSignal
from .dynamics import Trajectory
from .pmp import CostateCloud, costate_backward
from .problem import Problem

log = logging.getLogger(__name__)


def running_cost_integral(problem: Problem, u: ControlSignal, traj: Trajectory) -> float:
    """Simpson rule per step, midpoint positions from the Hermite estimates."""
    if problem.running is None:
        return 0.0
    w = traj.weights
    total = 0.0
    for s in range(traj.n_steps):
        omega = u.fields[traj.step_control[s]]
        h = traj.times[s + 1] - traj.times[s]
        total += h / 6.0 * (problem.running.value(traj.positions[s], w, omega)
                            + 4 * problem.running.value(traj.midpoints[s], w, omega)
                            + problem.running.value(traj.positions[s + 1], w, omega))
    return total


def total_cost(problem: Problem, u: ControlSignal,
               trajectory: Optional[Trajectory] = None) -> float:
    traj = problem.simulate(u) if trajectory is None else trajectory
    xT = traj.positions[-1]
    return problem.terminal.value(xT, traj.weights) + running_cost_integral(problem, u, traj)


def parameter_gradient(problem: Problem, u: ControlSignal,
                       trajectory: Optional[Trajectory] = None) -> np.ndarray:
    """Gradient of the total cost w.r.t. the control parameters, ``(K, P)``.

    Assembled from the costate as ``-int_{t_k}^{t_{k+1}} dH/dtheta dt``.
    """
    traj = problem.simulate(u) if trajectory is None else trajectory
    return costate_backward(problem, traj, u, with_gradient=True).param_gradient


@dataclass
class Iterate:
    control: ControlSignal
    cost: float
    grad_norm: float


@dataclass
class OptimizationRun:
    problem: Problem
    iterates: List[Iterate]
    control: ControlSignal
    trajectory: Trajectory
    costate: CostateCloud
    converged: bool
    message: str = ""

    @property
    def cost(self) -> float:
        return self.iterates[-1].cost

    @property
    def costs(self) -> np.ndarray:
        return np.array([it.cost for it in self.iterates])


def _evaluate(problem, u) -> Tuple[float, np.ndarray, Trajectory, CostateCloud]:
    traj = problem.simulate(u)
    J = total_cost(problem, u, traj)
    cs = costate_backward(problem, traj, u, with_gradient=True)
    return J, cs.param_gradient, traj, cs


def _residual(problem, u, g, lengths) -> float:
    # projected-gradient step, rescaled so it equals |g| away from the constraint
    proj = problem.project(u.with_params(u.params - g / lengths)).params
    return float(np.linalg.norm((proj - u.params) * lengths))


def optimize(problem: Problem, u0: ControlSignal, max_iters: int = 500,
             tol: float = 1e-5, armijo: float = 1e-4,
             max_halvings: int = 50) -> OptimizationRun:
    """Projected gradient descent with Barzilai-Borwein steps and backtracking.

    The descent direction is the L^2-in-time gradient (parameter gradient
    divided by interval length). Every trial point is projected onto the
    C^1 ball; a trial is accepted only if it satisfies the Armijo condition,
    so accepted costs never increase. Stops when the projected-gradient
    residual (the plain gradient norm when no constraint is active) drops
    below ``tol`` or the projected step stalls.
    """
    u = problem.project(u0)
    lengths = np.diff(u.time_grid)[:, None]
    J, g, traj, cs = _evaluate(problem, u)
    iterates = [Iterate(u, J, float(np.linalg.norm(g)))]
    step = 1.0
    prev = None
    converged, message = False, "iteration cap reached"

    for it in range(max_iters):
        res = _residual(problem, u, g, lengths)
        if res <= tol:
            converged, message = True, f"projected gradient {res:.3g} <= {tol:g}"
            break
        direction = -g / lengths
        theta = u.params
        if prev is not None:
            s_vec = theta - prev[0]
            y_vec = (g - prev[1]) / lengths
            sy = float(np.sum(s_vec * y_vec))
            if sy > 0:
                step = float(np.sum(s_vec * s_vec)) / sy
        accepted = False
        for _ in range(max_halvings):
            trial = problem.project(u.with_params(theta + step * direction))
            delta = trial.params - theta
            if np.max(np.abs(delta)) <= 1e-15 * (1.0 + np.max(np.abs(theta))):
                break
            try:
                traj_new = problem.simulate(trial)
            except Exception as exc:  # blow-up on an overly long step
                log.debug("trial step %g failed: %s", step, exc)
                step *= 0.5
                continue
            J_new = total_cost(problem, trial, traj_new)
            if J_new <= J + armijo * float(np.sum(g * delta)):
                cs_new = costate_backward(problem, traj_new, trial, with_gradient=True)
                g_new = cs_new.param_gradient
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed" if np.any(delta) else "projected step stalled"
            converged = message == "projected step stalled"
            break
        prev = (theta, g)
        u, J, g, traj, cs = trial, J_new, g_new, traj_new, cs_new
        iterates.append(Iterate(u, J, float(np.linalg.norm(g))))
        log.debug("iter %d cost %.12g |g| %.3g step %.3g", it, J, iterates[-1].grad_norm, step)
    else:
        res = _residual(problem, u, g, lengths)
        if res <= tol:
            converged, message = True, f"projected gradient {res:.3g} <= {tol:g}"

    return OptimizationRun(problem, iterates, u, traj, cs, converged, message)
