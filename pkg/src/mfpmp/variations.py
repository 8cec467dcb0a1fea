"""Needle-like control variations and first-order perturbations of the flow.

All linearised systems here are integrated with RK4 on the grid of a stored
forward trajectory; half-stage positions come from the trajectory's Hermite
midpoints, so nothing is re-simulated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controls import ControlField, ControlSignal
from .dynamics import NonlocalField, Trajectory
from .measures import EmpiricalMeasure


@dataclass(frozen=True)
class NeedleParams:
    """Replace the control by ``omega`` on ``[tau - epsilon, tau]``."""

    omega: ControlField
    tau: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.tau - self.epsilon < -1e-12:
            raise ValueError(
                f"epsilon={self.epsilon} exceeds tau={self.tau}")


@dataclass(frozen=True)
class PerturbationField:
    """``F_t(x_i(tau))`` on the grid ``[tau, T]``, shape ``(m, n, d)``."""

    times: np.ndarray
    vectors: np.ndarray
    start_index: int

    def at(self, k: int) -> np.ndarray:
        """Vectors at global trajectory index ``k``."""
        return self.vectors[k - self.start_index]


def needle_control(u: ControlSignal, params: NeedleParams) -> ControlSignal:
    if params.epsilon == 0:
        return u
    a, b = params.tau - params.epsilon, params.tau
    if b > u.T + 1e-12:
        raise ValueError(f"tau={b} lies beyond the horizon {u.T}")
    a = max(a, 0.0)
    grid = np.union1d(u.time_grid, [a, b])
    # drop points created within rounding distance of an existing one
    keep = np.concatenate([[True], np.diff(grid) > 1e-12])
    grid = grid[keep]
    fields = []
    for lo, hi in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (lo + hi)
        if a - 1e-12 <= lo and hi <= b + 1e-12:
            fields.append(params.omega)
        else:
            fields.append(u.at(mid))
    return ControlSignal(grid, fields)


def control_before(u: ControlSignal, traj: Trajectory, k: int) -> ControlField:
    """Control active on the step that ends at grid index ``k``."""
    return u.fields[traj.step_control[max(k - 1, 0)]]


def _step_field(u, traj, s):
    return None if u is None else u.fields[traj.step_control[s]]


def _jacobian(field, omega, t, x, w):
    J = field.dx_velocity(t, x, x, w)
    if omega is not None:
        J = J + omega.jacobian(x)
    return J


class _Linearisation:
    """Coefficients of the linearised particle flow at one stage."""

    def __init__(self, field: NonlocalField, omega, t, x, w):
        self.w = w
        self.J = _jacobian(field, omega, t, x, w)
        self.G = field.measure_derivative(t, x, x) if field.is_interacting else None

    def local(self, delta):
        return np.einsum("nab,nb->na", self.J, delta)

    def coupling(self, delta):
        """``sum_j w_j Gamma_(x_i)(x_j) delta_j``."""
        if self.G is None:
            return np.zeros_like(delta)
        return np.einsum("j,ijab,jb->ia", self.w, self.G, delta)

    def local_T(self, r):
        return np.einsum("nba,nb->na", self.J, r)

    def coupling_T(self, r):
        """``sum_j w_j Gamma_(x_j)(x_i)^T r_j``."""
        if self.G is None:
            return np.zeros_like(r)
        return np.einsum("j,jiba,jb->ia", self.w, self.G, r)


def _stages(field, omega, traj, s):
    t0, t1 = traj.times[s], traj.times[s + 1]
    tm = 0.5 * (t0 + t1)
    w = traj.weights
    lin0 = _Linearisation(field, omega, t0, traj.positions[s], w)
    linm = _Linearisation(field, omega, tm, traj.midpoints[s], w)
    lin1 = _Linearisation(field, omega, t1, traj.positions[s + 1], w)
    return lin0, linm, lin1


def _rk4_forward(rhs, state, stages, h):
    lin0, linm, lin1 = stages
    k1 = rhs(lin0, state)
    k2 = rhs(linm, tuple(a + 0.5 * h * b for a, b in zip(state, k1)))
    k3 = rhs(linm, tuple(a + 0.5 * h * b for a, b in zip(state, k2)))
    k4 = rhs(lin1, tuple(a + h * b for a, b in zip(state, k3)))
    return tuple(a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(state, k1, k2, k3, k4))


def flow_directional_derivative(field: NonlocalField, u: Optional[ControlSignal],
                                trajectory: Trajectory, F0: np.ndarray,
                                tau: float = 0.0) -> np.ndarray:
    """Derivative of the flow w.r.t. a perturbation of the starting cloud.

    The cloud at ``tau`` is moved to ``(I + eps F0)_# mu(tau)`` and ``w``
    measures how the flow map, applied at the unperturbed points, reacts
    through the changed measure. Returns ``w`` on the grid ``[tau, T]`` with
    shape ``(m, n, d)``; ``w(tau) = 0``.

    The transported source ``D_x Phi_(tau, t)(x_j) F0_j`` is integrated
    alongside ``w`` as ``dy/dt = D_x(v + u) y``.
    """
    k0 = trajectory.index_of(tau)
    F0 = np.asarray(F0, dtype=float).reshape(trajectory.positions.shape[1:])

    def rhs(lin, state):
        y, w = state
        return lin.local(y), lin.local(w) + lin.coupling(y + w)

    state = (F0.copy(), np.zeros_like(F0))
    out = [state[1]]
    for s in range(k0, trajectory.n_steps):
        h = trajectory.times[s + 1] - trajectory.times[s]
        stages = _stages(field, _step_field(u, trajectory, s), trajectory, s)
        state = _rk4_forward(rhs, state, stages, h)
        out.append(state[1])
    return np.array(out)


def transported_perturbation(field: NonlocalField, u: Optional[ControlSignal],
                             trajectory: Trajectory, F0: np.ndarray,
                             tau: float = 0.0) -> np.ndarray:
    """Solution of the full linearised flow ``dF/dt = J F + sum_j w_j G F``.

    Equals ``D_x Phi F0 + w`` with ``w`` from
    :func:`flow_directional_derivative`.
    """
    k0 = trajectory.index_of(tau)
    F = np.asarray(F0, dtype=float).reshape(trajectory.positions.shape[1:]).copy()

    def rhs(lin, state):
        (f,) = state
        return (lin.local(f) + lin.coupling(f),)

    out = [F]
    state = (F,)
    for s in range(k0, trajectory.n_steps):
        h = trajectory.times[s + 1] - trajectory.times[s]
        stages = _stages(field, _step_field(u, trajectory, s), trajectory, s)
        state = _rk4_forward(rhs, state, stages, h)
        out.append(state[0])
    return np.array(out)


def needle_first_order(field: NonlocalField, u: ControlSignal,
                       trajectory: Trajectory, params: NeedleParams) -> PerturbationField:
    """First-order displacement ``F_t`` produced by a needle at ``tau``.

    Starts from ``omega(x(tau)) - u*(tau, x(tau))``, where ``u*(tau)`` is the
    control in force just before ``tau``; ``epsilon`` is ignored.
    """
    k0 = trajectory.index_of(params.tau)
    x_tau = trajectory.positions[k0]
    F0 = params.omega.value(x_tau) - control_before(u, trajectory, k0).value(x_tau)
    vec = transported_perturbation(field, u, trajectory, F0, params.tau)
    return PerturbationField(trajectory.times[k0:], vec, k0)


def first_order_condition(problem, u: ControlSignal, trajectory: Trajectory,
                          params: NeedleParams,
                          perturbation: Optional[PerturbationField] = None) -> float:
    """Directional derivative of the total cost along a needle variation.

    Nonnegative for every needle at an optimal control. The running-cost
    integral is a per-step trapezoid rule using the control of each step.
    """
    if perturbation is None:
        perturbation = needle_first_order(problem.field, u, trajectory, params)
    k0 = perturbation.start_index
    w = trajectory.weights
    xT = trajectory.positions[-1]
    value = float(np.sum(w[:, None] * problem.terminal.gradient(xT, w)
                         * perturbation.vectors[-1]))
    if problem.running is None:
        return value
    x_tau = trajectory.positions[k0]
    value += (problem.running.value(x_tau, w, params.omega)
              - problem.running.value(x_tau, w, control_before(u, trajectory, k0)))
    value += running_pairing_integral(problem, u, trajectory, perturbation)[-1]
    return value


def running_pairing_integral(problem, u, trajectory, perturbation) -> np.ndarray:
    """Cumulative ``int_tau^t sum_i w_i <grad L(x_i), F_s(x_i)> ds`` on the grid."""
    k0 = perturbation.start_index
    w = trajectory.weights
    acc = [0.0]
    if problem.running is None:
        return np.zeros(trajectory.n_steps - k0 + 1)
    for s in range(k0, trajectory.n_steps):
        omega = u.fields[trajectory.step_control[s]]
        h = trajectory.times[s + 1] - trajectory.times[s]
        a = _pair(problem, omega, trajectory.positions[s], w, perturbation.at(s))
        b = _pair(problem, omega, trajectory.positions[s + 1], w, perturbation.at(s + 1))
        acc.append(acc[-1] + 0.5 * h * (a + b))
    return np.array(acc)


def _pair(problem, omega, x, w, F):
    g = problem.running.gradient(x, omega)
    return float(np.sum(w[:, None] * g * F))


def perturbed_measure(mu: EmpiricalMeasure, F: np.ndarray, eps: float) -> EmpiricalMeasure:
    """``(I + eps F)_# mu`` for per-particle vectors ``F``."""
    return mu.with_points(mu.points + eps * np.asarray(F))


def needle_grid(problem, basis, trajectory: Trajectory, n_omega: int = 10,
                n_tau: int = 10, seed: int = 0, scale: float = 1.0):
    """Seeded ``n_omega x n_tau`` family of needles.

    The fields have parameters drawn uniformly from ``[-scale, scale]`` and
    pulled back into the C^1 ball; the times are the grid points nearest to
    ``(j + 1/2) T / n_tau``.
    """
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(-scale, scale, size=(n_omega, basis.n_params))
    omegas = [problem.project_field(ControlField(basis, th, problem.c1_bound))
              for th in thetas]
    dt = trajectory.dt
    taus = [trajectory.times[min(max(int(round((j + 0.5) * problem.T / n_tau / dt)), 1),
                                 trajectory.n_steps)]
            for j in range(n_tau)]
    return [NeedleParams(o, float(t)) for o in omegas for t in taus]
