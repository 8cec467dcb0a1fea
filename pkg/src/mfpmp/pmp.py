"""Forward-backward extremal system and checks of the maximum principle.

The costate measure is stored as one covector ``r_i`` per particle, i.e. as
a graph over the forward cloud: ``nu(t) = sum_i w_i delta_(x_i(t), r_i(t))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .controls import ControlField, ControlSignal
from .dynamics import NonlocalField, SimulationError, Trajectory, support_bound
from .functionals import RunningCost, TerminalCost
from .measures import EmpiricalMeasure
from .variations import (NeedleParams, PerturbationField, _Linearisation,
                         control_before, needle_first_order,
                         running_pairing_integral)


@dataclass(frozen=True)
class PhaseCloud:
    """Particles ``(x_i, r_i)`` with weights ``w_i`` in R^{2d}."""

    x: np.ndarray
    r: np.ndarray
    w: np.ndarray

    @property
    def marginal(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.x, self.w)


@dataclass(frozen=True)
class CostateCloud:
    times: np.ndarray
    positions: np.ndarray   # the forward trajectory's array, not a copy
    costates: np.ndarray    # (N+1, n, d)
    weights: np.ndarray
    # d/dtheta of the total cost per control interval, if requested
    param_gradient: Optional[np.ndarray] = None

    def at(self, k: int) -> PhaseCloud:
        return PhaseCloud(self.positions[k], self.costates[k], self.weights)

    @property
    def phase_particles(self):
        return [self.at(k) for k in range(self.times.shape[0])]


def terminal_costate(mu_T: EmpiricalMeasure, cost: TerminalCost) -> np.ndarray:
    return -cost.gradient(mu_T.points, mu_T.weights)


def _costate_rhs(problem, omega, lin: _Linearisation, x, r):
    dr = -lin.local_T(r) - lin.coupling_T(r)
    if problem.running is not None:
        dr = dr + problem.running.gradient(x, omega)
    return dr


def _dH_dtheta(problem, omega: ControlField, x, r, w) -> np.ndarray:
    g = omega.basis.pair(x, w[:, None] * r)
    if problem.running is not None:
        g = g - problem.running.param_gradient(x, w, omega)
    return g


def costate_backward(problem, trajectory: Trajectory, u: ControlSignal,
                     terminal: Optional[np.ndarray] = None,
                     with_gradient: bool = False) -> CostateCloud:
    """Integrate the costate from ``T`` down to 0 along a stored trajectory.

    Per particle,

        dr_i/dt = grad L(x_i) - (D_x u + D_x v[mu])(x_i)^T r_i
                  - sum_j w_j Gamma_(x_j)(x_i)^T r_j

    with ``r_i(T) = -grad phi(x_i(T))``. With ``with_gradient`` the
    parameter gradient ``-int dH/dtheta dt`` of each control interval is
    accumulated with the same RK4 stages. ``u=None`` means no control and
    needs ``problem.running`` to be None.
    """
    if u is None and (with_gradient or problem.running is not None):
        raise ValueError("a control signal is required with a running cost or gradient")
    field = problem.field
    w = trajectory.weights
    N = trajectory.n_steps
    if terminal is None:
        terminal = terminal_costate(trajectory.state(N), problem.terminal)
    r = np.array(terminal, dtype=float)
    out = np.empty_like(trajectory.positions)
    out[N] = r
    grad = np.zeros((u.n_intervals, u.basis.n_params)) if with_gradient else None
    limit = 1e12 * (1.0 + np.max(np.abs(r)))
    l_next = None

    for s in range(N - 1, -1, -1):
        omega = None if u is None else u.fields[trajectory.step_control[s]]
        t0, t1 = trajectory.times[s], trajectory.times[s + 1]
        h = t1 - t0
        x1, xm, x0 = trajectory.positions[s + 1], trajectory.midpoints[s], trajectory.positions[s]
        if l_next is not None and l_next[0] is omega:
            l1 = l_next[1]
        else:
            l1 = _Linearisation(field, omega, t1, x1, w)
        lm = _Linearisation(field, omega, 0.5 * (t0 + t1), xm, w)
        l0 = _Linearisation(field, omega, t0, x0, w)
        l_next = (omega, l0)
        # backward in time: step -h
        k1 = _costate_rhs(problem, omega, l1, x1, r)
        r2 = r - 0.5 * h * k1
        k2 = _costate_rhs(problem, omega, lm, xm, r2)
        r3 = r - 0.5 * h * k2
        k3 = _costate_rhs(problem, omega, lm, xm, r3)
        r4 = r - h * k3
        k4 = _costate_rhs(problem, omega, l0, x0, r4)
        if with_gradient:
            q = (_dH_dtheta(problem, omega, x1, r, w)
                 + 2 * _dH_dtheta(problem, omega, xm, r2, w)
                 + 2 * _dH_dtheta(problem, omega, xm, r3, w)
                 + _dH_dtheta(problem, omega, x0, r4, w))
            grad[trajectory.step_control[s]] -= (h / 6.0) * q
        r = r - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(r)) or np.max(np.abs(r)) > limit:
            raise SimulationError(f"costate blew up at t={t0:.6g}")
        out[s] = r
    out.setflags(write=False)
    return CostateCloud(trajectory.times, trajectory.positions, out, w, grad)


def hamiltonian(nu: PhaseCloud, field: NonlocalField, running: Optional[RunningCost],
                omega: ControlField, t: float) -> float:
    """``sum_i w_i <r_i, v[mu](t, x_i) + omega(x_i)> - L(mu, omega)``."""
    v = field.velocity(t, nu.x, nu.x, nu.w) + omega.value(nu.x)
    H = float(np.sum(nu.w[:, None] * nu.r * v))
    if running is not None:
        H -= running.value(nu.x, nu.w, omega)
    return H


def hamiltonian_curve(problem, u: ControlSignal, costate: CostateCloud,
                      trajectory: Trajectory) -> np.ndarray:
    """``H(t, nu(t), u(t))`` at every grid time (control of the next step)."""
    N = trajectory.n_steps
    vals = np.empty(N + 1)
    for k in range(N + 1):
        omega = u.fields[trajectory.step_control[min(k, N - 1)]]
        vals[k] = hamiltonian(costate.at(k), problem.field, problem.running,
                              omega, trajectory.times[k])
    return vals


def k_function(problem, u: ControlSignal, trajectory: Trajectory,
               costate: CostateCloud, params: NeedleParams,
               perturbation: Optional[PerturbationField] = None):
    """Needle-indexed quantity that stays constant on ``[tau, T]``.

    Returns ``(times, values)``. Its value at ``T`` is minus the first-order
    condition and its value at ``tau`` is the Hamiltonian gap
    ``H(omega) - H(u*(tau))``.
    """
    if perturbation is None:
        perturbation = needle_first_order(problem.field, u, trajectory, params)
    k0 = perturbation.start_index
    w = trajectory.weights
    pairing = np.einsum("n,knd,knd->k", w, costate.costates[k0:], perturbation.vectors)
    values = pairing - running_pairing_integral(problem, u, trajectory, perturbation)
    if problem.running is not None:
        x_tau = trajectory.positions[k0]
        values += (problem.running.value(x_tau, w, control_before(u, trajectory, k0))
                   - problem.running.value(x_tau, w, params.omega))
    return trajectory.times[k0:], values


# -- maximisation and stationarity -------------------------------------------

@dataclass
class CheckEntry:
    time: float
    H_star: float
    H_best: float
    margin: float          # H_star - H_best (violation when < -tol)
    tol: float
    violated: bool
    best_index: int = -1


@dataclass
class CheckReport:
    name: str
    entries: List[CheckEntry] = field(default_factory=list)
    skipped: List[float] = field(default_factory=list)

    @property
    def violations(self) -> List[CheckEntry]:
        return [e for e in self.entries if e.violated]

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def worst_margin(self) -> float:
        if not self.entries:
            return 0.0
        return min(e.margin + e.tol for e in self.entries)

    def summary(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "n_times": len(self.entries), "n_violations": len(self.violations),
                "n_skipped": len(self.skipped),
                "worst_slack": self.worst_margin,
                "violations": [{"time": e.time, "margin": e.margin, "tol": e.tol}
                               for e in self.violations]}


def default_check_times(u: ControlSignal, trajectory: Trajectory) -> List[int]:
    """Grid indices nearest the midpoint of each control interval."""
    idx = []
    for a, b in zip(u.time_grid[:-1], u.time_grid[1:]):
        k = int(round(0.5 * (a + b) / trajectory.dt))
        idx.append(min(max(k, 0), trajectory.n_steps))
    return sorted(set(idx))


def default_candidates(problem, basis, levels: int = 5, max_count: int = 4096,
                       center: Optional[np.ndarray] = None) -> List[ControlField]:
    """Tensor grid over the parameter box, kept inside the C^1 ball.

    Along each parameter the box extends to the largest value that stays
    admissible on its own; ``center`` shifts the grid.
    """
    P = basis.n_params
    R = problem.working_radius
    L = problem.c1_bound
    if not np.isfinite(L):
        raise ValueError("a finite C^1 bound is needed to build candidates")
    while levels > 2 and levels ** P > max_count:
        levels -= 1
    half = np.array([L / max(basis.c1_norm(np.eye(P)[p], R), 1e-300) for p in range(P)])
    axes = [np.linspace(-h, h, levels) for h in half]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, P)
    if center is not None:
        mesh = mesh + center
    out = []
    for theta in mesh:
        if basis.c1_norm(theta, R) <= L * (1 + 1e-12):
            out.append(ControlField(basis, theta, L))
    return out


def maximization_check(problem, trajectory: Trajectory, costate: CostateCloud,
                       u: ControlSignal, candidates: Sequence[ControlField],
                       times: Optional[Sequence[int]] = None,
                       rtol: Optional[float] = None) -> CheckReport:
    """``H(t, nu(t), u*(t)) >= max_candidates H(t, nu(t), omega) - tol``.

    ``times`` are grid indices; ``tol = rtol (1 + |H(u*)|)``.
    """
    rtol = problem.tol("maximization", 1e-4) if rtol is None else rtol
    if times is None:
        times = default_check_times(u, trajectory)
    report = CheckReport("maximization")
    N = trajectory.n_steps
    for k in times:
        t = trajectory.times[k]
        nu = costate.at(k)
        omega = u.fields[trajectory.step_control[min(k, N - 1)]]
        H_star = hamiltonian(nu, problem.field, problem.running, omega, t)
        vals = [hamiltonian(nu, problem.field, problem.running, c, t) for c in candidates]
        j = int(np.argmax(vals)) if vals else -1
        H_best = vals[j] if vals else H_star
        tol = rtol * (1.0 + abs(H_star))
        margin = H_star - H_best
        report.entries.append(CheckEntry(float(t), H_star, H_best, margin, tol,
                                         margin < -tol, j))
    return report


def stationarity_check(problem, trajectory: Trajectory, costate: CostateCloud,
                       u: ControlSignal, times: Optional[Sequence[int]] = None,
                       rtol: Optional[float] = None, step: float = 1e-4) -> CheckReport:
    """Central-difference derivatives of ``theta -> H`` vanish at ``u*(t)``.

    Times whose control sits on the boundary of the C^1 ball are skipped.
    Each entry's ``margin`` is ``-max_p |dH/dtheta_p|``.
    """
    rtol = problem.tol("stationarity", 1e-3) if rtol is None else rtol
    if times is None:
        times = default_check_times(u, trajectory)
    report = CheckReport("stationarity")
    N = trajectory.n_steps
    for k in times:
        t = trajectory.times[k]
        nu = costate.at(k)
        omega = u.fields[trajectory.step_control[min(k, N - 1)]]
        if omega.on_boundary(problem.working_radius):
            report.skipped.append(float(t))
            continue
        H_star = hamiltonian(nu, problem.field, problem.running, omega, t)
        derivs = []
        for p in range(omega.basis.n_params):
            e = np.zeros(omega.basis.n_params)
            e[p] = step * (1.0 + abs(omega.theta[p]))
            hp = hamiltonian(nu, problem.field, problem.running, omega.with_theta(omega.theta + e), t)
            hm = hamiltonian(nu, problem.field, problem.running, omega.with_theta(omega.theta - e), t)
            derivs.append((hp - hm) / (2 * e[p]))
        worst = float(np.max(np.abs(derivs)))
        tol = rtol * (1.0 + abs(H_star))
        report.entries.append(CheckEntry(float(t), H_star, H_star, -worst, tol, worst > tol))
    return report


def terminal_structure_error(problem, trajectory: Trajectory, costate: CostateCloud) -> float:
    """Largest deviation of ``r(T)`` from ``-grad phi(x(T))``."""
    expected = terminal_costate(trajectory.state(trajectory.n_steps), problem.terminal)
    return float(np.max(np.abs(costate.costates[-1] - expected)))


def containment_radius(problem, u: ControlSignal) -> float:
    """Radius R certifying that the compactified Hamiltonian equals H."""
    return support_bound(problem.field, u, problem.mu0, problem.T)
