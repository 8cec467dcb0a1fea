"""Non-local velocity fields and the controlled particle flow.

The velocity felt by a particle at ``x`` is

    v[mu](t, x) + omega(x) = sum_j w_j H(t, x, y_j) + v_l(t, x) + omega(x)

and the cloud is advanced with classical RK4, re-evaluating the interaction
sum at every stage from the stage positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .controls import ControlField, ControlSignal
from .measures import EmpiricalMeasure, support_radius
from .transport import w1

BLOWUP_FACTOR = 1e3


class SimulationError(RuntimeError):
    pass


# -- interaction kernels -----------------------------------------------------

class Kernel:
    """Interaction kernel ``H(t, x, y)`` with analytic Jacobians."""

    name = "kernel"

    def value(self, t, x, y):
        """``H(t, x_i, y_j)`` as an ``(n, m, d)`` array."""
        raise NotImplementedError

    def jacobians(self, t, x, y):
        """``(D_x H, D_y H)``, each of shape ``(n, m, d, d)``."""
        raise NotImplementedError

    def convolve(self, t, x, y, w):
        """``sum_j w_j H(t, x_i, y_j)``, shape ``(n, d)``."""
        return np.einsum("j,ijd->id", w, self.value(t, x, y))

    def convolve_dx(self, t, x, y, w):
        """``sum_j w_j D_x H(t, x_i, y_j)``, shape ``(n, d, d)``."""
        dx, _ = self.jacobians(t, x, y)
        return np.einsum("j,ijab->iab", w, dx)

    # constants of the (F) hypothesis: |D_x H| <= lip_x, |D_y H| <= lip_y,
    # |sum_j w_j H(x, y_j)| <= growth * (1 + max(|x|, max_j |y_j|))
    lip_x = 0.0
    lip_y = 0.0
    growth = 0.0

    def spec(self) -> dict:
        return {"family": self.name}


class ZeroKernel(Kernel):
    name = "zero"

    def value(self, t, x, y):
        return np.zeros((x.shape[0], y.shape[0], x.shape[1]))

    def jacobians(self, t, x, y):
        z = np.zeros((x.shape[0], y.shape[0], x.shape[1], x.shape[1]))
        return z, z.copy()

    def convolve(self, t, x, y, w):
        return np.zeros_like(x)

    def convolve_dx(self, t, x, y, w):
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))


class LinearAttraction(Kernel):
    """``H(x, y) = a (y - x)``: consensus when ``a > 0``."""

    name = "linear_attraction"

    def __init__(self, a: float):
        self.a = float(a)
        self.lip_x = self.lip_y = abs(self.a)
        self.growth = 2.0 * abs(self.a)

    def value(self, t, x, y):
        return self.a * (y[None, :, :] - x[:, None, :])

    def jacobians(self, t, x, y):
        d = x.shape[1]
        eye = np.broadcast_to(np.eye(d), (x.shape[0], y.shape[0], d, d))
        return -self.a * eye, self.a * eye

    def convolve(self, t, x, y, w):
        return self.a * ((w @ y)[None, :] - x)

    def convolve_dx(self, t, x, y, w):
        d = x.shape[1]
        return np.broadcast_to(-self.a * w.sum() * np.eye(d), (x.shape[0], d, d)).copy()

    def spec(self):
        return {"family": self.name, "a": self.a}


class GaussianGradient(Kernel):
    """``H(x, y) = -amplitude (2/s^2) exp(-|x-y|^2/s^2) (x - y)``.

    Gradient of the Gaussian interaction potential; ``amplitude > 0``
    attracts, ``amplitude < 0`` repels.
    """

    name = "gaussian"

    def __init__(self, sigma: float, amplitude: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.amplitude = float(amplitude)
        c = 2.0 * abs(self.amplitude) / self.sigma ** 2
        self.lip_x = self.lip_y = c
        self.growth = c * self.sigma / math.sqrt(2.0) * math.exp(-0.5)

    def _parts(self, x, y):
        diff = x[:, None, :] - y[None, :, :]
        g = np.exp(-np.sum(diff ** 2, axis=2) / self.sigma ** 2)
        return diff, g

    def value(self, t, x, y):
        diff, g = self._parts(x, y)
        return (-2.0 * self.amplitude / self.sigma ** 2) * g[:, :, None] * diff

    def jacobians(self, t, x, y):
        diff, g = self._parts(x, y)
        d = x.shape[1]
        outer = diff[:, :, :, None] * diff[:, :, None, :]
        inner = np.eye(d) - (2.0 / self.sigma ** 2) * outer
        dx = (-2.0 * self.amplitude / self.sigma ** 2) * g[:, :, None, None] * inner
        return dx, -dx

    def spec(self):
        return {"family": self.name, "sigma": self.sigma,
                "amplitude": self.amplitude}


# -- local drifts ------------------------------------------------------------

class Drift:
    name = "drift"
    lip = 0.0
    growth = 0.0

    def value(self, t, x):
        raise NotImplementedError

    def jacobian(self, t, x):
        raise NotImplementedError

    def spec(self):
        return {"family": self.name}


class ZeroDrift(Drift):
    name = "zero"

    def value(self, t, x):
        return np.zeros_like(x)

    def jacobian(self, t, x):
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))


class ConstantDrift(Drift):
    name = "constant"

    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.growth = float(np.linalg.norm(self.c))

    def value(self, t, x):
        return np.broadcast_to(self.c, x.shape).copy()

    def jacobian(self, t, x):
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))

    def spec(self):
        return {"family": self.name, "c": self.c.tolist()}


class LinearDrift(Drift):
    """``v_l(x) = B x + c``."""

    name = "linear"

    def __init__(self, B, c=None):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        d = self.B.shape[0]
        self.c = np.zeros(d) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
        self.lip = float(np.linalg.norm(self.B, ord=2))
        self.growth = max(self.lip, float(np.linalg.norm(self.c)))

    def value(self, t, x):
        return x @ self.B.T + self.c

    def jacobian(self, t, x):
        return np.broadcast_to(self.B, (x.shape[0],) + self.B.shape).copy()

    def spec(self):
        return {"family": self.name, "B": self.B.tolist(), "c": self.c.tolist()}


KERNELS = {"zero": ZeroKernel, "linear_attraction": LinearAttraction,
           "gaussian": GaussianGradient}
DRIFTS = {"zero": ZeroDrift, "constant": ConstantDrift, "linear": LinearDrift}


def make_kernel(family: str, **params) -> Kernel:
    try:
        cls = KERNELS[family]
    except KeyError:
        raise ValueError(f"unknown kernel family {family!r}; "
                         f"available: {', '.join(KERNELS)}") from None
    return cls(**params)


def make_drift(family: str, **params) -> Drift:
    try:
        cls = DRIFTS[family]
    except KeyError:
        raise ValueError(f"unknown drift family {family!r}; "
                         f"available: {', '.join(DRIFTS)}") from None
    return cls(**params)


def kernel_jacobians(kernel: Kernel, t, x, y):
    """Jacobians of ``H`` at a single pair of points, as two d x d matrices."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    dx, dy = kernel.jacobians(t, x, y)
    return dx[0, 0], dy[0, 0]


@dataclass
class NonlocalField:
    """``v[mu](t, x) = (H(t) * mu)(x) + v_l(t, x)``.

    ``gamma`` optionally overrides the measure-derivative kernel
    ``Gamma_(t,z)(y)``; by default it is ``D_y H(t, z, y)``.
    """

    kernel: Kernel
    drift: Drift = None
    gamma: Optional[Callable] = None

    def __post_init__(self):
        if self.drift is None:
            self.drift = ZeroDrift()

    @property
    def lipschitz_bounds(self):
        """``(L1, L2, M)``: Lipschitz in x, Lipschitz in W_1, growth."""
        L1 = self.kernel.lip_x + self.drift.lip
        L2 = self.kernel.lip_y
        M = self.kernel.growth + self.drift.growth
        return L1, L2, M

    @property
    def is_interacting(self) -> bool:
        return not isinstance(self.kernel, ZeroKernel) or self.gamma is not None

    def velocity(self, t, x, y, w):
        """Field generated by the cloud ``(y, w)`` evaluated at points ``x``."""
        return self.kernel.convolve(t, x, y, w) + self.drift.value(t, x)

    def dx_velocity(self, t, x, y, w):
        return self.kernel.convolve_dx(t, x, y, w) + self.drift.jacobian(t, x)

    def measure_derivative(self, t, z, y):
        """``Gamma_(t, z_i)(y_j)`` as an ``(n, m, d, d)`` array."""
        if self.gamma is not None:
            return self.gamma(t, z, y)
        return self.kernel.jacobians(t, z, y)[1]

    def spec(self):
        return {"kernel": self.kernel.spec(), "drift": self.drift.spec()}


def eval_velocity(field: NonlocalField, control: Optional[ControlField],
                  mu: EmpiricalMeasure, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    v = field.velocity(t, pts, mu.points, mu.weights)
    if control is not None:
        v = v + control.value(pts)
    return v[0] if single else v


# -- trajectories ------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Particle positions on a uniform time grid.

    ``midpoints[s]`` holds cubic Hermite estimates of the positions at
    ``times[s] + dt/2``; later linear passes evaluate their RK4 half-stages
    there.
    """

    times: np.ndarray
    positions: np.ndarray          # (N+1, n, d)
    weights: np.ndarray            # (n,)
    midpoints: np.ndarray          # (N, n, d)
    step_control: np.ndarray       # (N,) control interval index of each step
    jacobians: Optional[np.ndarray] = None   # (N+1, n, d, d)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def states(self):
        return [EmpiricalMeasure(x, self.weights) for x in self.positions]

    def state(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.positions[k], self.weights)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is off the grid."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the simulation grid")
        return k


def step_grid(T: float, dt: float, u: Optional[ControlSignal]):
    """Uniform grid on [0, T] aligned with the control switching times."""
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt={dt} does not divide the horizon T={T}")
    times = np.linspace(0.0, T, n_steps + 1)
    if u is None:
        return times, np.zeros(n_steps, dtype=int)
    if abs(u.T - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"control horizon {u.T} differs from T={T}")
    for a, b in zip(u.time_grid[:-1], u.time_grid[1:]):
        q = (b - a) / dt
        if abs(q - round(q)) > 1e-6:
            raise ValueError(
                f"dt={dt} does not divide control interval [{a}, {b}]")
    mids = times[:-1] + 0.5 * dt
    idx = np.searchsorted(u.time_grid, mids, side="right") - 1
    return times, np.clip(idx, 0, u.n_intervals - 1)


def support_bound(field: NonlocalField, u: Optional[ControlSignal],
                  mu0: EmpiricalMeasure, T: float) -> float:
    """Gronwall radius ``(R0 + 1) exp((M + L_U) T)`` containing the flow."""
    _, _, M = field.lipschitz_bounds
    L_U = 0.0
    if u is not None:
        L_U = max(_control_growth(f) for f in u.fields)
    # capped so that huge controls give a huge (not overflowing) radius
    return (support_radius(mu0) + 1.0) * math.exp(min((M + L_U) * T, 700.0))


def _control_growth(omega: ControlField) -> float:
    """Constant c with ``|omega(x)| <= c (1 + |x|)``, capped by L_U."""
    basis = omega.basis
    name = basis.name
    if name == "affine":
        A, b = basis.split(omega.theta)
        g = max(np.linalg.norm(A, ord=2), np.linalg.norm(b))
    elif name == "constant":
        g = np.linalg.norm(omega.theta)
    else:
        # bounded features (|Phi_p| <= 1)
        g = np.sum(np.abs(omega.theta))
    return float(min(g, omega.c1_bound))


def control_lipschitz(omega: ControlField, radius: float) -> float:
    if omega.basis.name == "affine":
        A, _ = omega.basis.split(omega.theta)
        return float(np.linalg.norm(A, ord=2))
    if omega.basis.name == "constant":
        return 0.0
    from .controls import _ball_samples
    jac = omega.jacobian(_ball_samples(omega.dim, radius))
    return float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))))


def _rhs(field, omega, t, x, w):
    v = field.velocity(t, x, x, w)
    if omega is not None:
        v = v + omega.value(x)
    return v


def _rhs_jac(field, omega, t, x, w):
    J = field.dx_velocity(t, x, x, w)
    if omega is not None:
        J = J + omega.jacobian(x)
    return J


def simulate(field: NonlocalField, u: Optional[ControlSignal],
             mu0: EmpiricalMeasure, T: float, dt: float = 1e-3,
             with_jacobians: bool = False) -> Trajectory:
    """Integrate the coupled particle system with fixed-step RK4.

    With ``with_jacobians`` the frozen-measure variational equation
    ``dW_i/dt = D_x(v[mu(t)] + u)(t, x_i) W_i``, ``W_i(0) = I`` is integrated
    alongside the positions.
    """
    times, ctrl = step_grid(T, dt, u)
    w = mu0.weights
    x = mu0.points.copy()
    n, d = x.shape
    n_steps = times.shape[0] - 1
    R_T = support_bound(field, u, mu0, T)
    limit = BLOWUP_FACTOR * R_T

    pos = np.empty((n_steps + 1, n, d))
    mids = np.empty((n_steps, n, d))
    pos[0] = x
    jacs = None
    if with_jacobians:
        jacs = np.empty((n_steps + 1, n, d, d))
        W = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        jacs[0] = W

    k1 = None
    for s in range(n_steps):
        t = times[s]
        h = times[s + 1] - t
        omega = u.fields[ctrl[s]] if u is not None else None
        if k1 is None:
            k1 = _rhs(field, omega, t, x, w)
        x2 = x + 0.5 * h * k1
        k2 = _rhs(field, omega, t + 0.5 * h, x2, w)
        x3 = x + 0.5 * h * k2
        k3 = _rhs(field, omega, t + 0.5 * h, x3, w)
        x4 = x + h * k3
        k4 = _rhs(field, omega, t + h, x4, w)
        if with_jacobians:
            J1 = _rhs_jac(field, omega, t, x, w)
            J2 = _rhs_jac(field, omega, t + 0.5 * h, x2, w)
            J3 = _rhs_jac(field, omega, t + 0.5 * h, x3, w)
            J4 = _rhs_jac(field, omega, t + h, x4, w)
            m1 = J1 @ W
            m2 = J2 @ (W + 0.5 * h * m1)
            m3 = J3 @ (W + 0.5 * h * m2)
            m4 = J4 @ (W + h * m3)
            W = W + (h / 6.0) * (m1 + 2 * m2 + 2 * m3 + m4)
            jacs[s + 1] = W
        x_new = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x_new)) or np.max(np.abs(x_new)) > limit:
            raise SimulationError(
                f"particles left the ball of radius {limit:.3g} at t={times[s + 1]:.6g}")
        f_end = _rhs(field, omega, t + h, x_new, w)
        mids[s] = 0.5 * (x + x_new) + (h / 8.0) * (k1 - f_end)
        x = x_new
        pos[s + 1] = x
        if s + 1 < n_steps and ctrl[s + 1] == ctrl[s]:
            k1 = f_end
        else:
            k1 = None

    for arr in (pos, mids):
        arr.setflags(write=False)
    return Trajectory(times, pos, w, mids, ctrl, jacs)


def jacobian_flow(field, u, mu0, T, dt=1e-3) -> np.ndarray:
    """Per-particle frozen-measure Jacobians ``D_x Phi_(0,t)`` on the grid."""
    return simulate(field, u, mu0, T, dt, with_jacobians=True).jacobians


def contractivity_check(field: NonlocalField, u: Optional[ControlSignal],
                        mu0: EmpiricalMeasure, nu0: EmpiricalMeasure,
                        T: float, dt: float = 1e-3, every: int = 1):
    """Ratio curve ``W_1(mu(t), nu(t)) / W_1(mu0, nu0)`` and its envelope.

    Returns ``(times, ratio, envelope)`` where the envelope is
    ``exp((L1 + 2 L2) t)`` with ``L1`` including the control's Lipschitz
    constant on the working ball.
    """
    d0 = w1(mu0, nu0)
    if d0 <= 1e-14:
        raise ValueError("initial measures coincide; ratio undefined")
    ta = simulate(field, u, mu0, T, dt)
    tb = simulate(field, u, nu0, T, dt)
    L1, L2, _ = field.lipschitz_bounds
    if u is not None:
        R = max(support_bound(field, u, mu0, T), support_bound(field, u, nu0, T))
        L1 += max(control_lipschitz(f, R) for f in u.fields)
    idx = np.arange(0, ta.n_steps + 1, every)
    if idx[-1] != ta.n_steps:
        idx = np.append(idx, ta.n_steps)
    ratio = np.array([w1(ta.state(k), tb.state(k)) / d0 for k in idx])
    times = ta.times[idx]
    return times, ratio, np.exp((L1 + 2.0 * L2) * times)
